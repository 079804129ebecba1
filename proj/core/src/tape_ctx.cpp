#include "cfp/context.hpp"

namespace cfp {

namespace {

std::shared_ptr<const Tensor> share(Tensor t) { return std::make_shared<const Tensor>(std::move(t)); }

using Sink = std::function<void(std::size_t, Tensor&&)>;

} // namespace

Var TapeCtx::conv2d(const V& x, const V& w, const std::optional<V>& b, const kernels::Conv2dGeom& g) {
    auto y = share(kernels::conv2d<float>(x.t(), w.t(), b ? &b->t() : nullptr, g));
    auto xv = x.value;
    auto wv = w.value;
    bool nx = x.recorded(), nw = w.recorded(), nb = b && b->recorded();
    std::vector<const Var*> ins{&x, &w};
    if (b) ins.push_back(&*b);
    return tape_.record("conv2d", ins, y, [=](const Tensor& gy, const Sink& sink) {
        Tensor gx, gw, gb;
        kernels::conv2d_backward<float>(gy, *xv, *wv, g, nx ? &gx : nullptr, nw ? &gw : nullptr,
                                        nb ? &gb : nullptr);
        if (nx) sink(0, std::move(gx));
        if (nw) sink(1, std::move(gw));
        if (nb) sink(2, std::move(gb));
    });
}

Var TapeCtx::linear(const V& x, const V& w, const std::optional<V>& b) {
    auto y = share(kernels::linear<float>(x.t(), w.t(), b ? &b->t() : nullptr));
    auto xv = x.value;
    auto wv = w.value;
    bool nx = x.recorded(), nw = w.recorded(), nb = b && b->recorded();
    std::vector<const Var*> ins{&x, &w};
    if (b) ins.push_back(&*b);
    return tape_.record("linear", ins, y, [=](const Tensor& gy, const Sink& sink) {
        Tensor gx, gw, gb;
        kernels::linear_backward<float>(gy, *xv, *wv, nx ? &gx : nullptr, nw ? &gw : nullptr,
                                        nb ? &gb : nullptr);
        if (nx) sink(0, std::move(gx));
        if (nw) sink(1, std::move(gw));
        if (nb) sink(2, std::move(gb));
    });
}

Var TapeCtx::group_norm(const V& x, int groups, const V& gamma, const V& beta, float eps) {
    auto y = share(kernels::group_norm<float>(x.t(), groups, gamma.t(), beta.t(), eps));
    auto xv = x.value;
    auto gv = gamma.value;
    bool nx = x.recorded(), ng = gamma.recorded(), nb = beta.recorded();
    return tape_.record("group_norm", {&x, &gamma, &beta}, y, [=](const Tensor& gy, const Sink& sink) {
        Tensor gx, gg, gb;
        kernels::group_norm_backward<float>(gy, *xv, groups, *gv, eps, nx ? &gx : nullptr,
                                            ng ? &gg : nullptr, nb ? &gb : nullptr);
        if (nx) sink(0, std::move(gx));
        if (ng) sink(1, std::move(gg));
        if (nb) sink(2, std::move(gb));
    });
}

Var TapeCtx::batch_norm_infer(const V& x, const V& mean, const V& var, const V& gamma, const V& beta,
                              float eps) {
    auto y = share(kernels::batch_norm_infer<float>(x.t(), mean.t(), var.t(), gamma.t(), beta.t(), eps));
    auto xv = x.value;
    auto mv = mean.value;
    auto vv = var.value;
    auto gv = gamma.value;
    bool nx = x.recorded(), ng = gamma.recorded(), nb = beta.recorded();
    return tape_.record("batch_norm_infer", {&x, &mean, &var, &gamma, &beta}, y,
                        [=](const Tensor& gy, const Sink& sink) {
                            Tensor gx, gg, gb;
                            kernels::batch_norm_infer_backward<float>(gy, *xv, *mv, *vv, *gv, eps,
                                                                      nx ? &gx : nullptr, ng ? &gg : nullptr,
                                                                      nb ? &gb : nullptr);
                            if (nx) sink(0, std::move(gx));
                            if (ng) sink(3, std::move(gg));
                            if (nb) sink(4, std::move(gb));
                        });
}

Var TapeCtx::act(const V& x, kernels::Act kind) {
    auto y = share(kernels::activation<float>(x.t(), kind));
    auto xv = x.value;
    bool nx = x.recorded();
    return tape_.record(kernels::act_name(kind), {&x}, y, [=](const Tensor& gy, const Sink& sink) {
        if (nx) sink(0, kernels::activation_backward<float>(gy, *xv, kind));
    });
}

Var TapeCtx::softmax_axis(const V& x, int axis) {
    auto y = share(kernels::softmax_axis<float>(x.t(), axis));
    bool nx = x.recorded();
    return tape_.record("softmax_axis", {&x}, y, [=](const Tensor& gy, const Sink& sink) {
        if (nx) sink(0, kernels::softmax_axis_backward<float>(gy, *y, axis));
    });
}

Var TapeCtx::upsample2x(const V& x) {
    auto y = share(kernels::upsample_nearest2x<float>(x.t()));
    bool nx = x.recorded();
    return tape_.record("upsample_nearest2x", {&x}, y, [=](const Tensor& gy, const Sink& sink) {
        if (nx) sink(0, kernels::upsample_nearest2x_backward<float>(gy));
    });
}

Var TapeCtx::concat_channels(const std::vector<V>& xs) {
    std::vector<const Tensor*> ptrs;
    std::vector<const Var*> ins;
    std::vector<std::int64_t> offsets;
    std::vector<bool> needs;
    std::int64_t off = 0;
    for (const auto& v : xs) {
        ptrs.push_back(&v.t());
        ins.push_back(&v);
        offsets.push_back(off);
        needs.push_back(v.recorded());
        off += v.shape()[1];
    }
    auto y = share(kernels::concat_channels<float>(ptrs));
    std::vector<std::int64_t> widths;
    for (const auto& v : xs) widths.push_back(v.shape()[1]);
    return tape_.record("concat_channels", ins, y, [=](const Tensor& gy, const Sink& sink) {
        for (std::size_t i = 0; i < offsets.size(); ++i)
            if (needs[i])
                sink(i, kernels::slice_channels<float>(gy, offsets[i], offsets[i] + widths[i]));
    });
}

Var TapeCtx::slice_channels(const V& x, std::int64_t c0, std::int64_t c1) {
    auto y = share(kernels::slice_channels<float>(x.t(), c0, c1));
    Shape xshape = x.shape();
    bool nx = x.recorded();
    return tape_.record("slice_channels", {&x}, y, [=](const Tensor& gy, const Sink& sink) {
        if (nx) sink(0, kernels::slice_channels_backward<float>(gy, xshape, c0));
    });
}

Var TapeCtx::add(const V& x, const V& y) {
    auto z = share(kernels::add<float>(x.t(), y.t()));
    bool nx = x.recorded(), ny = y.recorded();
    return tape_.record("add", {&x, &y}, z, [=](const Tensor& gy, const Sink& sink) {
        if (nx) sink(0, Tensor(gy));
        if (ny) sink(1, Tensor(gy));
    });
}

Var TapeCtx::mul(const V& x, const V& y) {
    auto z = share(kernels::mul<float>(x.t(), y.t()));
    auto xv = x.value;
    auto yv = y.value;
    bool nx = x.recorded(), ny = y.recorded();
    return tape_.record("mul", {&x, &y}, z, [=](const Tensor& gy, const Sink& sink) {
        if (nx) sink(0, kernels::mul<float>(gy, *yv));
        if (ny) sink(1, kernels::mul<float>(gy, *xv));
    });
}

Var TapeCtx::channel_scale(const V& x, const V& w) {
    auto z = share(kernels::channel_scale<float>(x.t(), w.t()));
    auto xv = x.value;
    auto wv = w.value;
    bool nx = x.recorded(), nw = w.recorded();
    return tape_.record("channel_scale", {&x, &w}, z, [=](const Tensor& gy, const Sink& sink) {
        Tensor gx, gw;
        kernels::channel_scale_backward<float>(gy, *xv, *wv, nx ? &gx : nullptr, nw ? &gw : nullptr);
        if (nx) sink(0, std::move(gx));
        if (nw) sink(1, std::move(gw));
    });
}

Var TapeCtx::codebook_aggregate(const V& x, const V& cw, const V& s) {
    Tensor weights;
    auto e = share(kernels::codebook_aggregate<float>(x.t(), cw.t(), s.t(), &weights));
    auto saved = std::make_shared<const Tensor>(std::move(weights));
    auto xv = x.value;
    auto cwv = cw.value;
    auto sv = s.value;
    bool nx = x.recorded(), ncw = cw.recorded(), ns = s.recorded();
    return tape_.record("codebook_aggregate", {&x, &cw, &s}, e, [=](const Tensor& gy, const Sink& sink) {
        Tensor gx, gcw, gs;
        kernels::codebook_aggregate_backward<float>(gy, *xv, *cwv, *sv, *saved, nx ? &gx : nullptr,
                                                    ncw ? &gcw : nullptr, ns ? &gs : nullptr);
        if (nx) sink(0, std::move(gx));
        if (ncw) sink(1, std::move(gcw));
        if (ns) sink(2, std::move(gs));
    });
}

Var TapeCtx::reshape(const V& x, Shape shape) {
    auto y = share(x.t().reshaped(std::move(shape)));
    Shape xshape = x.shape();
    bool nx = x.recorded();
    return tape_.record("reshape", {&x}, y, [=](const Tensor& gy, const Sink& sink) {
        if (nx) sink(0, gy.reshaped(xshape));
    });
}

Var TapeCtx::mean_axis(const V& x, int axis) {
    auto y = share(kernels::mean_axis<float>(x.t(), axis));
    Shape xshape = x.shape();
    bool nx = x.recorded();
    return tape_.record("mean_axis", {&x}, y, [=](const Tensor& gy, const Sink& sink) {
        if (nx) sink(0, kernels::mean_axis_backward<float>(gy, xshape, axis));
    });
}

Var TapeCtx::sum_all(const V& x) {
    auto y = share(kernels::sum_all<float>(x.t()));
    Shape xshape = x.shape();
    bool nx = x.recorded();
    return tape_.record("sum_all", {&x}, y, [=](const Tensor& gy, const Sink& sink) {
        if (nx) sink(0, Tensor::full(xshape, gy[0]));
    });
}

} // namespace cfp
