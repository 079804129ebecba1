#include "cfp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cfp::kernels {

namespace {

template <typename T>
void require_4d(const BasicTensor<T>& t, const char* what) {
    if (t.rank() != 4) throw ShapeError(std::string(what) + " expects a 4-D tensor, got " + shape_str(t.shape()));
}

// Splits a shape around `axis` into [outer, n, inner] extents.
struct AxisSplit {
    std::int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit sp;
    for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
    sp.n = s[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

template <typename T>
T sigmoid_scalar(T v) {
    if (v >= T(0)) {
        T e = std::exp(-v);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(v);
    return e / (T(1) + e);
}

} // namespace

const char* act_name(Act a) {
    switch (a) {
        case Act::relu: return "relu";
        case Act::silu: return "silu";
        case Act::sigmoid: return "sigmoid";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    std::int64_t B, Cin, H, W, Cout, CinG, kh, kw, Ho, Wo;
    int stride, pad, groups;
    std::int64_t cout_per_group;
};

template <typename T>
ConvDims conv_dims(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* bias,
                   const Conv2dGeom& g) {
    require_4d(x, "conv2d input");
    require_4d(w, "conv2d weight");
    ConvDims d;
    d.B = x.dim(0);
    d.Cin = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.Cout = w.dim(0);
    d.CinG = w.dim(1);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = g.stride;
    d.pad = g.padding;
    d.groups = g.groups;
    if (g.stride < 1) throw ShapeError("conv2d stride must be >= 1");
    if (g.padding < 0) throw ShapeError("conv2d padding must be >= 0");
    if (g.groups < 1) throw ShapeError("conv2d groups must be >= 1");
    if (d.Cin % g.groups != 0 || d.Cout % g.groups != 0)
        throw ShapeError("conv2d channels (" + std::to_string(d.Cin) + "->" + std::to_string(d.Cout) +
                         ") not divisible by groups " + std::to_string(g.groups));
    if (d.CinG != d.Cin / g.groups)
        throw ShapeError("conv2d weight expects " + std::to_string(d.CinG) + " input channels per group, input has " +
                         std::to_string(d.Cin / g.groups));
    if (bias && (bias->rank() != 1 || bias->dim(0) != d.Cout))
        throw ShapeError("conv2d bias shape " + shape_str(bias->shape()) + " != [" + std::to_string(d.Cout) + "]");
    std::int64_t hnum = d.H + 2 * d.pad - d.kh;
    std::int64_t wnum = d.W + 2 * d.pad - d.kw;
    if (hnum < 0 || wnum < 0 || hnum % d.stride != 0 || wnum % d.stride != 0)
        throw ShapeError("conv2d output size is not integral for input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(w.shape()) + ", stride " + std::to_string(d.stride) + ", padding " +
                         std::to_string(d.pad));
    d.Ho = hnum / d.stride + 1;
    d.Wo = wnum / d.stride + 1;
    d.cout_per_group = d.Cout / g.groups;
    return d;
}

} // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* bias,
                      const Conv2dGeom& g) {
    ConvDims d = conv_dims(x, w, bias, g);
    require_finite(x, "conv2d input");
    BasicTensor<T> y({d.B, d.Cout, d.Ho, d.Wo});
    auto xd = x.data();
    auto wd = w.data();
    auto yd = y.data();
    for (std::int64_t b = 0; b < d.B; ++b) {
        for (std::int64_t o = 0; o < d.Cout; ++o) {
            std::int64_t grp = o / d.cout_per_group;
            std::int64_t ci0 = grp * d.CinG;
            T bv = bias ? (*bias)[o] : T(0);
            for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
                for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
                    T acc = bv;
                    for (std::int64_t cl = 0; cl < d.CinG; ++cl) {
                        std::int64_t ci = ci0 + cl;
                        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                            std::int64_t ih = oh * d.stride - d.pad + kh;
                            if (ih < 0 || ih >= d.H) continue;
                            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                                std::int64_t iw = ow * d.stride - d.pad + kw;
                                if (iw < 0 || iw >= d.W) continue;
                                acc += wd[((o * d.CinG + cl) * d.kh + kh) * d.kw + kw] *
                                       xd[((b * d.Cin + ci) * d.H + ih) * d.W + iw];
                            }
                        }
                    }
                    yd[((b * d.Cout + o) * d.Ho + oh) * d.Wo + ow] = acc;
                }
            }
        }
    }
    require_finite(y, "conv2d");
    return y;
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x, const BasicTensor<T>& w,
                     const Conv2dGeom& g, BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb) {
    ConvDims d = conv_dims(x, w, static_cast<const BasicTensor<T>*>(nullptr), g);
    if (gy.shape() != Shape{d.B, d.Cout, d.Ho, d.Wo})
        throw ShapeError("conv2d backward: gy shape " + shape_str(gy.shape()) + " unexpected");
    if (gx) *gx = BasicTensor<T>(x.shape());
    if (gw) *gw = BasicTensor<T>(w.shape());
    if (gb) *gb = BasicTensor<T>({d.Cout});
    auto xd = x.data();
    auto wd = w.data();
    auto gyd = gy.data();
    for (std::int64_t b = 0; b < d.B; ++b) {
        for (std::int64_t o = 0; o < d.Cout; ++o) {
            std::int64_t grp = o / d.cout_per_group;
            std::int64_t ci0 = grp * d.CinG;
            for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
                for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
                    T gv = gyd[((b * d.Cout + o) * d.Ho + oh) * d.Wo + ow];
                    if (gb) (*gb)[o] += gv;
                    for (std::int64_t cl = 0; cl < d.CinG; ++cl) {
                        std::int64_t ci = ci0 + cl;
                        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                            std::int64_t ih = oh * d.stride - d.pad + kh;
                            if (ih < 0 || ih >= d.H) continue;
                            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                                std::int64_t iw = ow * d.stride - d.pad + kw;
                                if (iw < 0 || iw >= d.W) continue;
                                std::int64_t xi = ((b * d.Cin + ci) * d.H + ih) * d.W + iw;
                                std::int64_t wi = ((o * d.CinG + cl) * d.kh + kh) * d.kw + kw;
                                if (gx) (*gx)[xi] += gv * wd[wi];
                                if (gw) (*gw)[wi] += gv * xd[xi];
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

namespace {

template <typename T>
std::int64_t linear_rows(const BasicTensor<T>& x, const BasicTensor<T>& w) {
    if (w.rank() != 2) throw ShapeError("linear weight must be 2-D, got " + shape_str(w.shape()));
    if (x.rank() < 1) throw ShapeError("linear input must have rank >= 1");
    std::int64_t din = x.dim(x.rank() - 1);
    if (din != w.dim(1))
        throw ShapeError("linear: input last dim " + std::to_string(din) + " != weight in dim " +
                         std::to_string(w.dim(1)));
    return x.numel() / din;
}

} // namespace

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* bias) {
    std::int64_t M = linear_rows(x, w);
    std::int64_t Din = w.dim(1), Dout = w.dim(0);
    if (bias && (bias->rank() != 1 || bias->dim(0) != Dout))
        throw ShapeError("linear bias shape " + shape_str(bias->shape()) + " != [" + std::to_string(Dout) + "]");
    Shape out_shape = x.shape();
    out_shape.back() = Dout;
    BasicTensor<T> y(out_shape);
    auto xd = x.data();
    auto wd = w.data();
    auto yd = y.data();
    for (std::int64_t m = 0; m < M; ++m) {
        for (std::int64_t o = 0; o < Dout; ++o) {
            T acc = bias ? (*bias)[o] : T(0);
            for (std::int64_t i = 0; i < Din; ++i) acc += xd[m * Din + i] * wd[o * Din + i];
            yd[m * Dout + o] = acc;
        }
    }
    require_finite(y, "linear");
    return y;
}

template <typename T>
void linear_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x, const BasicTensor<T>& w,
                     BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb) {
    std::int64_t M = linear_rows(x, w);
    std::int64_t Din = w.dim(1), Dout = w.dim(0);
    if (gx) *gx = BasicTensor<T>(x.shape());
    if (gw) *gw = BasicTensor<T>(w.shape());
    if (gb) *gb = BasicTensor<T>({Dout});
    auto xd = x.data();
    auto wd = w.data();
    auto gyd = gy.data();
    for (std::int64_t m = 0; m < M; ++m) {
        for (std::int64_t o = 0; o < Dout; ++o) {
            T gv = gyd[m * Dout + o];
            if (gb) (*gb)[o] += gv;
            for (std::int64_t i = 0; i < Din; ++i) {
                if (gx) (*gx)[m * Din + i] += gv * wd[o * Din + i];
                if (gw) (*gw)[o * Din + i] += gv * xd[m * Din + i];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// group_norm
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void gn_check(const BasicTensor<T>& x, int groups, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
              T eps) {
    require_4d(x, "group_norm input");
    std::int64_t C = x.dim(1);
    if (groups < 1 || C % groups != 0)
        throw ShapeError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                         std::to_string(groups));
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw ShapeError("group_norm affine must be [C]");
    if (!(eps > T(0))) throw ShapeError("group_norm eps must be > 0");
}

} // namespace

template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, int groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
    gn_check(x, groups, gamma, beta, eps);
    std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::int64_t cg = C / groups;
    std::int64_t m = cg * H * W;
    BasicTensor<T> y(x.shape());
    auto xd = x.data();
    auto yd = y.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t g = 0; g < groups; ++g) {
            std::int64_t base = (b * C + g * cg) * H * W;
            T mean = T(0);
            for (std::int64_t i = 0; i < m; ++i) mean += xd[base + i];
            mean /= static_cast<T>(m);
            T var = T(0);
            for (std::int64_t i = 0; i < m; ++i) {
                T dif = xd[base + i] - mean;
                var += dif * dif;
            }
            var /= static_cast<T>(m);
            T inv = T(1) / std::sqrt(var + eps);
            for (std::int64_t c = 0; c < cg; ++c) {
                T ga = gamma[g * cg + c];
                T be = beta[g * cg + c];
                std::int64_t cb = base + c * H * W;
                for (std::int64_t i = 0; i < H * W; ++i)
                    yd[cb + i] = (xd[cb + i] - mean) * inv * ga + be;
            }
        }
    }
    require_finite(y, "group_norm");
    return y;
}

template <typename T>
void group_norm_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x, int groups,
                         const BasicTensor<T>& gamma, T eps, BasicTensor<T>* gx,
                         BasicTensor<T>* ggamma, BasicTensor<T>* gbeta) {
    std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::int64_t cg = C / groups;
    std::int64_t m = cg * H * W;
    if (gx) *gx = BasicTensor<T>(x.shape());
    if (ggamma) *ggamma = BasicTensor<T>({C});
    if (gbeta) *gbeta = BasicTensor<T>({C});
    auto xd = x.data();
    auto gyd = gy.data();
    std::vector<T> xhat(static_cast<std::size_t>(m));
    std::vector<T> ghat(static_cast<std::size_t>(m));
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t g = 0; g < groups; ++g) {
            std::int64_t base = (b * C + g * cg) * H * W;
            T mean = T(0);
            for (std::int64_t i = 0; i < m; ++i) mean += xd[base + i];
            mean /= static_cast<T>(m);
            T var = T(0);
            for (std::int64_t i = 0; i < m; ++i) {
                T dif = xd[base + i] - mean;
                var += dif * dif;
            }
            var /= static_cast<T>(m);
            T inv = T(1) / std::sqrt(var + eps);
            for (std::int64_t c = 0; c < cg; ++c) {
                for (std::int64_t i = 0; i < H * W; ++i) {
                    std::int64_t j = c * H * W + i;
                    xhat[static_cast<std::size_t>(j)] = (xd[base + j] - mean) * inv;
                    ghat[static_cast<std::size_t>(j)] = gyd[base + j] * gamma[g * cg + c];
                }
            }
            if (ggamma || gbeta) {
                for (std::int64_t c = 0; c < cg; ++c) {
                    for (std::int64_t i = 0; i < H * W; ++i) {
                        std::int64_t j = c * H * W + i;
                        if (ggamma) (*ggamma)[g * cg + c] += gyd[base + j] * xhat[static_cast<std::size_t>(j)];
                        if (gbeta) (*gbeta)[g * cg + c] += gyd[base + j];
                    }
                }
            }
            if (gx) {
                T gmean = T(0), gdot = T(0);
                for (std::int64_t j = 0; j < m; ++j) {
                    gmean += ghat[static_cast<std::size_t>(j)];
                    gdot += ghat[static_cast<std::size_t>(j)] * xhat[static_cast<std::size_t>(j)];
                }
                gmean /= static_cast<T>(m);
                gdot /= static_cast<T>(m);
                for (std::int64_t j = 0; j < m; ++j)
                    (*gx)[base + j] = inv * (ghat[static_cast<std::size_t>(j)] - gmean -
                                             xhat[static_cast<std::size_t>(j)] * gdot);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// batch_norm_infer
// ---------------------------------------------------------------------------

namespace {

template <typename T>
std::int64_t bn_check(const BasicTensor<T>& x, const BasicTensor<T>& mean, const BasicTensor<T>& var,
                      const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps) {
    if (x.rank() < 2) throw ShapeError("batch_norm expects rank >= 2, got " + shape_str(x.shape()));
    std::int64_t C = x.dim(1);
    for (const auto* t : {&mean, &var, &gamma, &beta})
        if (t->rank() != 1 || t->dim(0) != C)
            throw ShapeError("batch_norm statistics/affine must be [C=" + std::to_string(C) + "], got " +
                             shape_str(t->shape()));
    if (!(eps > T(0))) throw ShapeError("batch_norm eps must be > 0");
    return C;
}

} // namespace

template <typename T>
BasicTensor<T> batch_norm_infer(const BasicTensor<T>& x, const BasicTensor<T>& mean,
                                const BasicTensor<T>& var, const BasicTensor<T>& gamma,
                                const BasicTensor<T>& beta, T eps) {
    std::int64_t C = bn_check(x, mean, var, gamma, beta, eps);
    std::int64_t B = x.dim(0);
    std::int64_t inner = x.numel() / (B * C);
    BasicTensor<T> y(x.shape());
    auto xd = x.data();
    auto yd = y.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            T inv = T(1) / std::sqrt(var[c] + eps);
            T ga = gamma[c], be = beta[c], mu = mean[c];
            std::int64_t base = (b * C + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) yd[base + i] = (xd[base + i] - mu) * inv * ga + be;
        }
    }
    require_finite(y, "batch_norm_infer");
    return y;
}

template <typename T>
void batch_norm_infer_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x,
                               const BasicTensor<T>& mean, const BasicTensor<T>& var,
                               const BasicTensor<T>& gamma, T eps, BasicTensor<T>* gx,
                               BasicTensor<T>* ggamma, BasicTensor<T>* gbeta) {
    std::int64_t B = x.dim(0), C = x.dim(1);
    std::int64_t inner = x.numel() / (B * C);
    if (gx) *gx = BasicTensor<T>(x.shape());
    if (ggamma) *ggamma = BasicTensor<T>({C});
    if (gbeta) *gbeta = BasicTensor<T>({C});
    auto xd = x.data();
    auto gyd = gy.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            T inv = T(1) / std::sqrt(var[c] + eps);
            std::int64_t base = (b * C + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
                T gv = gyd[base + i];
                if (gx) (*gx)[base + i] = gv * gamma[c] * inv;
                if (ggamma) (*ggamma)[c] += gv * (xd[base + i] - mean[c]) * inv;
                if (gbeta) (*gbeta)[c] += gv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// activations / elementwise
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Act kind) {
    BasicTensor<T> y(x.shape());
    auto xd = x.data();
    auto yd = y.data();
    switch (kind) {
        case Act::relu:
            for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] > T(0) ? xd[i] : T(0);
            break;
        case Act::silu:
            for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] * sigmoid_scalar(xd[i]);
            break;
        case Act::sigmoid:
            for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = sigmoid_scalar(xd[i]);
            break;
    }
    require_finite(y, act_name(kind));
    return y;
}

template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x, Act kind) {
    BasicTensor<T> gx(x.shape());
    auto xd = x.data();
    auto gd = gy.data();
    auto od = gx.data();
    switch (kind) {
        case Act::relu:
            for (std::size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > T(0) ? gd[i] : T(0);
            break;
        case Act::silu:
            for (std::size_t i = 0; i < xd.size(); ++i) {
                T s = sigmoid_scalar(xd[i]);
                od[i] = gd[i] * (s + xd[i] * s * (T(1) - s));
            }
            break;
        case Act::sigmoid:
            for (std::size_t i = 0; i < xd.size(); ++i) {
                T s = sigmoid_scalar(xd[i]);
                od[i] = gd[i] * s * (T(1) - s);
            }
            break;
    }
    return gx;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& x, const BasicTensor<T>& y) {
    if (!x.same_shape(y))
        throw ShapeError("add: shapes " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    BasicTensor<T> z(x.shape());
    auto xd = x.data();
    auto yd = y.data();
    auto zd = z.data();
    for (std::size_t i = 0; i < xd.size(); ++i) zd[i] = xd[i] + yd[i];
    require_finite(z, "add");
    return z;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& x, const BasicTensor<T>& y) {
    if (!x.same_shape(y))
        throw ShapeError("mul: shapes " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    BasicTensor<T> z(x.shape());
    auto xd = x.data();
    auto yd = y.data();
    auto zd = z.data();
    for (std::size_t i = 0; i < xd.size(); ++i) zd[i] = xd[i] * yd[i];
    require_finite(z, "mul");
    return z;
}

namespace {

template <typename T>
void channel_scale_check(const BasicTensor<T>& x, const BasicTensor<T>& w) {
    if (x.rank() < 2) throw ShapeError("channel_scale expects rank >= 2");
    std::int64_t C = x.dim(1);
    bool per_batch = w.rank() == 2;
    if (per_batch) {
        if (w.dim(0) != x.dim(0) || w.dim(1) != C)
            throw ShapeError("channel_scale weights " + shape_str(w.shape()) + " != [B,C]");
    } else if (w.rank() != 1 || w.dim(0) != C) {
        throw ShapeError("channel_scale weights " + shape_str(w.shape()) + " != [C=" + std::to_string(C) + "]");
    }
}

} // namespace

template <typename T>
BasicTensor<T> channel_scale(const BasicTensor<T>& x, const BasicTensor<T>& w) {
    channel_scale_check(x, w);
    std::int64_t B = x.dim(0), C = x.dim(1);
    std::int64_t inner = x.numel() / (B * C);
    bool per_batch = w.rank() == 2;
    BasicTensor<T> y(x.shape());
    auto xd = x.data();
    auto yd = y.data();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            T wv = per_batch ? w[b * C + c] : w[c];
            std::int64_t base = (b * C + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) yd[base + i] = xd[base + i] * wv;
        }
    require_finite(y, "channel_scale");
    return y;
}

template <typename T>
void channel_scale_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x,
                            const BasicTensor<T>& w, BasicTensor<T>* gx, BasicTensor<T>* gw) {
    channel_scale_check(x, w);
    std::int64_t B = x.dim(0), C = x.dim(1);
    std::int64_t inner = x.numel() / (B * C);
    bool per_batch = w.rank() == 2;
    if (gx) *gx = BasicTensor<T>(x.shape());
    if (gw) *gw = BasicTensor<T>(w.shape());
    auto xd = x.data();
    auto gd = gy.data();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            T wv = per_batch ? w[b * C + c] : w[c];
            std::int64_t base = (b * C + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
                if (gx) (*gx)[base + i] = gd[base + i] * wv;
                if (gw) (*gw)[per_batch ? b * C + c : c] += gd[base + i] * xd[base + i];
            }
        }
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax_axis(const BasicTensor<T>& x, int axis) {
    AxisSplit sp = split_axis(x.shape(), axis);
    BasicTensor<T> y(x.shape());
    auto xd = x.data();
    auto yd = y.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            std::int64_t base = o * sp.n * sp.inner + in;
            T mx = xd[base];
            for (std::int64_t k = 1; k < sp.n; ++k) mx = std::max(mx, xd[base + k * sp.inner]);
            T denom = T(0);
            for (std::int64_t k = 0; k < sp.n; ++k) {
                T e = std::exp(xd[base + k * sp.inner] - mx);
                yd[base + k * sp.inner] = e;
                denom += e;
            }
            for (std::int64_t k = 0; k < sp.n; ++k) yd[base + k * sp.inner] /= denom;
        }
    }
    require_finite(y, "softmax_axis");
    return y;
}

template <typename T>
BasicTensor<T> softmax_axis_backward(const BasicTensor<T>& gy, const BasicTensor<T>& y, int axis) {
    AxisSplit sp = split_axis(y.shape(), axis);
    BasicTensor<T> gx(y.shape());
    auto yd = y.data();
    auto gd = gy.data();
    auto od = gx.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            std::int64_t base = o * sp.n * sp.inner + in;
            T dot = T(0);
            for (std::int64_t k = 0; k < sp.n; ++k) dot += gd[base + k * sp.inner] * yd[base + k * sp.inner];
            for (std::int64_t k = 0; k < sp.n; ++k) {
                std::int64_t j = base + k * sp.inner;
                od[j] = yd[j] * (gd[j] - dot);
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// shape movers
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x) {
    require_4d(x, "upsample_nearest2x input");
    std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    BasicTensor<T> y({B, C, 2 * H, 2 * W});
    auto xd = x.data();
    auto yd = y.data();
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        std::int64_t xb = bc * H * W;
        std::int64_t yb = bc * 4 * H * W;
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w) {
                T v = xd[xb + h * W + w];
                std::int64_t r0 = yb + (2 * h) * 2 * W + 2 * w;
                std::int64_t r1 = yb + (2 * h + 1) * 2 * W + 2 * w;
                yd[r0] = v;
                yd[r0 + 1] = v;
                yd[r1] = v;
                yd[r1 + 1] = v;
            }
    }
    return y;
}

template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& gy) {
    require_4d(gy, "upsample_nearest2x backward input");
    std::int64_t B = gy.dim(0), C = gy.dim(1), H2 = gy.dim(2), W2 = gy.dim(3);
    if (H2 % 2 != 0 || W2 % 2 != 0) throw ShapeError("upsample backward expects even spatial dims");
    std::int64_t H = H2 / 2, W = W2 / 2;
    BasicTensor<T> gx({B, C, H, W});
    auto gd = gy.data();
    auto od = gx.data();
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        std::int64_t xb = bc * H * W;
        std::int64_t yb = bc * H2 * W2;
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w) {
                std::int64_t r0 = yb + (2 * h) * W2 + 2 * w;
                std::int64_t r1 = yb + (2 * h + 1) * W2 + 2 * w;
                od[xb + h * W + w] = gd[r0] + gd[r0 + 1] + gd[r1] + gd[r1 + 1];
            }
    }
    return gx;
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    for (const auto* t : xs) require_4d(*t, "concat_channels input");
    std::int64_t B = xs[0]->dim(0), H = xs[0]->dim(2), W = xs[0]->dim(3);
    std::int64_t C = 0;
    for (const auto* t : xs) {
        if (t->dim(0) != B || t->dim(2) != H || t->dim(3) != W)
            throw ShapeError("concat_channels: batch/spatial mismatch " + shape_str(t->shape()) + " vs " +
                             shape_str(xs[0]->shape()));
        C += t->dim(1);
    }
    BasicTensor<T> y({B, C, H, W});
    auto yd = y.data();
    std::int64_t hw = H * W;
    for (std::int64_t b = 0; b < B; ++b) {
        std::int64_t c_off = 0;
        for (const auto* t : xs) {
            std::int64_t ci = t->dim(1);
            auto td = t->data();
            for (std::int64_t c = 0; c < ci; ++c) {
                std::int64_t src = (b * ci + c) * hw;
                std::int64_t dst = (b * C + c_off + c) * hw;
                std::copy(td.begin() + src, td.begin() + src + hw, yd.begin() + dst);
            }
            c_off += ci;
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t c0, std::int64_t c1) {
    require_4d(x, "slice_channels input");
    std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (c0 < 0 || c1 > C || c0 >= c1) throw ShapeError("slice_channels: bad range");
    BasicTensor<T> y({B, c1 - c0, H, W});
    auto xd = x.data();
    auto yd = y.data();
    std::int64_t hw = H * W;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = c0; c < c1; ++c) {
            std::int64_t src = (b * C + c) * hw;
            std::int64_t dst = (b * (c1 - c0) + (c - c0)) * hw;
            std::copy(xd.begin() + src, xd.begin() + src + hw, yd.begin() + dst);
        }
    return y;
}

template <typename T>
BasicTensor<T> slice_channels_backward(const BasicTensor<T>& gy, const Shape& xshape, std::int64_t c0) {
    BasicTensor<T> gx(xshape);
    std::int64_t B = xshape[0], C = xshape[1], H = xshape[2], W = xshape[3];
    std::int64_t cs = gy.dim(1);
    auto gd = gy.data();
    auto od = gx.data();
    std::int64_t hw = H * W;
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < cs; ++c) {
            std::int64_t src = (b * cs + c) * hw;
            std::int64_t dst = (b * C + c0 + c) * hw;
            std::copy(gd.begin() + src, gd.begin() + src + hw, od.begin() + dst);
        }
    return gx;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, int axis) {
    AxisSplit sp = split_axis(x.shape(), axis);
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    BasicTensor<T> y(out_shape);
    auto xd = x.data();
    auto yd = y.data();
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            T acc = T(0);
            for (std::int64_t k = 0; k < sp.n; ++k) acc += xd[(o * sp.n + k) * sp.inner + in];
            yd[o * sp.inner + in] = acc / static_cast<T>(sp.n);
        }
    require_finite(y, "mean_axis");
    return y;
}

template <typename T>
BasicTensor<T> mean_axis_backward(const BasicTensor<T>& gy, const Shape& xshape, int axis) {
    AxisSplit sp = split_axis(xshape, axis);
    BasicTensor<T> gx(xshape);
    auto gd = gy.data();
    auto od = gx.data();
    T scale = T(1) / static_cast<T>(sp.n);
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            T gv = gd[o * sp.inner + in] * scale;
            for (std::int64_t k = 0; k < sp.n; ++k) od[(o * sp.n + k) * sp.inner + in] = gv;
        }
    return gx;
}

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
    T acc = T(0);
    for (const T v : x.data()) acc += v;
    BasicTensor<T> y = BasicTensor<T>::scalar(acc);
    require_finite(y, "sum_all");
    return y;
}

// ---------------------------------------------------------------------------
// codebook soft assignment
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void codebook_check(const BasicTensor<T>& x, const BasicTensor<T>& cw, const BasicTensor<T>& s) {
    require_4d(x, "codebook input");
    if (cw.rank() != 2) throw ShapeError("codewords must be [K, C]");
    if (s.rank() != 1 || s.dim(0) != cw.dim(0))
        throw ShapeError("scaling factors must be [K=" + std::to_string(cw.dim(0)) + "]");
    if (cw.dim(0) < 1) throw ShapeError("codebook needs K >= 1");
    if (cw.dim(1) != x.dim(1))
        throw ShapeError("codeword dim " + std::to_string(cw.dim(1)) + " != feature channels " +
                         std::to_string(x.dim(1)));
}

} // namespace

template <typename T>
BasicTensor<T> codebook_aggregate(const BasicTensor<T>& x, const BasicTensor<T>& codewords,
                                  const BasicTensor<T>& scales, BasicTensor<T>* save_weights) {
    codebook_check(x, codewords, scales);
    std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::int64_t N = H * W, K = codewords.dim(0);
    BasicTensor<T> e({B, K, C});
    if (save_weights) *save_weights = BasicTensor<T>({B, N, K});
    auto xd = x.data();
    auto cwd = codewords.data();
    auto ed = e.data();
    std::vector<T> logits(static_cast<std::size_t>(K));
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t i = 0; i < N; ++i) {
            // pixel i of sample b: channel c lives at stride N in NCHW
            std::int64_t xb = b * C * N + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::int64_t k = 0; k < K; ++k) {
                T d2 = T(0);
                for (std::int64_t c = 0; c < C; ++c) {
                    T r = xd[xb + c * N] - cwd[k * C + c];
                    d2 += r * r;
                }
                logits[static_cast<std::size_t>(k)] = -scales[k] * d2;
                mx = std::max(mx, logits[static_cast<std::size_t>(k)]);
            }
            T denom = T(0);
            for (std::int64_t k = 0; k < K; ++k) {
                T ev = std::exp(logits[static_cast<std::size_t>(k)] - mx);
                logits[static_cast<std::size_t>(k)] = ev;
                denom += ev;
            }
            for (std::int64_t k = 0; k < K; ++k) {
                T wk = logits[static_cast<std::size_t>(k)] / denom;
                if (save_weights) (*save_weights)[(b * N + i) * K + k] = wk;
                std::int64_t eb = (b * K + k) * C;
                for (std::int64_t c = 0; c < C; ++c) ed[eb + c] += wk * (xd[xb + c * N] - cwd[k * C + c]);
            }
        }
    }
    require_finite(e, "codebook_aggregate");
    return e;
}

template <typename T>
BasicTensor<T> codebook_assignment_weights(const BasicTensor<T>& x, const BasicTensor<T>& codewords,
                                           const BasicTensor<T>& scales) {
    BasicTensor<T> w;
    codebook_aggregate(x, codewords, scales, &w);
    return w;
}

template <typename T>
void codebook_aggregate_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x,
                                 const BasicTensor<T>& codewords, const BasicTensor<T>& scales,
                                 const BasicTensor<T>& weights, BasicTensor<T>* gx,
                                 BasicTensor<T>* gcw, BasicTensor<T>* gs) {
    codebook_check(x, codewords, scales);
    std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::int64_t N = H * W, K = codewords.dim(0);
    if (gx) *gx = BasicTensor<T>(x.shape());
    if (gcw) *gcw = BasicTensor<T>(codewords.shape());
    if (gs) *gs = BasicTensor<T>(scales.shape());
    auto xd = x.data();
    auto cwd = codewords.data();
    auto gd = gy.data();
    auto wd = weights.data();
    // Per pixel: A_k = G_k . r_k, B_k = w_k (A_k - sum_j w_j A_j), then
    //   dL/dr_k = w_k G_k - 2 s_k B_k r_k,
    //   dL/ds_k -= d_k B_k,
    // with r_k = x_i - b_k, d_k = ||r_k||^2.
    std::vector<T> a(static_cast<std::size_t>(K));
    std::vector<T> d2(static_cast<std::size_t>(K));
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t i = 0; i < N; ++i) {
            std::int64_t xb = b * C * N + i;
            std::int64_t wb = (b * N + i) * K;
            T wa = T(0);
            for (std::int64_t k = 0; k < K; ++k) {
                T dot = T(0), dist = T(0);
                std::int64_t eb = (b * K + k) * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    T r = xd[xb + c * N] - cwd[k * C + c];
                    dot += gd[eb + c] * r;
                    dist += r * r;
                }
                a[static_cast<std::size_t>(k)] = dot;
                d2[static_cast<std::size_t>(k)] = dist;
                wa += wd[wb + k] * dot;
            }
            for (std::int64_t k = 0; k < K; ++k) {
                T wk = wd[wb + k];
                T bk = wk * (a[static_cast<std::size_t>(k)] - wa);
                if (gs) (*gs)[k] -= d2[static_cast<std::size_t>(k)] * bk;
                std::int64_t eb = (b * K + k) * C;
                T two_sb = T(2) * scales[k] * bk;
                for (std::int64_t c = 0; c < C; ++c) {
                    T r = xd[xb + c * N] - cwd[k * C + c];
                    T gr = wk * gd[eb + c] - two_sb * r;
                    if (gx) (*gx)[xb + c * N] += gr;
                    if (gcw) (*gcw)[k * C + c] -= gr;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define CFP_INSTANTIATE_KERNELS(T)                                                                      \
    template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&,                     \
                                      const BasicTensor<T>*, const Conv2dGeom&);                        \
    template void conv2d_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,                      \
                                     const BasicTensor<T>&, const Conv2dGeom&, BasicTensor<T>*,         \
                                     BasicTensor<T>*, BasicTensor<T>*);                                 \
    template BasicTensor<T> linear<T>(const BasicTensor<T>&, const BasicTensor<T>&,                     \
                                      const BasicTensor<T>*);                                           \
    template void linear_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,                      \
                                     const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*,           \
                                     BasicTensor<T>*);                                                  \
    template BasicTensor<T> group_norm<T>(const BasicTensor<T>&, int, const BasicTensor<T>&,            \
                                          const BasicTensor<T>&, T);                                    \
    template void group_norm_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, int,             \
                                         const BasicTensor<T>&, T, BasicTensor<T>*, BasicTensor<T>*,    \
                                         BasicTensor<T>*);                                              \
    template BasicTensor<T> batch_norm_infer<T>(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                                const BasicTensor<T>&, const BasicTensor<T>&,           \
                                                const BasicTensor<T>&, T);                              \
    template void batch_norm_infer_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                               const BasicTensor<T>&, const BasicTensor<T>&,            \
                                               const BasicTensor<T>&, T, BasicTensor<T>*,               \
                                               BasicTensor<T>*, BasicTensor<T>*);                       \
    template BasicTensor<T> activation<T>(const BasicTensor<T>&, Act);                                  \
    template BasicTensor<T> activation_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&, Act);  \
    template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                       \
    template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                       \
    template BasicTensor<T> channel_scale<T>(const BasicTensor<T>&, const BasicTensor<T>&);             \
    template void channel_scale_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                            const BasicTensor<T>&, BasicTensor<T>*, BasicTensor<T>*);   \
    template BasicTensor<T> softmax_axis<T>(const BasicTensor<T>&, int);                                \
    template BasicTensor<T> softmax_axis_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                                     int);                                              \
    template BasicTensor<T> upsample_nearest2x<T>(const BasicTensor<T>&);                               \
    template BasicTensor<T> upsample_nearest2x_backward<T>(const BasicTensor<T>&);                      \
    template BasicTensor<T> concat_channels<T>(const std::vector<const BasicTensor<T>*>&);              \
    template BasicTensor<T> slice_channels<T>(const BasicTensor<T>&, std::int64_t, std::int64_t);       \
    template BasicTensor<T> slice_channels_backward<T>(const BasicTensor<T>&, const Shape&,             \
                                                       std::int64_t);                                   \
    template BasicTensor<T> mean_axis<T>(const BasicTensor<T>&, int);                                   \
    template BasicTensor<T> mean_axis_backward<T>(const BasicTensor<T>&, const Shape&, int);            \
    template BasicTensor<T> sum_all<T>(const BasicTensor<T>&);                                          \
    template BasicTensor<T> codebook_aggregate<T>(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                                  const BasicTensor<T>&, BasicTensor<T>*);              \
    template BasicTensor<T> codebook_assignment_weights<T>(const BasicTensor<T>&,                       \
                                                           const BasicTensor<T>&,                       \
                                                           const BasicTensor<T>&);                      \
    template void codebook_aggregate_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                                 const BasicTensor<T>&, const BasicTensor<T>&,          \
                                                 const BasicTensor<T>&, BasicTensor<T>*,                \
                                                 BasicTensor<T>*, BasicTensor<T>*);

CFP_INSTANTIATE_KERNELS(float)
CFP_INSTANTIATE_KERNELS(double)

#undef CFP_INSTANTIATE_KERNELS

} // namespace cfp::kernels
