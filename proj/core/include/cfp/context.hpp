#pragma once

#include <algorithm>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cfp/autodiff.hpp"
#include "cfp/kernels.hpp"
#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

// Evaluation contexts. Every block in this library is written once as a
// template over a context:
//   EvalCtx<float>  — plain forward, records nothing;
//   EvalCtx<double> — 64-bit forward for the finite-difference oracle;
//   TapeCtx         — float forward that records a reverse-mode tape.
// Parameters stay plain float tensors owned by the caller; ctx.use() brings
// them into the context (converting, or resolving to a tape leaf, as needed).
namespace cfp {

enum class Mode { eval, train };

template <typename T>
class EvalCtx {
public:
    using V = std::shared_ptr<const BasicTensor<T>>;

    explicit EvalCtx(Mode mode = Mode::eval, Rng* rng = nullptr) : mode_(mode), rng_(rng) {}

    Mode mode() const { return mode_; }

    static const Shape& shape(const V& v) { return v->shape(); }
    static T scalar(const V& v) { return (*v)[0]; }

    V lift(BasicTensor<T> t) const { return std::make_shared<const BasicTensor<T>>(std::move(t)); }

    // Overrides what use() resolves `key` to (finite-difference harness hook).
    void bind(const Tensor& key, std::shared_ptr<const BasicTensor<T>> value) { bindings_[&key] = std::move(value); }

    V use(const Tensor& t) {
        auto it = bindings_.find(&t);
        if (it != bindings_.end()) return it->second;
        if constexpr (std::is_same_v<T, float>) {
            // Non-owning view; parameters outlive any forward pass by contract.
            return V(std::shared_ptr<void>(), &t);
        } else {
            auto conv = std::make_shared<const BasicTensor<T>>(t.template cast<T>());
            bindings_.emplace(&t, conv);
            return conv;
        }
    }

    // When set, act() records ReLU health: the smallest |pre-activation| seen
    // (difference points near the kink at 0 corrupt finite differences) and
    // whether any (batch, channel) plane is entirely non-positive (a dead
    // channel disconnects downstream parameters in exact arithmetic).
    struct ReluProbe {
        double min_abs = std::numeric_limits<double>::infinity();
        bool dead_channel = false;
    };
    ReluProbe* relu_probe = nullptr;

    V conv2d(const V& x, const V& w, const std::optional<V>& b, const kernels::Conv2dGeom& g) {
        return lift(kernels::conv2d<T>(*x, *w, b ? b->get() : nullptr, g));
    }
    V linear(const V& x, const V& w, const std::optional<V>& b) {
        return lift(kernels::linear<T>(*x, *w, b ? b->get() : nullptr));
    }
    V group_norm(const V& x, int groups, const V& gamma, const V& beta, float eps) {
        return lift(kernels::group_norm<T>(*x, groups, *gamma, *beta, static_cast<T>(eps)));
    }
    V batch_norm_infer(const V& x, const V& mean, const V& var, const V& gamma, const V& beta, float eps) {
        return lift(kernels::batch_norm_infer<T>(*x, *mean, *var, *gamma, *beta, static_cast<T>(eps)));
    }
    V act(const V& x, kernels::Act kind) {
        if (relu_probe && kind == kernels::Act::relu) {
            auto d = x->data();
            for (const T v : d)
                relu_probe->min_abs = std::min(relu_probe->min_abs, static_cast<double>(v < T(0) ? -v : v));
            if (x->rank() >= 2) {
                std::int64_t planes = x->dim(0) * x->dim(1);
                std::int64_t inner = x->numel() / planes;
                for (std::int64_t p = 0; p < planes && !relu_probe->dead_channel; ++p) {
                    bool alive = false;
                    for (std::int64_t i = 0; i < inner; ++i) alive = alive || d[p * inner + i] > T(0);
                    relu_probe->dead_channel = relu_probe->dead_channel || !alive;
                }
            }
        }
        return lift(kernels::activation<T>(*x, kind));
    }
    V relu(const V& x) { return act(x, kernels::Act::relu); }
    V silu(const V& x) { return act(x, kernels::Act::silu); }
    V sigmoid(const V& x) { return act(x, kernels::Act::sigmoid); }
    V softmax_axis(const V& x, int axis) { return lift(kernels::softmax_axis<T>(*x, axis)); }
    V upsample2x(const V& x) { return lift(kernels::upsample_nearest2x<T>(*x)); }
    V concat_channels(const std::vector<V>& xs) {
        std::vector<const BasicTensor<T>*> ptrs;
        ptrs.reserve(xs.size());
        for (const auto& v : xs) ptrs.push_back(v.get());
        return lift(kernels::concat_channels<T>(ptrs));
    }
    V slice_channels(const V& x, std::int64_t c0, std::int64_t c1) {
        return lift(kernels::slice_channels<T>(*x, c0, c1));
    }
    V add(const V& x, const V& y) { return lift(kernels::add<T>(*x, *y)); }
    V mul(const V& x, const V& y) { return lift(kernels::mul<T>(*x, *y)); }
    V channel_scale(const V& x, const V& w) { return lift(kernels::channel_scale<T>(*x, *w)); }
    V codebook_aggregate(const V& x, const V& cw, const V& s) {
        return lift(kernels::codebook_aggregate<T>(*x, *cw, *s, nullptr));
    }
    V reshape(const V& x, Shape shape) { return lift(x->reshaped(std::move(shape))); }
    V mean_axis(const V& x, int axis) { return lift(kernels::mean_axis<T>(*x, axis)); }
    V sum_all(const V& x) { return lift(kernels::sum_all<T>(*x)); }

    // Stochastic depth on the residual branch: per-sample Bernoulli keep with
    // 1/(1-rate) rescale in train mode, identity in eval mode.
    V droppath(const V& x, float rate) {
        if (mode_ == Mode::eval || rate <= 0.0f) return x;
        return mul(x, lift(droppath_mask<T>(x->shape(), rate, *rng_)));
    }

    Tensor materialize(const V& v) const {
        if constexpr (std::is_same_v<T, float>) return *v;
        else return v->template cast<float>();
    }

private:
    template <typename U>
    static BasicTensor<U> droppath_mask(const Shape& shape, float rate, Rng& rng) {
        BasicTensor<U> mask(shape);
        std::int64_t B = shape[0];
        std::int64_t per = mask.numel() / B;
        U scale = U(1) / (U(1) - static_cast<U>(rate));
        for (std::int64_t b = 0; b < B; ++b) {
            U v = rng.bernoulli(rate) ? U(0) : scale;
            auto d = mask.data();
            for (std::int64_t i = 0; i < per; ++i) d[static_cast<std::size_t>(b * per + i)] = v;
        }
        return mask;
    }

    Mode mode_;
    Rng* rng_;
    std::unordered_map<const void*, V> bindings_;

    template <typename U>
    friend class EvalCtx;
};

// Recording context: same surface, float values, every op appended to the
// tape with the closure needed for its vector-Jacobian product.
class TapeCtx {
public:
    using V = Var;

    explicit TapeCtx(Tape& tape, Mode mode = Mode::eval, Rng* rng = nullptr)
        : tape_(tape), mode_(mode), rng_(rng) {}

    Mode mode() const { return mode_; }
    Tape& tape() { return tape_; }

    static const Shape& shape(const V& v) { return v.shape(); }

    V lift(Tensor t) const { return constant(std::move(t)); }

    // Registers `t` as a differentiable leaf; later use(&t) resolves to it.
    V leaf(const Tensor& t, std::string name = {}) {
        Var v = tape_.leaf(std::shared_ptr<const Tensor>(std::shared_ptr<void>(), &t), std::move(name));
        bindings_[&t] = v;
        return v;
    }

    V use(const Tensor& t) {
        auto it = bindings_.find(&t);
        if (it != bindings_.end()) return it->second;
        return constant_view(t);
    }

    V conv2d(const V& x, const V& w, const std::optional<V>& b, const kernels::Conv2dGeom& g);
    V linear(const V& x, const V& w, const std::optional<V>& b);
    V group_norm(const V& x, int groups, const V& gamma, const V& beta, float eps);
    V batch_norm_infer(const V& x, const V& mean, const V& var, const V& gamma, const V& beta, float eps);
    V act(const V& x, kernels::Act kind);
    V relu(const V& x) { return act(x, kernels::Act::relu); }
    V silu(const V& x) { return act(x, kernels::Act::silu); }
    V sigmoid(const V& x) { return act(x, kernels::Act::sigmoid); }
    V softmax_axis(const V& x, int axis);
    V upsample2x(const V& x);
    V concat_channels(const std::vector<V>& xs);
    V slice_channels(const V& x, std::int64_t c0, std::int64_t c1);
    V add(const V& x, const V& y);
    V mul(const V& x, const V& y);
    V channel_scale(const V& x, const V& w);
    V codebook_aggregate(const V& x, const V& cw, const V& s);
    V reshape(const V& x, Shape shape);
    V mean_axis(const V& x, int axis);
    V sum_all(const V& x);

    V droppath(const V& x, float rate) {
        if (mode_ == Mode::eval || rate <= 0.0f) return x;
        Tensor mask(x.shape());
        std::int64_t B = x.shape()[0];
        std::int64_t per = mask.numel() / B;
        float scale = 1.0f / (1.0f - rate);
        for (std::int64_t b = 0; b < B; ++b) {
            float v = rng_->bernoulli(rate) ? 0.0f : scale;
            for (std::int64_t i = 0; i < per; ++i) mask[b * per + i] = v;
        }
        return mul(x, lift(std::move(mask)));
    }

    Tensor materialize(const V& v) const { return v.t(); }

private:
    Tape& tape_;
    Mode mode_;
    Rng* rng_;
    std::unordered_map<const void*, Var> bindings_;
};

} // namespace cfp
