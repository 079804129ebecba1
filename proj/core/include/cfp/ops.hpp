#pragma once

#include <vector>

#include "cfp/kernels.hpp"
#include "cfp/params.hpp"

// Plain forward ops over float tensors. These never touch a tape; use TapeCtx
// when gradients are needed.
namespace cfp::ops {

using kernels::Act;

inline Tensor conv2d(const Tensor& x, const ConvSpec& spec) {
    if (x.rank() != 4 || x.dim(1) != spec.in_channels)
        throw ShapeError("conv2d: input channels " + std::to_string(x.rank() == 4 ? x.dim(1) : -1) +
                         " != spec.in_channels " + std::to_string(spec.in_channels));
    return kernels::conv2d<float>(x, spec.weight, spec.bias ? &*spec.bias : nullptr, spec.geom());
}

inline Tensor depthwise_conv2d(const Tensor& x, const ConvSpec& spec) {
    if (!spec.depthwise())
        throw ShapeError("depthwise_conv2d requires groups == in_channels == out_channels, got groups=" +
                         std::to_string(spec.groups) + " in=" + std::to_string(spec.in_channels) +
                         " out=" + std::to_string(spec.out_channels));
    return conv2d(x, spec);
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return kernels::linear<float>(x, w, &b);
}

inline Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
    return kernels::group_norm<float>(x, groups, gamma, beta, eps);
}

inline Tensor batch_norm_infer(const Tensor& x, const Tensor& mean, const Tensor& var, const Tensor& gamma,
                               const Tensor& beta, float eps) {
    return kernels::batch_norm_infer<float>(x, mean, var, gamma, beta, eps);
}

inline Tensor activation(const Tensor& x, Act kind) { return kernels::activation<float>(x, kind); }

inline Tensor softmax_axis(const Tensor& x, int axis) { return kernels::softmax_axis<float>(x, axis); }

inline Tensor upsample_nearest2x(const Tensor& x) { return kernels::upsample_nearest2x<float>(x); }

inline Tensor concat_channels(const std::vector<const Tensor*>& xs) {
    return kernels::concat_channels<float>(xs);
}

inline Tensor slice_channels(const Tensor& x, std::int64_t c0, std::int64_t c1) {
    return kernels::slice_channels<float>(x, c0, c1);
}

inline Tensor add(const Tensor& x, const Tensor& y) { return kernels::add<float>(x, y); }
inline Tensor mul(const Tensor& x, const Tensor& y) { return kernels::mul<float>(x, y); }

inline Tensor channel_broadcast_mul(const Tensor& x, const Tensor& w) {
    return kernels::channel_scale<float>(x, w);
}

} // namespace cfp::ops
