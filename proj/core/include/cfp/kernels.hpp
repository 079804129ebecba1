#pragma once

#include <optional>
#include <vector>

#include "cfp/tensor.hpp"

// Scalar-templated reference kernels. Everything is plain loops over row-major
// buffers: float instantiations back the public ops and the tape, double
// instantiations back the 64-bit finite-difference oracle. Each kernel
// validates its geometry (ShapeError) and rejects non-finite results
// (NumericError).
namespace cfp::kernels {

struct Conv2dGeom {
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

enum class Act { relu, silu, sigmoid };

const char* act_name(Act a);

// -- convolution ------------------------------------------------------------
// x: [B, Cin, H, W], w: [Cout, Cin/groups, kh, kw], bias: [Cout] or null.
// Cross-correlation with zero padding; output H' = (H + 2p - kh)/stride + 1
// and must be integral and >= 1.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* bias,
                      const Conv2dGeom& g);

template <typename T>
void conv2d_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x, const BasicTensor<T>& w,
                     const Conv2dGeom& g, BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb);

// -- dense ------------------------------------------------------------------
// x: [..., Din], w: [Dout, Din], bias: [Dout] or null; y = x w^T + b.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* bias);

template <typename T>
void linear_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x, const BasicTensor<T>& w,
                     BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb);

// -- normalization ----------------------------------------------------------
// Per (batch, group) standardization followed by per-channel affine.
template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, int groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps);

template <typename T>
void group_norm_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x, int groups,
                         const BasicTensor<T>& gamma, T eps, BasicTensor<T>* gx,
                         BasicTensor<T>* ggamma, BasicTensor<T>* gbeta);

// Inference-mode normalization with fixed statistics. x: [B, C, H, W] (or any
// rank >= 2 with channels on axis 1).
template <typename T>
BasicTensor<T> batch_norm_infer(const BasicTensor<T>& x, const BasicTensor<T>& mean,
                                const BasicTensor<T>& var, const BasicTensor<T>& gamma,
                                const BasicTensor<T>& beta, T eps);

template <typename T>
void batch_norm_infer_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x,
                               const BasicTensor<T>& mean, const BasicTensor<T>& var,
                               const BasicTensor<T>& gamma, T eps, BasicTensor<T>* gx,
                               BasicTensor<T>* ggamma, BasicTensor<T>* gbeta);

// -- elementwise ------------------------------------------------------------
template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Act kind);

// Returns gx. ReLU subgradient at 0 is 0.
template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x, Act kind);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& x, const BasicTensor<T>& y);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& x, const BasicTensor<T>& y);

// x: [B, C, ...], w: [C] or [B, C]; multiplies every location of channel c.
template <typename T>
BasicTensor<T> channel_scale(const BasicTensor<T>& x, const BasicTensor<T>& w);

template <typename T>
void channel_scale_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x,
                            const BasicTensor<T>& w, BasicTensor<T>* gx, BasicTensor<T>* gw);

// -- softmax ----------------------------------------------------------------
// Max-subtracted softmax along `axis`.
template <typename T>
BasicTensor<T> softmax_axis(const BasicTensor<T>& x, int axis);

template <typename T>
BasicTensor<T> softmax_axis_backward(const BasicTensor<T>& gy, const BasicTensor<T>& y, int axis);

// -- shape movers -----------------------------------------------------------
template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> upsample_nearest2x_backward(const BasicTensor<T>& gy);

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& xs);

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t c0, std::int64_t c1);

// Scatters gy back into a zero tensor of shape `xshape` at channels [c0, c1).
template <typename T>
BasicTensor<T> slice_channels_backward(const BasicTensor<T>& gy, const Shape& xshape, std::int64_t c0);

// -- reductions -------------------------------------------------------------
template <typename T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, int axis);

template <typename T>
BasicTensor<T> mean_axis_backward(const BasicTensor<T>& gy, const Shape& xshape, int axis);

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x); // shape [1]

// -- codebook soft assignment -------------------------------------------------
// x: [B, C, H, W], codewords: [K, C], scales: [K].
// Per pixel i the assignment weight over codewords is
//   w_ik = softmax_k(-s_k * ||x_i - b_k||^2),
// and the per-codeword aggregate is e_k = sum_i w_ik (x_i - b_k).
// Returns e: [B, K, C]. If save_weights is non-null it receives [B, N, K]
// with N = H*W (needed by the backward pass).
template <typename T>
BasicTensor<T> codebook_aggregate(const BasicTensor<T>& x, const BasicTensor<T>& codewords,
                                  const BasicTensor<T>& scales, BasicTensor<T>* save_weights = nullptr);

template <typename T>
void codebook_aggregate_backward(const BasicTensor<T>& gy, const BasicTensor<T>& x,
                                 const BasicTensor<T>& codewords, const BasicTensor<T>& scales,
                                 const BasicTensor<T>& weights, BasicTensor<T>* gx,
                                 BasicTensor<T>* gcw, BasicTensor<T>* gs);

// The normalized assignment weights alone: [B, N, K].
template <typename T>
BasicTensor<T> codebook_assignment_weights(const BasicTensor<T>& x, const BasicTensor<T>& codewords,
                                           const BasicTensor<T>& scales);

} // namespace cfp::kernels
