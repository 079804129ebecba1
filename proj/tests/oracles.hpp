#pragma once

// Independent 64-bit reference implementations used to verify the library
// kernels. Everything here is written as plain nested loops straight from the
// definitions and never calls into the code under test.

#include <cmath>
#include <vector>

#include "cfp/tensor.hpp"

namespace oracle {

using cfp::Shape;
using cfp::TensorD;

inline TensorD conv2d(const TensorD& x, const TensorD& w, const TensorD* bias, int stride, int pad,
                      int groups) {
    const std::int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t Cout = w.dim(0), CinG = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    const std::int64_t cout_g = Cout / groups;
    TensorD y({B, Cout, Ho, Wo});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t o = 0; o < Cout; ++o)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = bias ? (*bias)[o] : 0.0;
                    for (std::int64_t cl = 0; cl < CinG; ++cl)
                        for (std::int64_t i = 0; i < kh; ++i)
                            for (std::int64_t j = 0; j < kw; ++j) {
                                std::int64_t ih = oh * stride - pad + i;
                                std::int64_t iw = ow * stride - pad + j;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                std::int64_t ci = (o / cout_g) * CinG + cl;
                                acc += w.at4(o, cl, i, j) * x.at4(b, ci, ih, iw);
                            }
                    y.at4(b, o, oh, ow) = acc;
                }
    (void)Cin;
    return y;
}

inline TensorD linear(const TensorD& x, const TensorD& w, const TensorD* bias) {
    const std::int64_t Din = w.dim(1), Dout = w.dim(0);
    const std::int64_t M = x.numel() / Din;
    Shape out_shape = x.shape();
    out_shape.back() = Dout;
    TensorD y(out_shape);
    for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t o = 0; o < Dout; ++o) {
            double acc = bias ? (*bias)[o] : 0.0;
            for (std::int64_t i = 0; i < Din; ++i) acc += x[m * Din + i] * w[o * Din + i];
            y[m * Dout + o] = acc;
        }
    return y;
}

inline TensorD group_norm(const TensorD& x, int groups, const TensorD& gamma, const TensorD& beta,
                          double eps) {
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t cg = C / groups;
    const std::int64_t m = cg * H * W;
    TensorD y(x.shape());
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t g = 0; g < groups; ++g) {
            double mean = 0.0, var = 0.0;
            for (std::int64_t c = 0; c < cg; ++c)
                for (std::int64_t i = 0; i < H * W; ++i)
                    mean += x[((b * C + g * cg + c) * H * W) + i];
            mean /= static_cast<double>(m);
            for (std::int64_t c = 0; c < cg; ++c)
                for (std::int64_t i = 0; i < H * W; ++i) {
                    double d = x[((b * C + g * cg + c) * H * W) + i] - mean;
                    var += d * d;
                }
            var /= static_cast<double>(m);
            for (std::int64_t c = 0; c < cg; ++c)
                for (std::int64_t i = 0; i < H * W; ++i) {
                    std::int64_t idx = ((b * C + g * cg + c) * H * W) + i;
                    double xhat = (x[idx] - mean) / std::sqrt(var + eps);
                    y[idx] = xhat * gamma[g * cg + c] + beta[g * cg + c];
                }
        }
    return y;
}

inline TensorD batch_norm_infer(const TensorD& x, const TensorD& mean, const TensorD& var,
                                const TensorD& gamma, const TensorD& beta, double eps) {
    const std::int64_t B = x.dim(0), C = x.dim(1);
    const std::int64_t inner = x.numel() / (B * C);
    TensorD y(x.shape());
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < inner; ++i) {
                std::int64_t idx = (b * C + c) * inner + i;
                y[idx] = (x[idx] - mean[c]) / std::sqrt(var[c] + eps) * gamma[c] + beta[c];
            }
    return y;
}

// Per-pixel soft-assignment weights over codewords: [B, N, K].
inline TensorD codebook_weights(const TensorD& x, const TensorD& cw, const TensorD& s) {
    const std::int64_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
    const std::int64_t K = cw.dim(0);
    TensorD wts({B, N, K});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t i = 0; i < N; ++i) {
            double denom = 0.0;
            std::vector<double> num(static_cast<std::size_t>(K));
            for (std::int64_t k = 0; k < K; ++k) {
                double d2 = 0.0;
                for (std::int64_t c = 0; c < C; ++c) {
                    double r = x[b * C * N + c * N + i] - cw[k * C + c];
                    d2 += r * r;
                }
                num[static_cast<std::size_t>(k)] = std::exp(-s[k] * d2);
                denom += num[static_cast<std::size_t>(k)];
            }
            for (std::int64_t k = 0; k < K; ++k) wts[(b * N + i) * K + k] = num[static_cast<std::size_t>(k)] / denom;
        }
    return wts;
}

// Per-codeword aggregated residuals: e_k = sum_i w_ik (x_i - b_k), [B, K, C].
inline TensorD codebook_aggregate(const TensorD& x, const TensorD& cw, const TensorD& s) {
    const std::int64_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
    const std::int64_t K = cw.dim(0);
    TensorD wts = codebook_weights(x, cw, s);
    TensorD e({B, K, C});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t k = 0; k < K; ++k)
            for (std::int64_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < N; ++i)
                    acc += wts[(b * N + i) * K + k] * (x[b * C * N + c * N + i] - cw[k * C + c]);
                e[(b * K + k) * C + c] = acc;
            }
    return e;
}

// Full encoder: aggregate, BN over the codeword axis, ReLU, mean over K -> [B, C].
inline TensorD lvc_encode(const TensorD& x, const TensorD& cw, const TensorD& s, const TensorD& bn_mean,
                          const TensorD& bn_var, const TensorD& bn_gamma, const TensorD& bn_beta,
                          double eps) {
    const std::int64_t B = x.dim(0), C = x.dim(1), K = cw.dim(0);
    TensorD ek = codebook_aggregate(x, cw, s);
    TensorD e({B, C});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < K; ++k) {
                double v = ek[(b * K + k) * C + c];
                v = (v - bn_mean[k]) / std::sqrt(bn_var[k] + eps) * bn_gamma[k] + bn_beta[k];
                acc += v > 0.0 ? v : 0.0;
            }
            e[b * C + c] = acc / static_cast<double>(K);
        }
    return e;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

} // namespace oracle
