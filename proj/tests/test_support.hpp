#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

namespace testutil {

inline cfp::Tensor random_tensor(cfp::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    cfp::Tensor t(std::move(shape));
    cfp::Rng rng(seed);
    rng.fill_uniform(t.data(), lo, hi);
    return t;
}

inline double max_abs_diff(const cfp::Tensor& got, const cfp::TensorD& want) {
    if (got.shape() != want.shape()) return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    for (std::int64_t i = 0; i < got.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(got[i]) - want[i]));
    return worst;
}

inline double max_abs_diff(const cfp::Tensor& a, const cfp::Tensor& b) {
    if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return worst;
}

inline bool bit_equal(const cfp::Tensor& a, const cfp::Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

} // namespace testutil
