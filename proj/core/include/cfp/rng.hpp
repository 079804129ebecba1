#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace cfp {

// Seeded RNG handle. All draws go through the 53-bit uniform below instead of
// std::uniform_real_distribution, whose output is implementation-defined;
// this keeps every seeded stream reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void fill_uniform(std::span<T> out, double lo, double hi) {
        for (auto& v : out) v = static_cast<T>(uniform(lo, hi));
    }

private:
    std::mt19937_64 gen_;
};

} // namespace cfp
