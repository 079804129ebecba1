#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cfp/config.hpp"
#include "cfp/context.hpp"
#include "cfp/evc.hpp"
#include "cfp/gcr.hpp"

// Quantitative accounting over the blocks: parameter counts, FLOP counts,
// finite-difference gradient verification, and wall-clock latency stats.
//
// FLOP convention (also echoed in every report header):
//   - 1 multiply-accumulate = 2 FLOPs; biases count 1 FLOP per output.
//   - conv:   2*B*H'*W'*Cout*(Cin/groups)*kh*kw (+ B*H'*W'*Cout bias adds)
//   - linear: 2*M*Din*Dout + M*Dout over M rows
//   - batch norm (inference) 4/elem, group norm 8/elem
//   - relu 1/elem, sigmoid 4/elem, silu 5/elem, softmax 5/elem
//   - add / mul / channel scale 1/elem; mean over an axis 1 per input elem
//   - codebook encode: per batch 2*N*K*C (distances) + N*K (softmax)
//     + 2*N*K*C (weighted residual accumulation), N = H*W
//   - nearest upsample, concat, slice, reshape, eval-mode droppath: 0
namespace cfp::analysis {

struct CostLine {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t buffers = 0;
    std::uint64_t flops = 0;
};

struct CostReport {
    std::uint64_t params = 0;
    std::uint64_t buffers = 0;
    std::uint64_t flops = 0;
    std::vector<CostLine> breakdown; // sums to the totals exactly

    std::string to_text() const;
};

// Structure-only parameter count; breakdown groups entries by the first two
// name components. Buffers (running statistics) are counted separately and
// excluded from `params`.
CostReport count_params(const ModuleParams& params);

// Per-block FLOP walkers mirroring the forward structure. `input` is the
// tensor entering the block.
CostReport count_evc_flops(const evc::EvcParams& p, const Shape& input);

// Level shapes ascending by index, matching the pyramid fed to cfp_forward.
using LevelShapes = std::vector<std::pair<int, Shape>>;
CostReport count_cfp_flops(const gcr::CfpParams& p, const gcr::GcrConfig& cfg, const LevelShapes& levels);

// Aligns two reports (typically params + flops) into one by breakdown name.
CostReport merge_cost(const CostReport& a, const CostReport& b);

// -- gradient checking ----------------------------------------------------------

// A block packaged for differentiation tests: a scalar loss evaluated either
// on a recording tape (float) or in a plain 64-bit forward. `params` names
// every tensor the check differentiates, including the block inputs.
struct DiffBlock {
    std::string name;
    ModuleParams params;
    std::function<Var(TapeCtx&)> tape_loss;
    std::function<double(EvalCtx<double>&)> eval_loss;
    std::shared_ptr<void> storage; // owns the parameter structs the closures reference
};

struct GradEntry {
    std::string param;
    double max_rel_err = 0.0;
    std::int64_t worst_index = -1;
    bool pass = true;
};

struct GradReport {
    std::string block;
    double tol = 1e-3;
    double step = 1e-3;
    std::vector<GradEntry> entries;
    bool pass = true;

    std::string to_text() const;
};

// Central finite differences in 64-bit against the float tape gradients.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as the denominator;
// the check fails iff any entry exceeds `tol`.
GradReport grad_check(const DiffBlock& block, double tol = 1e-3, double step = 1e-3);

// The exported battery: every primitive op and every block up to evc_forward
// and cfp_forward, at [1,4,4,4]-scale shapes with generic random parameters.
std::vector<DiffBlock> standard_blocks(std::uint64_t seed);

struct GradSuiteReport {
    std::vector<GradReport> reports;
    bool pass = true;

    std::string to_text() const;
};

GradSuiteReport grad_check_suite(std::span<const std::uint64_t> seeds, double tol = 1e-3,
                                 double step = 1e-3);

// -- latency ----------------------------------------------------------------------

struct LatencyStats {
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    int iters = 0;
};

// Forward-only timing: `warmup` discarded runs, then population stats over
// `iters` samples (nearest-rank percentiles). Pins the thread to one logical
// CPU when the host allows.
LatencyStats bench_latency(const std::function<void()>& fn, int warmup, int iters);

} // namespace cfp::analysis
