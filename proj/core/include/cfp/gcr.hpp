#pragma once

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include "cfp/evc.hpp"

// Global Centralized Regulation: run the EVC on the deepest pyramid level and
// use its output to regulate the configured shallower levels top-down. Each
// regulated level is the 1x1-projected concat of its own lateral projection
// and the (repeatedly 2x-upsampled) deep regulator, reduced to a fixed width.
namespace cfp::gcr {

struct PyramidLevel {
    int index = 0; // 0..4; stride relative to the input image is 2^(index+1)
    Tensor feature; // [B, C_i, H_i, W_i]

    int stride() const { return 1 << (index + 1); }
};

struct Pyramid {
    std::vector<PyramidLevel> levels; // ascending index (shallow -> deep)

    const PyramidLevel* find(int index) const {
        for (const auto& l : levels)
            if (l.index == index) return &l;
        return nullptr;
    }
    int deepest_index() const {
        if (levels.empty()) throw ShapeError("pyramid has no levels");
        return levels.back().index;
    }
};

// Checks ordering, index range, batch consistency and the dyadic spatial
// relation between present levels.
void validate_pyramid(const Pyramid& p);

// Wiring of the regulation pass (parameters live in CfpParams).
struct GcrConfig {
    std::vector<int> regulated_levels{3, 2}; // processed top-down (descending)
    int repeat = 1;                          // R
    bool chained = false; // classic FPN wiring: level i consumes the fused level above it
                          // instead of the EVC output directly
};

struct LevelRegParams {
    int level = 0;
    ConvSpec lateral;                   // 1x1, C_level -> out_channels
    std::optional<ConvSpec> lateral_r2; // 1x1, out_channels -> out_channels, repeats >= 2 only
    ConvSpec fuse;                      // 1x1, 2*out_channels -> out_channels
};

struct CfpParams {
    evc::EvcParams evc;
    std::optional<evc::StemParams> stem_r2; // stem consuming out_channels, repeats >= 2 only
    std::vector<LevelRegParams> levels;     // descending level order
    int out_channels = 256;

    const LevelRegParams& level_params(int level) const {
        for (const auto& l : levels)
            if (l.level == level) return l;
        throw ShapeError("no regulation parameters for level " + std::to_string(level));
    }
};

// Channel widths of the input pyramid, ascending by level index.
using LevelChannels = std::vector<std::pair<int, int>>; // (level index, channels)

CfpParams make_cfp(const LevelChannels& channels, const evc::EvcConfig& evc_cfg, const GcrConfig& cfg,
                   Rng& rng);

void visit_cfp(CfpParams& p, const ParamVisitor& v);
ModuleParams collect_cfp(CfpParams& p);

// -- forwards -----------------------------------------------------------------

// Regulates one shallow level: lateral 1x1 projection, repeated 2x nearest
// upsampling of the deep regulator to the shallow scale, channel concat, and
// a 1x1 fusion back to out_channels.
template <class Ctx>
typename Ctx::V regulate_level(Ctx& cx, const typename Ctx::V& shallow, const typename Ctx::V& deep_reg,
                               const ConvSpec& lateral, const ConvSpec& fuse) {
    const Shape& ss = Ctx::shape(shallow);
    const Shape& ds = Ctx::shape(deep_reg);
    std::int64_t sh = ss[2], sw = ss[3], dh = ds[2], dw = ds[3];
    if (sh % dh != 0 || sw % dw != 0 || sh / dh != sw / dw)
        throw ShapeError("regulate_level: shallow " + shape_str(ss) + " is not a dyadic upscale of deep " +
                         shape_str(ds));
    std::int64_t ratio = sh / dh;
    if (ratio < 2 || (ratio & (ratio - 1)) != 0)
        throw ShapeError("regulate_level: spatial ratio " + std::to_string(ratio) + " is not a power of two >= 2");

    auto lat = evc::apply_conv(cx, shallow, lateral);
    auto up = deep_reg;
    for (std::int64_t r = ratio; r > 1; r /= 2) up = cx.upsample2x(up);
    auto cat = cx.concat_channels({lat, up});
    return evc::apply_conv(cx, cat, fuse);
}

// Level-indexed values, ascending by level.
template <class Ctx>
using LevelValues = std::vector<std::pair<int, typename Ctx::V>>;

// One full regulation pass repeated R times with shared parameters. Repeats
// beyond the first consume the previous output pyramid, whose regulated
// levels all carry out_channels; the stem/lateral variants sized for that
// width are selected by input channel count.
template <class Ctx>
LevelValues<Ctx> cfp_forward(Ctx& cx, const LevelValues<Ctx>& inputs, const CfpParams& p,
                             const GcrConfig& cfg) {
    if (inputs.empty()) throw ShapeError("cfp_forward: empty pyramid");
    for (std::size_t i = 1; i < inputs.size(); ++i)
        if (inputs[i].first <= inputs[i - 1].first)
            throw ShapeError("cfp_forward: levels must be strictly ascending");
    const int deepest = inputs.back().first;

    std::vector<int> regulated = cfg.regulated_levels;
    std::sort(regulated.begin(), regulated.end(), std::greater<int>());
    for (int lvl : regulated) {
        if (lvl >= deepest)
            throw ShapeError("regulated level " + std::to_string(lvl) + " is not shallower than the EVC level " +
                             std::to_string(deepest));
        bool present = false;
        for (const auto& [idx, v] : inputs) present = present || idx == lvl;
        if (!present) throw ShapeError("regulated level " + std::to_string(lvl) + " missing from the pyramid");
    }
    if (cfg.repeat < 1) throw ShapeError("repeat must be >= 1");

    LevelValues<Ctx> state = inputs;
    auto value_of = [&](int lvl) -> typename Ctx::V& {
        for (auto& [idx, v] : state)
            if (idx == lvl) return v;
        throw ShapeError("level " + std::to_string(lvl) + " missing from the pyramid");
    };

    for (int r = 0; r < cfg.repeat; ++r) {
        auto& deep_in = value_of(deepest);
        std::int64_t deep_ch = Ctx::shape(deep_in)[1];
        const evc::StemParams* stem = nullptr;
        if (deep_ch == p.evc.stem.conv.in_channels) stem = &p.evc.stem;
        else if (p.stem_r2 && deep_ch == p.stem_r2->conv.in_channels) stem = &*p.stem_r2;
        else
            throw ShapeError("no stem parameters for deepest-level width " + std::to_string(deep_ch));
        auto reg = evc::evc_forward(cx, deep_in, p.evc, stem);

        LevelValues<Ctx> next = state;
        for (auto& [idx, v] : next)
            if (idx == deepest) v = reg;

        auto deep_src = reg;
        for (int lvl : regulated) {
            const LevelRegParams& lp = p.level_params(lvl);
            auto& shallow = value_of(lvl);
            std::int64_t ch = Ctx::shape(shallow)[1];
            const ConvSpec* lateral = nullptr;
            if (ch == lp.lateral.in_channels) lateral = &lp.lateral;
            else if (lp.lateral_r2 && ch == lp.lateral_r2->in_channels) lateral = &*lp.lateral_r2;
            else
                throw ShapeError("no lateral parameters for level " + std::to_string(lvl) + " width " +
                                 std::to_string(ch));
            auto fused = regulate_level(cx, shallow, deep_src, *lateral, lp.fuse);
            for (auto& [idx, v] : next)
                if (idx == lvl) v = fused;
            if (cfg.chained) deep_src = fused;
        }
        state = std::move(next);
    }
    return state;
}

// Plain-tensor convenience wrapper.
Pyramid cfp_forward(const Pyramid& input, const CfpParams& params, const GcrConfig& cfg,
                    Mode mode = Mode::eval, Rng* rng = nullptr);

} // namespace cfp::gcr
