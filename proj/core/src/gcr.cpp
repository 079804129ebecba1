#include "cfp/gcr.hpp"

namespace cfp::gcr {

void validate_pyramid(const Pyramid& p) {
    if (p.levels.empty()) throw ShapeError("pyramid has no levels");
    for (std::size_t i = 0; i < p.levels.size(); ++i) {
        const auto& l = p.levels[i];
        if (l.index < 0 || l.index > 4)
            throw ShapeError("pyramid level index " + std::to_string(l.index) + " outside 0..4");
        if (l.feature.rank() != 4)
            throw ShapeError("pyramid level " + std::to_string(l.index) + " must be 4-D");
        if (i > 0) {
            const auto& prev = p.levels[i - 1];
            if (l.index <= prev.index) throw ShapeError("pyramid levels must be strictly ascending");
            if (l.feature.dim(0) != prev.feature.dim(0))
                throw ShapeError("pyramid batch sizes differ across levels");
            std::int64_t gap = 1;
            for (int d = prev.index; d < l.index; ++d) gap *= 2;
            if (prev.feature.dim(2) != gap * l.feature.dim(2) ||
                prev.feature.dim(3) != gap * l.feature.dim(3))
                throw ShapeError("pyramid level " + std::to_string(prev.index) + " is not " +
                                 std::to_string(gap) + "x the spatial size of level " +
                                 std::to_string(l.index));
        }
    }
}

CfpParams make_cfp(const LevelChannels& channels, const evc::EvcConfig& evc_cfg, const GcrConfig& cfg,
                   Rng& rng) {
    if (channels.empty()) throw ShapeError("make_cfp: no pyramid levels");
    for (std::size_t i = 1; i < channels.size(); ++i)
        if (channels[i].first <= channels[i - 1].first)
            throw ShapeError("make_cfp: level indices must be strictly ascending");
    const int deepest = channels.back().first;
    const int deep_ch = channels.back().second;
    const int out_ch = evc_cfg.stem_channels;

    auto channels_of = [&](int lvl) {
        for (const auto& [idx, ch] : channels)
            if (idx == lvl) return ch;
        throw ShapeError("make_cfp: regulated level " + std::to_string(lvl) + " missing from the pyramid");
    };

    CfpParams p;
    p.out_channels = out_ch;
    p.evc = evc::make_evc(deep_ch, evc_cfg, rng);

    std::vector<int> regulated = cfg.regulated_levels;
    std::sort(regulated.begin(), regulated.end(), std::greater<int>());
    for (int lvl : regulated) {
        if (lvl >= deepest)
            throw ShapeError("make_cfp: regulated level " + std::to_string(lvl) +
                             " is not shallower than the deepest level " + std::to_string(deepest));
        LevelRegParams lp;
        lp.level = lvl;
        lp.lateral = make_conv(channels_of(lvl), out_ch, 1, 1, 0, 1, /*bias=*/true, rng);
        lp.fuse = make_conv(2 * out_ch, out_ch, 1, 1, 0, 1, /*bias=*/true, rng);
        p.levels.push_back(std::move(lp));
    }

    // Repeats beyond the first see a pyramid whose deep and regulated levels
    // all carry out_ch channels; build the input-facing variants they need.
    if (cfg.repeat >= 2) {
        if (deep_ch != out_ch) p.stem_r2 = evc::make_stem(out_ch, out_ch, evc_cfg.eps, rng);
        for (auto& lp : p.levels)
            if (lp.lateral.in_channels != out_ch)
                lp.lateral_r2 = make_conv(out_ch, out_ch, 1, 1, 0, 1, /*bias=*/true, rng);
    }
    return p;
}

void visit_cfp(CfpParams& p, const ParamVisitor& v) {
    evc::visit_evc("evc", p.evc, v);
    for (auto& lp : p.levels) {
        std::string prefix = "gcr.level" + std::to_string(lp.level);
        visit_conv(prefix + ".lateral", lp.lateral, v);
        visit_conv(prefix + ".fuse", lp.fuse, v);
    }
    if (p.stem_r2) evc::visit_stem("evc.stem_r2", *p.stem_r2, v);
    for (auto& lp : p.levels)
        if (lp.lateral_r2)
            visit_conv("gcr.level" + std::to_string(lp.level) + ".lateral_r2", *lp.lateral_r2, v);
}

ModuleParams collect_cfp(CfpParams& p) {
    ModuleParams mp;
    visit_cfp(p, [&](const std::string& name, Tensor& t, ParamKind kind) { mp.add(name, t, kind); });
    return mp;
}

Pyramid cfp_forward(const Pyramid& input, const CfpParams& params, const GcrConfig& cfg, Mode mode,
                    Rng* rng) {
    validate_pyramid(input);
    EvalCtx<float> cx(mode, rng);
    LevelValues<EvalCtx<float>> in;
    in.reserve(input.levels.size());
    for (const auto& l : input.levels) in.emplace_back(l.index, cx.use(l.feature));
    auto out = cfp_forward(cx, in, params, cfg);
    Pyramid result;
    for (const auto& [idx, v] : out) result.levels.push_back({idx, cx.materialize(v)});
    return result;
}

} // namespace cfp::gcr
