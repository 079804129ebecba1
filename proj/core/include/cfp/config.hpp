#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfp/context.hpp"
#include "cfp/evc.hpp"
#include "cfp/gcr.hpp"

// Plain-text run configuration: `key=value` lines, blank lines and lines
// starting with '#' ignored. Unknown and duplicate keys are hard errors; an
// empty file reproduces every default.
namespace cfp::io {

struct RunConfig {
    int stem_channels = 256;
    int mlp_expansion = 4;
    int mlp_dconv_kernel = 1;
    int mlp_groupnorm_groups = 32;
    int lvc_codewords = 64;
    std::vector<int> gcr_levels{3, 2};
    int gcr_repeat = 1;
    float droppath = 0.0f;
    float eps = 1e-5f;
    std::uint64_t seed = 0;
    Mode mode = Mode::eval;

    evc::EvcConfig evc_config() const {
        return {stem_channels, mlp_expansion, mlp_dconv_kernel, mlp_groupnorm_groups,
                lvc_codewords, droppath,      eps};
    }
    gcr::GcrConfig gcr_config() const { return {gcr_levels, gcr_repeat, /*chained=*/false}; }
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical serialization: every key, fixed order, values that re-parse to
// the identical configuration.
std::string serialize_config(const RunConfig& cfg);

} // namespace cfp::io
