#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfp/kernels.hpp"
#include "cfp/rng.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

// Convolution parameters plus geometry.
// weights: [out, in/groups, kh, kw]; depthwise means groups == in == out.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kh = 1, kw = 1;
    int stride = 1;
    int padding = 0;
    int groups = 1;
    Tensor weight;
    std::optional<Tensor> bias;

    kernels::Conv2dGeom geom() const { return {stride, padding, groups}; }
    bool depthwise() const { return groups == in_channels && groups == out_channels; }
};

// Inference-mode batch norm: running statistics are buffers, affine is trainable.
struct BatchNormParams {
    Tensor mean, var, gamma, beta;
    float eps = 1e-5f;
};

struct GroupNormParams {
    int groups = 1;
    Tensor gamma, beta;
    float eps = 1e-5f;
};

enum class ParamKind { weight, bias, norm_affine, codebook, scale, buffer };

inline bool trainable(ParamKind k) { return k != ParamKind::buffer; }

struct ParamRef {
    std::string name;
    Tensor* tensor = nullptr;
    ParamKind kind = ParamKind::weight;
};

// Flattened named parameter tree of a block: countable, serializable,
// loadable. Collected in a deterministic order by each block's visit().
struct ModuleParams {
    std::vector<ParamRef> entries;

    void add(std::string name, Tensor& t, ParamKind kind) { entries.push_back({std::move(name), &t, kind}); }

    std::int64_t trainable_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries)
            if (trainable(e.kind)) n += e.tensor->numel();
        return n;
    }
    std::int64_t buffer_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries)
            if (!trainable(e.kind)) n += e.tensor->numel();
        return n;
    }

    const ParamRef* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

using ParamVisitor = std::function<void(const std::string& name, Tensor& t, ParamKind kind)>;

inline void visit_conv(const std::string& prefix, ConvSpec& c, const ParamVisitor& v) {
    v(prefix + ".weight", c.weight, ParamKind::weight);
    if (c.bias) v(prefix + ".bias", *c.bias, ParamKind::bias);
}

inline void visit_bn(const std::string& prefix, BatchNormParams& bn, const ParamVisitor& v) {
    v(prefix + ".gamma", bn.gamma, ParamKind::norm_affine);
    v(prefix + ".beta", bn.beta, ParamKind::norm_affine);
    v(prefix + ".running_mean", bn.mean, ParamKind::buffer);
    v(prefix + ".running_var", bn.var, ParamKind::buffer);
}

inline void visit_gn(const std::string& prefix, GroupNormParams& gn, const ParamVisitor& v) {
    v(prefix + ".gamma", gn.gamma, ParamKind::norm_affine);
    v(prefix + ".beta", gn.beta, ParamKind::norm_affine);
}

// -- seeded initializers ------------------------------------------------------

// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero bias.
ConvSpec make_conv(int in_ch, int out_ch, int k, int stride, int padding, int groups, bool bias, Rng& rng);

BatchNormParams make_bn(int channels, float eps);

GroupNormParams make_gn(int channels, int groups_cfg, float eps);

Tensor make_linear_weight(int out_dim, int in_dim, Rng& rng);

// Resolves the configured group count against a channel width: min(cfg, C),
// which must divide C.
int resolve_gn_groups(int groups_cfg, int channels);

} // namespace cfp
