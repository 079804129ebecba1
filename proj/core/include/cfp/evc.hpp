#pragma once

#include <optional>
#include <string>

#include "cfp/context.hpp"
#include "cfp/params.hpp"

// Explicit Visual Center: a Stem that smooths the deepest pyramid feature to a
// fixed width, a lightweight-MLP branch (depthwise-conv residual block then
// channel-MLP residual block) for long-range structure, and an LVC branch
// (codebook soft-assignment encoder driving a sigmoid channel gate) for local
// detail. The branch outputs are concatenated along channels and projected
// back to the stem width.
namespace cfp::evc {

struct StemParams {
    ConvSpec conv; // 7x7, stride 1, padding 3
    BatchNormParams bn;
};

// Two residual blocks sharing one channel width. Each residual branch ends in
// a learnable per-channel scale followed by droppath.
struct MlpBlockParams {
    GroupNormParams gn1;
    ConvSpec dconv; // depthwise, same padding
    Tensor scale1;  // [C]
    float droppath1 = 0.0f;

    GroupNormParams gn2;
    Tensor fc1_w, fc1_b; // [C*expansion, C], [C*expansion]
    Tensor fc2_w, fc2_b; // [C, C*expansion], [C]
    kernels::Act cmlp_act = kernels::Act::silu;
    Tensor scale2; // [C]
    float droppath2 = 0.0f;
};

// K learnable codewords with per-codeword smoothing factors.
struct Codebook {
    Tensor codewords; // [K, C]
    Tensor scales;    // [K]

    std::int64_t count() const { return codewords.dim(0); }
    std::int64_t dim() const { return codewords.dim(1); }
};

struct LvcParams {
    // 1x1 -> 3x3 -> 1x1, each conv followed by BN + ReLU
    ConvSpec conv1, conv2, conv3;
    BatchNormParams bn1, bn2, bn3;
    // CBR: 3x3 conv + BN + ReLU
    ConvSpec cbr_conv;
    BatchNormParams cbr_bn;

    Codebook codebook;
    BatchNormParams phi_bn; // normalizes across the K codeword axis
    Tensor fc_w, fc_b;      // [C, C], [C]
    ConvSpec proj;          // 1x1 C -> C
};

struct EvcParams {
    StemParams stem;
    MlpBlockParams mlp;
    LvcParams lvc;
    ConvSpec fuse; // 1x1, 2C -> C
    int channels = 256;
};

struct EvcConfig {
    int stem_channels = 256;
    int mlp_expansion = 4;
    int mlp_dconv_kernel = 1;
    int mlp_gn_groups = 32;
    int codewords = 64;
    float droppath = 0.0f;
    float eps = 1e-5f;
};

StemParams make_stem(int in_channels, int out_channels, float eps, Rng& rng);
MlpBlockParams make_mlp_block(const EvcConfig& cfg, Rng& rng);
Codebook make_codebook(int codewords, int channels, Rng& rng);
LvcParams make_lvc(const EvcConfig& cfg, Rng& rng);
EvcParams make_evc(int in_channels, const EvcConfig& cfg, Rng& rng);

void visit_stem(const std::string& prefix, StemParams& p, const ParamVisitor& v);
void visit_mlp_block(const std::string& prefix, MlpBlockParams& p, const ParamVisitor& v);
void visit_codebook(const std::string& prefix, Codebook& p, const ParamVisitor& v);
void visit_lvc(const std::string& prefix, LvcParams& p, const ParamVisitor& v);
void visit_evc(const std::string& prefix, EvcParams& p, const ParamVisitor& v);

ModuleParams collect_evc(EvcParams& p, const std::string& prefix = "evc");

// -- forwards -----------------------------------------------------------------

template <class Ctx>
typename Ctx::V apply_conv(Ctx& cx, const typename Ctx::V& x, const ConvSpec& c) {
    std::optional<typename Ctx::V> b;
    if (c.bias) b = cx.use(*c.bias);
    return cx.conv2d(x, cx.use(c.weight), b, c.geom());
}

template <class Ctx>
typename Ctx::V apply_bn(Ctx& cx, const typename Ctx::V& x, const BatchNormParams& bn) {
    return cx.batch_norm_infer(x, cx.use(bn.mean), cx.use(bn.var), cx.use(bn.gamma), cx.use(bn.beta), bn.eps);
}

template <class Ctx>
typename Ctx::V apply_gn(Ctx& cx, const typename Ctx::V& x, const GroupNormParams& gn) {
    return cx.group_norm(x, gn.groups, cx.use(gn.gamma), cx.use(gn.beta), gn.eps);
}

template <class Ctx>
typename Ctx::V conv_bn_relu(Ctx& cx, const typename Ctx::V& x, const ConvSpec& c, const BatchNormParams& bn) {
    return cx.relu(apply_bn(cx, apply_conv(cx, x, c), bn));
}

// relu(BN(Conv7x7(x4))): smooths the deepest backbone feature to the stem width.
template <class Ctx>
typename Ctx::V stem_forward(Ctx& cx, const typename Ctx::V& x4, const StemParams& p) {
    return conv_bn_relu(cx, x4, p.conv, p.bn);
}

// droppath(scale1 * DConv(GN(x))) + x
template <class Ctx>
typename Ctx::V dconv_block_forward(Ctx& cx, const typename Ctx::V& x, const MlpBlockParams& p) {
    auto h = apply_gn(cx, x, p.gn1);
    h = apply_conv(cx, h, p.dconv);
    h = cx.channel_scale(h, cx.use(p.scale1));
    h = cx.droppath(h, p.droppath1);
    return cx.add(h, x);
}

// droppath(scale2 * CMLP(GN(x))) + x, with the channel MLP applied at every
// spatial position independently (realized as two 1x1 convolutions).
template <class Ctx>
typename Ctx::V channel_mlp_block_forward(Ctx& cx, const typename Ctx::V& x, const MlpBlockParams& p) {
    std::int64_t hidden = p.fc1_w.dim(0);
    std::int64_t ch = p.fc1_w.dim(1);
    auto h = apply_gn(cx, x, p.gn2);
    auto w1 = cx.reshape(cx.use(p.fc1_w), {hidden, ch, 1, 1});
    h = cx.conv2d(h, w1, cx.use(p.fc1_b), kernels::Conv2dGeom{1, 0, 1});
    h = cx.act(h, p.cmlp_act);
    auto w2 = cx.reshape(cx.use(p.fc2_w), {ch, hidden, 1, 1});
    h = cx.conv2d(h, w2, cx.use(p.fc2_b), kernels::Conv2dGeom{1, 0, 1});
    h = cx.channel_scale(h, cx.use(p.scale2));
    h = cx.droppath(h, p.droppath2);
    return cx.add(h, x);
}

template <class Ctx>
typename Ctx::V lightweight_mlp_forward(Ctx& cx, const typename Ctx::V& x, const MlpBlockParams& p) {
    return channel_mlp_block_forward(cx, dconv_block_forward(cx, x, p), p);
}

// Codebook encoding of already-encoded features xhat [B, C, H, W]:
// per-codeword soft-assigned residual aggregates, then BN over the K axis,
// ReLU, and the mean across codewords. Returns [B, C].
template <class Ctx>
typename Ctx::V lvc_encode(Ctx& cx, const typename Ctx::V& xhat, const Codebook& cb,
                           const BatchNormParams& phi_bn) {
    auto ek = cx.codebook_aggregate(xhat, cx.use(cb.codewords), cx.use(cb.scales)); // [B, K, C]
    const Shape& s = Ctx::shape(ek);
    auto h = cx.reshape(ek, {s[0], s[1], s[2], 1});
    h = apply_bn(cx, h, phi_bn); // channel axis = K
    h = cx.relu(h);
    h = cx.reshape(h, {s[0], s[1], s[2]});
    return cx.mean_axis(h, 1);
}

// x_in + x_in * sigmoid(proj(fc(e))): the encoded statistics gate the stem
// output channel-wise, then add back residually.
template <class Ctx>
typename Ctx::V lvc_forward(Ctx& cx, const typename Ctx::V& x_in, const LvcParams& p) {
    auto h = conv_bn_relu(cx, x_in, p.conv1, p.bn1);
    h = conv_bn_relu(cx, h, p.conv2, p.bn2);
    h = conv_bn_relu(cx, h, p.conv3, p.bn3);
    h = conv_bn_relu(cx, h, p.cbr_conv, p.cbr_bn);

    auto e = lvc_encode(cx, h, p.codebook, p.phi_bn); // [B, C]
    auto f = cx.linear(e, cx.use(p.fc_w), cx.use(p.fc_b));
    const Shape& s = Ctx::shape(f);
    auto g = cx.reshape(f, {s[0], s[1], 1, 1});
    g = apply_conv(cx, g, p.proj);
    g = cx.reshape(g, {s[0], s[1]});
    auto w = cx.sigmoid(g); // per-sample channel weights in (0,1)

    auto z = cx.channel_scale(x_in, w);
    return cx.add(x_in, z);
}

// cat(MLP(x_in); LVC(x_in)) along channels, then 1x1-projected back to C.
// `stem_override` lets a caller swap in a stem built for a different input
// width while sharing the rest of the parameters.
template <class Ctx>
typename Ctx::V evc_forward(Ctx& cx, const typename Ctx::V& x4, const EvcParams& p,
                            const StemParams* stem_override = nullptr) {
    const StemParams& stem = stem_override ? *stem_override : p.stem;
    auto x_in = stem_forward(cx, x4, stem);
    auto m = lightweight_mlp_forward(cx, x_in, p.mlp);
    auto l = lvc_forward(cx, x_in, p.lvc);
    auto cat = cx.concat_channels({m, l});
    return apply_conv(cx, cat, p.fuse);
}

} // namespace cfp::evc
