#include "cfp/evc.hpp"

#include <cmath>

namespace cfp::evc {

namespace {

constexpr float kChannelScaleInit = 1e-6f; // near-identity residual start

Tensor make_channel_scale(int channels) { return Tensor::full({channels}, kChannelScaleInit); }

} // namespace

StemParams make_stem(int in_channels, int out_channels, float eps, Rng& rng) {
    StemParams p;
    p.conv = make_conv(in_channels, out_channels, /*k=*/7, /*stride=*/1, /*padding=*/3, /*groups=*/1,
                       /*bias=*/true, rng);
    p.bn = make_bn(out_channels, eps);
    return p;
}

MlpBlockParams make_mlp_block(const EvcConfig& cfg, Rng& rng) {
    const int ch = cfg.stem_channels;
    if (cfg.mlp_dconv_kernel < 1 || cfg.mlp_dconv_kernel % 2 == 0)
        throw ShapeError("depthwise kernel must be odd to preserve spatial size, got " +
                         std::to_string(cfg.mlp_dconv_kernel));
    MlpBlockParams p;
    p.gn1 = make_gn(ch, cfg.mlp_gn_groups, cfg.eps);
    p.dconv = make_conv(ch, ch, cfg.mlp_dconv_kernel, 1, (cfg.mlp_dconv_kernel - 1) / 2, /*groups=*/ch,
                        /*bias=*/true, rng);
    p.scale1 = make_channel_scale(ch);
    p.droppath1 = cfg.droppath;

    const int hidden = ch * cfg.mlp_expansion;
    p.gn2 = make_gn(ch, cfg.mlp_gn_groups, cfg.eps);
    p.fc1_w = make_linear_weight(hidden, ch, rng);
    p.fc1_b = Tensor({hidden});
    p.fc2_w = make_linear_weight(ch, hidden, rng);
    p.fc2_b = Tensor({ch});
    p.scale2 = make_channel_scale(ch);
    p.droppath2 = cfg.droppath;
    return p;
}

Codebook make_codebook(int codewords, int channels, Rng& rng) {
    if (codewords < 1) throw ShapeError("codebook needs K >= 1");
    Codebook cb;
    cb.codewords = Tensor({codewords, channels});
    double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    rng.fill_uniform(cb.codewords.data(), -bound, bound);
    cb.scales = Tensor::full({codewords}, 1.0f);
    return cb;
}

LvcParams make_lvc(const EvcConfig& cfg, Rng& rng) {
    const int ch = cfg.stem_channels;
    LvcParams p;
    p.conv1 = make_conv(ch, ch, 1, 1, 0, 1, true, rng);
    p.bn1 = make_bn(ch, cfg.eps);
    p.conv2 = make_conv(ch, ch, 3, 1, 1, 1, true, rng);
    p.bn2 = make_bn(ch, cfg.eps);
    p.conv3 = make_conv(ch, ch, 1, 1, 0, 1, true, rng);
    p.bn3 = make_bn(ch, cfg.eps);
    p.cbr_conv = make_conv(ch, ch, 3, 1, 1, 1, true, rng);
    p.cbr_bn = make_bn(ch, cfg.eps);
    p.codebook = make_codebook(cfg.codewords, ch, rng);
    p.phi_bn = make_bn(cfg.codewords, cfg.eps);
    p.fc_w = make_linear_weight(ch, ch, rng);
    p.fc_b = Tensor({ch});
    p.proj = make_conv(ch, ch, 1, 1, 0, 1, true, rng);
    return p;
}

EvcParams make_evc(int in_channels, const EvcConfig& cfg, Rng& rng) {
    EvcParams p;
    p.channels = cfg.stem_channels;
    p.stem = make_stem(in_channels, cfg.stem_channels, cfg.eps, rng);
    p.mlp = make_mlp_block(cfg, rng);
    p.lvc = make_lvc(cfg, rng);
    p.fuse = make_conv(2 * cfg.stem_channels, cfg.stem_channels, 1, 1, 0, 1, true, rng);
    return p;
}

void visit_stem(const std::string& prefix, StemParams& p, const ParamVisitor& v) {
    visit_conv(prefix + ".conv", p.conv, v);
    visit_bn(prefix + ".bn", p.bn, v);
}

void visit_mlp_block(const std::string& prefix, MlpBlockParams& p, const ParamVisitor& v) {
    visit_gn(prefix + ".gn1", p.gn1, v);
    visit_conv(prefix + ".dconv", p.dconv, v);
    v(prefix + ".scale1", p.scale1, ParamKind::scale);
    visit_gn(prefix + ".gn2", p.gn2, v);
    v(prefix + ".cmlp.fc1.weight", p.fc1_w, ParamKind::weight);
    v(prefix + ".cmlp.fc1.bias", p.fc1_b, ParamKind::bias);
    v(prefix + ".cmlp.fc2.weight", p.fc2_w, ParamKind::weight);
    v(prefix + ".cmlp.fc2.bias", p.fc2_b, ParamKind::bias);
    v(prefix + ".scale2", p.scale2, ParamKind::scale);
}

void visit_codebook(const std::string& prefix, Codebook& p, const ParamVisitor& v) {
    v(prefix + ".codewords", p.codewords, ParamKind::codebook);
    v(prefix + ".scales", p.scales, ParamKind::codebook);
}

void visit_lvc(const std::string& prefix, LvcParams& p, const ParamVisitor& v) {
    visit_conv(prefix + ".conv1", p.conv1, v);
    visit_bn(prefix + ".bn1", p.bn1, v);
    visit_conv(prefix + ".conv2", p.conv2, v);
    visit_bn(prefix + ".bn2", p.bn2, v);
    visit_conv(prefix + ".conv3", p.conv3, v);
    visit_bn(prefix + ".bn3", p.bn3, v);
    visit_conv(prefix + ".cbr.conv", p.cbr_conv, v);
    visit_bn(prefix + ".cbr.bn", p.cbr_bn, v);
    visit_codebook(prefix + ".codebook", p.codebook, v);
    visit_bn(prefix + ".phi_bn", p.phi_bn, v);
    v(prefix + ".fc.weight", p.fc_w, ParamKind::weight);
    v(prefix + ".fc.bias", p.fc_b, ParamKind::bias);
    visit_conv(prefix + ".proj", p.proj, v);
}

void visit_evc(const std::string& prefix, EvcParams& p, const ParamVisitor& v) {
    visit_stem(prefix + ".stem", p.stem, v);
    visit_mlp_block(prefix + ".mlp", p.mlp, v);
    visit_lvc(prefix + ".lvc", p.lvc, v);
    visit_conv(prefix + ".fuse", p.fuse, v);
}

ModuleParams collect_evc(EvcParams& p, const std::string& prefix) {
    ModuleParams mp;
    visit_evc(prefix, p, [&](const std::string& name, Tensor& t, ParamKind kind) { mp.add(name, t, kind); });
    return mp;
}

} // namespace cfp::evc
