#include "cfp/params.hpp"

#include <cmath>

namespace cfp {

ConvSpec make_conv(int in_ch, int out_ch, int k, int stride, int padding, int groups, bool bias, Rng& rng) {
    ConvSpec c;
    c.in_channels = in_ch;
    c.out_channels = out_ch;
    c.kh = c.kw = k;
    c.stride = stride;
    c.padding = padding;
    c.groups = groups;
    if (in_ch % groups != 0)
        throw ShapeError("conv: in_channels " + std::to_string(in_ch) + " not divisible by groups " +
                         std::to_string(groups));
    int cin_g = in_ch / groups;
    c.weight = Tensor({out_ch, cin_g, k, k});
    double bound = 1.0 / std::sqrt(static_cast<double>(cin_g) * k * k);
    rng.fill_uniform(c.weight.data(), -bound, bound);
    if (bias) c.bias = Tensor({out_ch});
    return c;
}

BatchNormParams make_bn(int channels, float eps) {
    BatchNormParams bn;
    bn.mean = Tensor({channels});
    bn.var = Tensor::full({channels}, 1.0f);
    bn.gamma = Tensor::full({channels}, 1.0f);
    bn.beta = Tensor({channels});
    bn.eps = eps;
    return bn;
}

int resolve_gn_groups(int groups_cfg, int channels) {
    int g = std::min(groups_cfg, channels);
    if (g < 1 || channels % g != 0)
        throw ShapeError("group_norm groups " + std::to_string(g) + " do not divide channels " +
                         std::to_string(channels));
    return g;
}

GroupNormParams make_gn(int channels, int groups_cfg, float eps) {
    GroupNormParams gn;
    gn.groups = resolve_gn_groups(groups_cfg, channels);
    gn.gamma = Tensor::full({channels}, 1.0f);
    gn.beta = Tensor({channels});
    gn.eps = eps;
    return gn;
}

Tensor make_linear_weight(int out_dim, int in_dim, Rng& rng) {
    Tensor w({out_dim, in_dim});
    double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    rng.fill_uniform(w.data(), -bound, bound);
    return w;
}

} // namespace cfp
