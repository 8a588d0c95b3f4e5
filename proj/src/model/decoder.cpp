// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace frf {

std::vector<Int3> block_kernels(DecoderKind kind) {
    switch (kind) {
    case DecoderKind::plus21d: return {{1, 3, 3}, {3, 1, 1}};
    case DecoderKind::conv3d: return {{3, 3, 3}};
    case DecoderKind::conv2d: return {{1, 3, 3}};
    case DecoderKind::conv1d: return {{3, 1, 1}};
    case DecoderKind::mlp: return {{1, 1, 1}, {1, 1, 1}};
    case DecoderKind::ray_transformer: return {};
    }
    return {};
}

std::int64_t block_weight_count(DecoderKind kind, std::int64_t C) {
    if (kind == DecoderKind::ray_transformer) {
        // q, k, v, o projections plus a 2x feed-forward, weights only.
        return 4 * C * C + 2 * (C * 2 * C);
    }
    std::int64_t n = 0;
    for (const auto &k : block_kernels(kind)) n += static_cast<std::int64_t>(k[0]) * k[1] * k[2] * C * C;
    return n;
}

int receptive_field_radius(const DecoderConfig &cfg, int s) {
    int spatial_per_block = 0;
    for (const auto &k : block_kernels(cfg.kind)) spatial_per_block += std::max(k[1], k[2]) / 2;
    return cfg.blocks * spatial_per_block * (cfg.kind == DecoderKind::ray_transformer ? 0 : 1) + (s > 1 ? 1 : 0);
}

template <typename T>
Decoder<T>::Decoder(ParamBuilder<T> pb, const DecoderConfig &cfg, int in_channels, int s)
    : cfg_(cfg), in_channels_(in_channels), s_(s) {
    if (s < 1) throw ContractError("decoder: subsample factor must be >= 1");
    const int C = cfg.width;
    in_proj_ = Conv3d<T>(pb.scope("in_proj"), in_channels, C, {1, 1, 1}, true);
    if (cfg.kind == DecoderKind::ray_transformer) {
        if (C % 2 != 0) throw ContractError("decoder: ray transformer width must be even");
        for (int b = 0; b < cfg.rt_blocks; ++b) {
            auto sb = pb.scope("ray_block" + std::to_string(b));
            RayBlock rb;
            rb.ln1 = LayerNorm<T>(sb.scope("ln1"), C);
            rb.ln2 = LayerNorm<T>(sb.scope("ln2"), C);
            rb.q = Linear<T>(sb.scope("q"), C, C);
            rb.k = Linear<T>(sb.scope("k"), C, C);
            rb.v = Linear<T>(sb.scope("v"), C, C);
            rb.o = Linear<T>(sb.scope("o"), C, C);
            rb.ffn = FeedForward<T>(sb.scope("ffn"), C, 2, cfg.act);
            ray_blocks_.push_back(std::move(rb));
        }
        if (C % cfg.rt_heads != 0) throw ContractError("decoder: ray transformer width not divisible by heads");
    } else {
        const auto kernels = block_kernels(cfg.kind);
        for (int b = 0; b < cfg.blocks; ++b) {
            auto sb = pb.scope("block" + std::to_string(b));
            ConvBlock blk;
            for (std::size_t i = 0; i < kernels.size(); ++i) {
                blk.convs.emplace_back(sb.scope("conv" + std::to_string(i)), C, C, kernels[i], false);
                blk.norms.emplace_back(sb.scope("norm" + std::to_string(i)), C);
            }
            blocks_.push_back(std::move(blk));
        }
    }
    int head_in = C;
    if (s > 1) {
        up_ = Conv3d<T>(pb.scope("upsampler"), C, static_cast<std::int64_t>(s) * s * cfg.up_channels, {1, 3, 3}, true);
        head_in = cfg.up_channels;
    }
    color_head_ = Conv3d<T>(pb.scope("color_head"), head_in, 3, {1, 1, 1}, true);
    density_head_ = Conv3d<T>(pb.scope("density_head"), head_in, 1, {1, 1, 1}, true);
}

template <typename T>
Tensor<T> Decoder<T>::trunk(const Tensor<T> &volume) const {
    if (volume.rank() != 4 || volume.dim(0) != in_channels_) {
        throw ContractError("decoder: expected volume with " + std::to_string(in_channels_) + " channels, got " +
                            shape_str(volume.shape()));
    }
    auto x = in_proj_(volume);
    if (cfg_.kind == DecoderKind::ray_transformer) {
        const std::int64_t C = x.dim(0), D = x.dim(1), h = x.dim(2), w = x.dim(3), R = h * w;
        const std::int64_t H = cfg_.rt_heads, dh = C / H;
        // [C x D x R] -> [R x D x C] tokens with a depth encoding.
        auto tok = add(permute(reshape(x, {C, D, R}), {2, 1, 0}), reshape(sinusoidal_1d<T>(D, C), {1, D, C}));
        tok = reshape(tok, {R * D, C});
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        auto heads = [&](const Tensor<T> &t) { return reshape(permute(reshape(t, {R, D, H, dh}), {0, 2, 1, 3}), {R * H, D, dh}); };
        for (const auto &b : ray_blocks_) {
            auto n = b.ln1(tok);
            auto q = heads(b.q(n)), k = heads(b.k(n)), v = heads(b.v(n));
            auto a = softmax(mul_scalar(bmm(q, k, true), scale), 2);
            auto o = reshape(permute(reshape(bmm(a, v), {R, H, D, dh}), {0, 2, 1, 3}), {R * D, C});
            tok = add(tok, b.o(o));
            tok = add(tok, b.ffn(b.ln2(tok)));
        }
        return reshape(permute(reshape(tok, {R, D, C}), {2, 1, 0}), {C, D, h, w});
    }
    for (const auto &blk : blocks_) {
        auto y = x;
        for (std::size_t i = 0; i < blk.convs.size(); ++i) y = activate(blk.norms[i](blk.convs[i](y)), cfg_.act);
        x = add(x, y);
    }
    return x;
}

template <typename T>
RadianceField<T> Decoder<T>::head(const Tensor<T> &features) const {
    auto x = features;
    if (s_ > 1) x = activate(pixel_shuffle(up_(x), s_), cfg_.act);
    RadianceField<T> f;
    f.color = sigmoid(color_head_(x));
    f.density = softplus(density_head_(x));
    return f;
}

template <typename T>
RadianceField<T> Decoder<T>::operator()(const Tensor<T> &volume) const {
    return head(trunk(volume));
}

template <typename T>
FineUNet<T>::FineUNet(ParamBuilder<T> pb, const FineConfig &cfg, Activation act) : cfg_(cfg), act_(act) {
    const int c0 = cfg.channels, c1 = cfg.c1, c2 = cfg.c2;
    e0_ = Conv3d<T>(pb.scope("enc0"), c0, c0, {3, 3, 3}, false);
    e1_ = Conv3d<T>(pb.scope("enc1"), c0, c1, {3, 3, 3}, false, {2, 2, 2});
    e2_ = Conv3d<T>(pb.scope("enc2"), c1, c2, {3, 3, 3}, false, {2, 2, 2});
    u1_ = Conv3d<T>(pb.scope("dec1"), c2 + c1, c1, {3, 3, 3}, false);
    u0_ = Conv3d<T>(pb.scope("dec0"), c1 + c0, c0, {3, 3, 3}, false);
    n0_ = ChannelNorm<T>(pb.scope("enc0_norm"), c0);
    n1_ = ChannelNorm<T>(pb.scope("enc1_norm"), c1);
    n2_ = ChannelNorm<T>(pb.scope("enc2_norm"), c2);
    m1_ = ChannelNorm<T>(pb.scope("dec1_norm"), c1);
    m0_ = ChannelNorm<T>(pb.scope("dec0_norm"), c0);
    color_head_ = Conv3d<T>(pb.scope("color_head"), c0, 3, {1, 1, 1}, true);
    density_head_ = Conv3d<T>(pb.scope("density_head"), c0, 1, {1, 1, 1}, true);
}

template <typename T>
RadianceField<T> FineUNet<T>::operator()(const Tensor<T> &volume) const {
    if (volume.rank() != 4 || volume.dim(0) != cfg_.channels) {
        throw ContractError("fine_unet: expected " + std::to_string(cfg_.channels) + " channels, got " + shape_str(volume.shape()));
    }
    for (int a = 1; a <= 3; ++a) {
        if (volume.dim(a) % 4 != 0) throw ContractError("fine_unet: spatial size " + shape_str(volume.shape()) + " must be divisible by 4");
    }
    // Stride-2 convolutions use padding 1 so sizes halve exactly.
    auto down = [](const Conv3d<T> &c, const Tensor<T> &x) { return conv3d(x, c.w, c.b, {2, 2, 2}, {1, 1, 1}); };
    auto e0 = activate(n0_(e0_(volume)), act_);
    auto e1 = activate(n1_(down(e1_, e0)), act_);
    auto e2 = activate(n2_(down(e2_, e1)), act_);
    auto u1 = activate(m1_(u1_(concat<T>({upsample_nearest(e2, {2, 2, 2}), e1}, 0))), act_);
    auto u0 = activate(m0_(u0_(concat<T>({upsample_nearest(u1, {2, 2, 2}), e0}, 0))), act_);
    RadianceField<T> f;
    f.color = sigmoid(color_head_(u0));
    f.density = softplus(density_head_(u0));
    return f;
}

template class Decoder<float>;
template class Decoder<double>;
template class FineUNet<float>;
template class FineUNet<double>;

} // namespace frf
