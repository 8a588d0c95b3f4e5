// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/encoder.hpp"

namespace frf {

namespace {

template <typename T>
Tensor<T> as_volume(const Tensor<T> &img) {
    return reshape(img, {img.dim(0), 1, img.dim(1), img.dim(2)});
}

template <typename T>
Tensor<T> as_image(const Tensor<T> &vol) {
    return reshape(vol, {vol.dim(0), vol.dim(2), vol.dim(3)});
}

// [C x h x w] <-> [h*w x C]
template <typename T>
Tensor<T> to_tokens(const Tensor<T> &fm) {
    return transpose2d(reshape(fm, {fm.dim(0), fm.dim(1) * fm.dim(2)}));
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T> &tok, std::int64_t h, std::int64_t w) {
    return reshape(transpose2d(tok), {tok.dim(1), h, w});
}

} // namespace

template <typename T>
ResidualBlock2d<T>::ResidualBlock2d(ParamBuilder<T> pb, std::int64_t c, Activation a)
    : c1(pb.scope("conv1"), c, c, {1, 3, 3}, true), c2(pb.scope("conv2"), c, c, {1, 3, 3}, true), act(a) {}

template <typename T>
Tensor<T> ResidualBlock2d<T>::operator()(const Tensor<T> &x) const {
    return activate(add(x, c2(activate(c1(x), act))), act);
}

template <typename T>
Encoder<T>::Encoder(ParamBuilder<T> pb, const EncoderConfig &cfg) : cfg_(cfg) {
    if (cfg.c8 % 4 != 0) throw ContractError("encoder c8 must be a multiple of 4 for the positional encoding");
    stem_ = Conv3d<T>(pb.scope("stem"), 3, cfg.c2, {1, 3, 3}, true);
    const int widths[6] = {cfg.c2, cfg.c2, cfg.c2, cfg.c2, cfg.c4, cfg.c4};
    for (int i = 0; i < 6; ++i) blocks_[i] = ResidualBlock2d<T>(pb.scope("block" + std::to_string(i + 1)), widths[i], cfg.act);
    down_[0] = Conv3d<T>(pb.scope("down1"), cfg.c2, cfg.c2, {1, 3, 3}, true, {1, 2, 2});
    down_[1] = Conv3d<T>(pb.scope("down2"), cfg.c2, cfg.c4, {1, 3, 3}, true, {1, 2, 2});
    down_[2] = Conv3d<T>(pb.scope("down3"), cfg.c4, cfg.c8, {1, 3, 3}, true, {1, 2, 2});
    for (int b = 0; b < cfg.transformer_blocks; ++b) {
        auto s = pb.scope("transformer" + std::to_string(b));
        TransformerBlock<T> tb;
        tb.ln_self = LayerNorm<T>(s.scope("ln_self"), cfg.c8);
        tb.ln_cross_q = LayerNorm<T>(s.scope("ln_cross_q"), cfg.c8);
        tb.ln_cross_kv = LayerNorm<T>(s.scope("ln_cross_kv"), cfg.c8);
        tb.ln_ffn = LayerNorm<T>(s.scope("ln_ffn"), cfg.c8);
        tb.self_attn = MultiHeadAttention<T>(s.scope("self_attn"), cfg.c8, cfg.heads);
        tb.cross_attn = MultiHeadAttention<T>(s.scope("cross_attn"), cfg.c8, cfg.heads);
        tb.ffn = FeedForward<T>(s.scope("ffn"), cfg.c8, cfg.ffn_mult, cfg.act);
        tblocks_.push_back(std::move(tb));
    }
}

template <typename T>
FeaturePyramid<T> Encoder<T>::encode_cnn(const Tensor<T> &image) const {
    if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("encode_cnn: expected [3 x H x W], got " + shape_str(image.shape()));
    if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0) {
        throw ContractError("encode_cnn: image size " + shape_str(image.shape()) + " must be a multiple of 8 (pad first)");
    }
    auto x = activate(stem_(as_volume(image)), cfg_.act);
    FeaturePyramid<T> out;
    x = blocks_[1](blocks_[0](x));
    x = activate(down_[0](x), cfg_.act);
    out.f2 = as_image(x);
    x = blocks_[3](blocks_[2](x));
    x = activate(down_[1](x), cfg_.act);
    out.f4 = as_image(x);
    x = blocks_[5](blocks_[4](x));
    x = activate(down_[2](x), cfg_.act);
    out.f8 = as_image(x);
    return out;
}

template <typename T>
std::vector<Tensor<T>> Encoder<T>::multiview_transformer(const std::vector<Tensor<T>> &f8) const {
    const std::size_t K = f8.size();
    if (K < 2) throw ContractError("multiview_transformer: need at least 2 views, got " + std::to_string(K));
    const auto &shape = f8[0].shape();
    for (const auto &f : f8) {
        if (f.shape() != shape) throw DimensionError("multiview_transformer: view shapes differ: " + shape_str(shape) + " vs " + shape_str(f.shape()));
    }
    const std::int64_t h = shape[1], w = shape[2];
    if (static_cast<std::int64_t>(K) * h * w > cfg_.max_tokens) {
        throw ContractError("multiview_transformer: " + std::to_string(K * h * w) + " tokens exceed max_tokens = " +
                            std::to_string(cfg_.max_tokens));
    }
    const auto pe = to_tokens(sinusoidal_2d<T>(shape[0], h, w));
    std::vector<Tensor<T>> tok(K);
    for (std::size_t k = 0; k < K; ++k) tok[k] = add(to_tokens(f8[k]), pe);

    for (const auto &tb : tblocks_) {
        for (std::size_t k = 0; k < K; ++k) {
            auto n = tb.ln_self(tok[k]);
            tok[k] = add(tok[k], tb.self_attn(n, n));
        }
        // All views read the same block input.
        std::vector<Tensor<T>> kv(K);
        for (std::size_t k = 0; k < K; ++k) kv[k] = tb.ln_cross_kv(tok[k]);
        std::vector<Tensor<T>> next(K);
        for (std::size_t k = 0; k < K; ++k) {
            std::vector<Tensor<T>> others;
            for (std::size_t o = 1; o < K; ++o) others.push_back(kv[(k + o) % K]);
            auto ctx = others.size() == 1 ? others[0] : concat(others, 0);
            next[k] = add(tok[k], tb.cross_attn(tb.ln_cross_q(tok[k]), ctx));
        }
        for (std::size_t k = 0; k < K; ++k) tok[k] = add(next[k], tb.ffn(tb.ln_ffn(next[k])));
    }
    std::vector<Tensor<T>> out(K);
    for (std::size_t k = 0; k < K; ++k) out[k] = from_tokens(tok[k], h, w);
    return out;
}

template <typename T>
std::vector<FeaturePyramid<T>> Encoder<T>::operator()(const std::vector<Tensor<T>> &images) const {
    std::vector<FeaturePyramid<T>> pyr;
    pyr.reserve(images.size());
    for (const auto &img : images) pyr.push_back(encode_cnn(img));
    if (images.size() >= 2) {
        std::vector<Tensor<T>> f8;
        for (const auto &p : pyr) f8.push_back(p.f8);
        auto t8 = multiview_transformer(f8);
        for (std::size_t k = 0; k < pyr.size(); ++k) pyr[k].t8 = t8[k];
    } else {
        for (auto &p : pyr) p.t8 = p.f8;
    }
    return pyr;
}

template struct ResidualBlock2d<float>;
template struct ResidualBlock2d<double>;
template class Encoder<float>;
template class Encoder<double>;

} // namespace frf
