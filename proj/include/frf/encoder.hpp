// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/config.hpp"
#include "frf/nn.hpp"

#include <vector>

namespace frf {

/// Per-view features at 1/2, 1/4 and 1/8 resolution, each [C x h x w].
template <typename T>
struct FeaturePyramid {
    Tensor<T> f2, f4, f8;
    Tensor<T> t8; // transformer-refined f8
};

/// act(x + conv(act(conv(x)))) with 3x3 spatial kernels.
template <typename T>
struct ResidualBlock2d {
    Conv3d<T> c1, c2;
    Activation act = Activation::silu;
    ResidualBlock2d() = default;
    ResidualBlock2d(ParamBuilder<T> pb, std::int64_t c, Activation a);
    Tensor<T> operator()(const Tensor<T> &x) const;
};

template <typename T>
struct TransformerBlock {
    LayerNorm<T> ln_self, ln_cross_q, ln_cross_kv, ln_ffn;
    MultiHeadAttention<T> self_attn, cross_attn;
    FeedForward<T> ffn;
};

/// Residual CNN pyramid shared across views followed by joint multi-view
/// attention on the 1/8 features.
template <typename T>
class Encoder {
public:
    Encoder(ParamBuilder<T> pb, const EncoderConfig &cfg);

    /// CNN pyramid for one [3 x H x W] image (H, W multiples of 8); t8 is unset.
    FeaturePyramid<T> encode_cnn(const Tensor<T> &image) const;

    /// Self-attention within each view, then cross-attention from each view
    /// to the other K-1 views (taken in cyclic order k+1, ..., k-1).
    std::vector<Tensor<T>> multiview_transformer(const std::vector<Tensor<T>> &f8) const;

    /// Full encoder: CNN on every view, then the joint transformer.
    std::vector<FeaturePyramid<T>> operator()(const std::vector<Tensor<T>> &images) const;

    const EncoderConfig &config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    Conv3d<T> stem_;
    ResidualBlock2d<T> blocks_[6];
    Conv3d<T> down_[3];
    std::vector<TransformerBlock<T>> tblocks_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;

} // namespace frf
