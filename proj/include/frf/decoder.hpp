// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/config.hpp"
#include "frf/nn.hpp"

#include <vector>

namespace frf {

/// Color [3 x D x H x W] in [0, 1] and density [1 x D x H x W] >= 0.
template <typename T>
struct RadianceField {
    Tensor<T> color;
    Tensor<T> density;
};

/// Kernel shapes (depth, y, x) of the convolutions inside one residual block.
std::vector<Int3> block_kernels(DecoderKind kind);

/// Weight count of one residual block at width C (convolutions are bias
/// free; normalization affine parameters excluded).
std::int64_t block_weight_count(DecoderKind kind, std::int64_t C);

/// Spatial receptive-field radius in low-resolution cells of the decoder
/// before the heads: the number of cells a perturbation can travel in y or x.
int receptive_field_radius(const DecoderConfig &cfg, int s);

/// Volume decoder: per-cell input projection, residual context blocks of the
/// configured kind, pixel-shuffle upsampler (s > 1) and sigmoid/softplus heads.
template <typename T>
class Decoder {
public:
    Decoder(ParamBuilder<T> pb, const DecoderConfig &cfg, int in_channels, int s);

    /// volume [C x D x h x w] -> field at [D x s h x s w].
    RadianceField<T> operator()(const Tensor<T> &volume) const;

    /// Low-resolution features after the residual blocks, [width x D x h x w].
    Tensor<T> trunk(const Tensor<T> &volume) const;
    /// Upsampler and heads applied to trunk output.
    RadianceField<T> head(const Tensor<T> &features) const;

    const DecoderConfig &config() const { return cfg_; }
    int subsample() const { return s_; }

private:
    struct ConvBlock {
        std::vector<Conv3d<T>> convs;
        std::vector<ChannelNorm<T>> norms;
    };
    struct RayBlock {
        LayerNorm<T> ln1, ln2;
        Linear<T> q, k, v, o;
        FeedForward<T> ffn;
    };

    DecoderConfig cfg_;
    int in_channels_;
    int s_;
    Conv3d<T> in_proj_;
    std::vector<ConvBlock> blocks_;
    std::vector<RayBlock> ray_blocks_;
    Conv3d<T> up_;
    Conv3d<T> color_head_, density_head_;
};

/// Two-level 3D U-Net for the full-resolution fine volume.
template <typename T>
class FineUNet {
public:
    FineUNet(ParamBuilder<T> pb, const FineConfig &cfg, Activation act);

    /// volume [C x D x H x W] with D, H, W divisible by 4.
    RadianceField<T> operator()(const Tensor<T> &volume) const;

    /// Bottleneck convolution, exposed for path-ablation probes.
    Conv3d<T> &bottleneck() { return e2_; }

private:
    FineConfig cfg_;
    Activation act_;
    Conv3d<T> e0_, e1_, e2_, u1_, u0_;
    ChannelNorm<T> n0_, n1_, n2_, m1_, m0_;
    Conv3d<T> color_head_, density_head_;
};

extern template class Decoder<float>;
extern template class Decoder<double>;
extern template class FineUNet<float>;
extern template class FineUNet<double>;

} // namespace frf
