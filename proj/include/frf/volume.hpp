// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/config.hpp"
#include "frf/encoder.hpp"
#include "frf/geometry.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace frf {

/// Sample points of a frustum volume, ray-major: point r * D + d is sample d
/// of ray r, with r = i * w + j on an h x w ray grid.
struct SampleGrid {
    int D = 0, h = 0, w = 0;
    std::vector<Vec3> points;
    Vec3 eye{}; // camera whose viewing directions enter the aggregation weights
    std::int64_t num_rays() const { return static_cast<std::int64_t>(h) * w; }
    std::int64_t num_cells() const { return num_rays() * D; }
};

/// Points at the shared plane depths of `rays`.
SampleGrid grid_from_rays(const RayBundle &rays);
/// Points at per-ray depths [R x D] (ray-major) along the directions of `rays`.
SampleGrid grid_from_depths(const RayBundle &rays, const std::vector<double> &depths, int D);

/// Input views with images converted to the working precision and their
/// encoder features.
template <typename T>
struct SourceViews {
    std::vector<CameraView> cams;
    std::vector<Tensor<T>> images; // [3 x H x W]
    std::vector<FeaturePyramid<T>> pyramids;
    int size() const { return static_cast<int>(cams.size()); }
};

template <typename T>
struct FrustumVolume {
    Tensor<T> z; // [C x D x h x w]
    int K = 0, D = 0, h = 0, w = 0;
    std::vector<std::uint8_t> validity; // [K x D x h x w]
};

/// Colors of a win x win window of unit pixel offsets around each center,
/// centers given as continuous pixel coordinates (u, v) with pixel centers
/// at half-integers. Result [N x 3 win^2], ordered window row, column, then
/// channel. Out-of-image taps are zero; `valid` flags centers inside the image.
template <typename T>
SampleResult<T> sample_color_window(const Tensor<T> &image, const std::vector<std::pair<double, double>> &centers, int win);

/// Group-wise cosine similarity between every pair of views.
/// feats [K x N x M], valid [K * N] -> [N x G x P], P = K(K-1)/2 pairs in
/// (i < j) lexicographic order. Pairs with an invalid member are zero.
template <typename T>
Tensor<T> pairwise_group_cosine(const Tensor<T> &feats, int groups, const std::vector<std::uint8_t> &valid);

/// (i, j) for every pair i < j, in the order used by pairwise_group_cosine.
std::vector<std::pair<int, int>> view_pairs(int K);

/// Entropy-based pair weights. cos [R x D x G x P] along each of R rays ->
/// weights [R x P], softmax over pairs of a*(-H) + b with H the entropy of
/// the softmax over depth of the group-mean score. `pair_mask` [R * P] marks
/// pairs with at least one valid sample on the ray; masked pairs get 0.
template <typename T>
Tensor<T> visibility_weights(const Tensor<T> &cos, const Tensor<T> &a, const Tensor<T> &b,
                             const std::vector<std::uint8_t> &pair_mask);

/// Builds the frustum volume from multi-view colors, features and matching
/// cues. Owns the aggregation MLP, visibility scalars and output projection.
template <typename T>
class VolumeBuilder {
public:
    VolumeBuilder(ParamBuilder<T> pb, const VolumeConfig &cfg, int feature_width);

    FrustumVolume<T> build(const SourceViews<T> &views, const SampleGrid &grid) const;

    /// Weights over views for per-view inputs [K x N x (2M + 4)], with
    /// `valid` [K * N]; returns [N x K].
    Tensor<T> aggregation_weights(const Tensor<T> &feats, const Tensor<T> &dir_feats,
                                  const std::vector<std::uint8_t> &valid) const;

    const VolumeConfig &config() const { return cfg_; }
    const Tensor<T> &vis_a() const { return vis_a_; }
    const Tensor<T> &vis_b() const { return vis_b_; }

private:
    Tensor<T> build_chunk(const SourceViews<T> &views, const SampleGrid &grid, std::int64_t ray0, std::int64_t rays,
                          std::vector<std::uint8_t> &validity) const;

    VolumeConfig cfg_;
    int feature_width_;
    Linear<T> agg1_, agg2_;
    Tensor<T> vis_a_, vis_b_;
    Linear<T> proj_;
};

extern template class VolumeBuilder<float>;
extern template class VolumeBuilder<double>;

} // namespace frf
