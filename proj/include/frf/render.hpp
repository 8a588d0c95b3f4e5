// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/geometry.hpp"
#include "frf/tensor.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace frf {

/// Rendered image plus per-sample compositing weights. Only `rgb` carries
/// gradients.
template <typename T>
struct RenderOutput {
    int H = 0, W = 0, D = 0;
    Tensor<T> rgb;     // [3 x H x W]
    Tensor<T> depth;   // [H x W], camera z
    Tensor<T> opacity; // [H x W]
    Tensor<T> weights; // [D x H x W]
};

/// Per-ray samples for compositing, ray-major [N x D].
struct RaySamples {
    int N = 0, D = 0;
    std::vector<double> t;      // sample depth (camera z)
    std::vector<double> deltas; // sample spacing along the ray
};

/// Samples at shared plane depths: t[r][d] = depths[d], deltas from the bundle.
RaySamples samples_from_rays(const RayBundle &rays);
/// Samples at per-ray sorted depths [N x D]; deltas are the gaps to the
/// next sample times |dir|, with the last gap replicated.
RaySamples samples_from_depths(const RayBundle &rays, const std::vector<double> &depths, int D);

/// Front-to-back alpha compositing over black. density [1 x D x N...] and
/// color [3 x D x N...] (trailing axes flattened to N rays, N = H*W) give
/// rgb [3 x H x W] with
///   alpha_d = 1 - exp(-sigma_d delta_d), T_d = prod_{e<d} (1 - alpha_e),
///   w_d = T_d alpha_d, rgb = sum_d w_d c_d,
/// depth = sum_d w_d t_d / max(sum_d w_d, 1e-8). Negative density is a
/// ContractError. Gradients flow from rgb into density and color.
template <typename T>
RenderOutput<T> composite(const Tensor<T> &density, const Tensor<T> &color, const RaySamples &samples, int H, int W);

/// Depth bin edges around plane centers: midpoints between neighbours and
/// half a gap beyond the ends.
std::vector<double> bin_edges(const std::vector<double> &centers);

/// Inverse-CDF resampling of `n` depths from the piecewise-constant PDF
/// (weights + 1e-5) over the depth bins of `depths`. Stratified uniforms
/// u_k = (k + xi_k) / n, with xi_k = 0.5 when `rng` is null. Sorted.
std::vector<double> pdf_resample(const std::vector<double> &weights, const std::vector<double> &depths, int n,
                                 std::mt19937_64 *rng = nullptr);

struct DepthNormal {
    int H = 0, W = 0;
    std::vector<double> depth;      // [H x W]
    std::vector<Vec3> normal;       // [H x W], world space, facing the camera
    std::vector<std::uint8_t> valid; // opacity >= 0.1 and a usable neighbourhood
};

/// Depth map and normals from central differences of unprojected depth.
template <typename T>
DepthNormal render_depth_normal(const RenderOutput<T> &out, const CameraView &target);

/// Tile layout for patched rendering of an h x w low-resolution grid.
struct Patch {
    int y0, x0, ph, pw;    // extent including overlap
    int cy0, cx0, ch, cw;  // core tile
};
std::vector<Patch> plan_patches(int h, int w, int P, int overlap);

} // namespace frf
