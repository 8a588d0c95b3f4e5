// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace frf {

using Vec3 = std::array<double, 3>;
using Mat4 = std::array<double, 16>; // row-major

inline Vec3 operator+(const Vec3 &a, const Vec3 &b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3 &a, const Vec3 &b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3 &a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3 &a, const Vec3 &b);
Vec3 cross(const Vec3 &a, const Vec3 &b);
double norm(const Vec3 &a);
Vec3 normalized(const Vec3 &a);

/// Pinhole camera. Camera space is right-handed with x right, y down and the
/// camera looking down +z. Pixel (i, j) covers [j, j+1) x [i, i+1); its
/// center is (j + 0.5, i + 0.5).
struct CameraView {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    Mat4 world_to_camera{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    double near = 1, far = 2;
    int width = 0, height = 0;
    Tensor<float> image; // [3 x H x W] in [0, 1]; undefined for a pure target pose

    /// Throws ValidationError naming the violated field.
    void validate(double rotation_tol = 1e-6) const;

    Vec3 to_camera(const Vec3 &world) const;
    Vec3 to_world(const Vec3 &cam) const;
    /// World-space camera center.
    Vec3 center() const;
    /// World-space optical axis (camera +z).
    Vec3 axis() const;
};

struct Projection {
    double u = 0, v = 0, depth = 0;
    bool in_front = false; // camera z > 1e-6
};

Projection project(const Vec3 &world, const CameraView &cam);
/// Inverse of project for depth > 0; throws ContractError otherwise.
Vec3 unproject(double u, double v, double depth, const CameraView &cam);
/// World direction through pixel coordinate (u, v), scaled so its camera-z
/// component is 1.
Vec3 ray_direction(double u, double v, const CameraView &cam);

enum class DepthSpacing { linear, inverse };
DepthSpacing parse_depth_spacing(const std::string &s);
std::string to_string(DepthSpacing s);

/// Plane depths at bin midpoints. Linear: near + (d + 0.5)(far - near)/D.
/// Inverse: midpoints of equal bins in 1/z.
std::vector<double> plane_depths(double near, double far, int D, DepthSpacing spacing = DepthSpacing::linear);

/// Gap to the next entry, with the last gap replicated.
std::vector<double> depth_gaps(const std::vector<double> &depths);

/// One ray per s x s pixel block on an h x w grid, h = H/s and w = W/s.
struct RayBundle {
    int h = 0, w = 0, s = 1;
    Vec3 origin{};                 // shared camera center
    std::vector<Vec3> dirs;        // [h*w], camera-z = 1
    std::vector<double> depths;    // [D]
    std::vector<double> deltas;    // [h*w*D]
    int num_depths() const { return static_cast<int>(depths.size()); }
    /// Sample point of ray r at plane d.
    Vec3 point(int r, int d) const { return origin + depths[static_cast<std::size_t>(d)] * dirs[static_cast<std::size_t>(r)]; }
};

/// Rays through block centers ((j + 0.5) s, (i + 0.5) s). Requires s to
/// divide the image size and D >= 2.
RayBundle make_rays(const CameraView &target, int s, int D, DepthSpacing spacing = DepthSpacing::linear);

/// Camera at `eye` looking at `target`, with `up` giving the image's upward
/// direction (camera -y).
CameraView look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up, double fx, double fy, double cx, double cy,
                   int width, int height, double near, double far);

/// Pads width/height up to multiples of m with zero pixels on the right and
/// bottom (intrinsics unchanged).
CameraView pad_to_multiple(const CameraView &cam, int m);

/// Sub-window [x0, x0 + w) x [y0, y0 + h) as its own camera (principal point
/// shifted, image cropped when present).
CameraView crop_view(const CameraView &cam, int x0, int y0, int w, int h);

} // namespace frf
