// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/geometry.hpp"
#include "frf/io.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace frf {

enum class Preset { slab, sphere, two_spheres };
Preset parse_preset(const std::string &s);
std::string to_string(Preset p);

struct SphereSpec {
    Vec3 center{};
    double radius = 1;
    Vec3 albedo{0.8, 0.8, 0.8};
};

/// Closed-form density and color fields. Surfaces have a smooth logistic
/// edge of width `edge` so quadrature converges cleanly.
struct SyntheticScene {
    Preset preset = Preset::sphere;
    double edge = 0.02;

    // Slab: world z in [slab_z0 - t/2, slab_z0 + t/2], unbounded in x and y.
    double slab_z0 = 0, slab_thickness = 1, slab_sigma = 2;
    Vec3 slab_color{0.8, 0.5, 0.3};
    double texture = 0.25; // amplitude of the smooth color pattern; 0 = constant color

    // Spheres (sphere and two-spheres presets).
    std::vector<SphereSpec> spheres;
    double sphere_sigma = 30;
    Vec3 light{-0.3, -0.5, -0.8}; // direction towards the light
    double phase = 0;             // texture phase, drawn from the seed

    static SyntheticScene make(Preset p, std::uint64_t seed);

    double density(const Vec3 &x) const;
    Vec3 color(const Vec3 &x) const;
    /// Parameter range [t0, t1] of origin + t * dir where the density can be
    /// non-negligible; false if the ray misses.
    bool clip(const Vec3 &origin, const Vec3 &dir, double &t0, double &t1) const;
    /// Thickness-integrated slab density along the slab normal.
    double slab_optical_depth() const;
};

struct RigOptions {
    int views = 3;
    double baseline_deg = 10; // angle between neighbouring cameras
    int height = 32, width = 32;
    double radius = 4;         // camera distance from the origin
    double focal_scale = 1.2;  // fx = fy = focal_scale * width
    double near = 2, far = 6;
};

/// Cameras on a horizontal arc centered on the origin, all looking at it;
/// the middle of the arc faces +z.
std::vector<CameraView> arc_rig(const RigOptions &opts);

struct OracleImage {
    Tensor<float> rgb;          // [3 x H x W]
    std::vector<float> depth;   // expected camera z, 0 where empty
    std::vector<float> opacity;
};

/// Ray-marches the analytic fields with `samples` midpoint samples per ray
/// over the clipped ray segment, composited with the renderer's math.
OracleImage render_oracle(const SyntheticScene &scene, const CameraView &cam, int samples);

struct SynthOptions {
    Preset preset = Preset::sphere;
    RigOptions rig;
    int d_oracle = 1024;
    std::uint64_t seed = 0;
};

/// Writes view_NNN.ppm, depth_NNN.pfm and manifest.txt into `out_dir`.
SceneManifest synth_scene(const SynthOptions &opts, const std::string &out_dir);
/// Same scene with a caller-supplied field description.
SceneManifest synth_scene(const SyntheticScene &scene, const SynthOptions &opts, const std::string &out_dir);

} // namespace frf
