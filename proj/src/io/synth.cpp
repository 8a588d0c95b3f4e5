// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/synth.hpp"

#include "frf/errors.hpp"
#include "frf/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <thread>

namespace fs = std::filesystem;

namespace frf {
namespace {

double logistic(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Density is below 1e-5 of its peak beyond this many edge widths.
constexpr double kEdgeReach = 12.0;

bool sphere_interval(const Vec3 &o, const Vec3 &d, const Vec3 &c, double r, double &t0, double &t1) {
    const Vec3 oc = o - c;
    const double a = dot(d, d), b = 2 * dot(oc, d), cc = dot(oc, oc) - r * r;
    const double disc = b * b - 4 * a * cc;
    if (disc < 0) return false;
    const double s = std::sqrt(disc);
    t0 = (-b - s) / (2 * a);
    t1 = (-b + s) / (2 * a);
    return true;
}

} // namespace

Preset parse_preset(const std::string &s) {
    if (s == "slab") return Preset::slab;
    if (s == "sphere") return Preset::sphere;
    if (s == "two-spheres" || s == "two_spheres") return Preset::two_spheres;
    throw ParseError("unknown preset '" + s + "' (expected slab|sphere|two-spheres)");
}

std::string to_string(Preset p) {
    switch (p) {
    case Preset::slab: return "slab";
    case Preset::sphere: return "sphere";
    case Preset::two_spheres: return "two-spheres";
    }
    return "?";
}

SyntheticScene SyntheticScene::make(Preset p, std::uint64_t seed) {
    SyntheticScene s;
    s.preset = p;
    std::mt19937_64 rng(seed);
    s.phase = std::uniform_real_distribution<double>(0.0, 2 * std::numbers::pi)(rng);
    if (p == Preset::sphere) {
        s.spheres.push_back({{0, 0, 0}, 1.0, {0.85, 0.55, 0.35}});
    } else if (p == Preset::two_spheres) {
        s.spheres.push_back({{0.25, 0, 0.35}, 0.8, {0.85, 0.5, 0.3}});
        s.spheres.push_back({{-0.6, -0.15, -0.7}, 0.4, {0.3, 0.55, 0.9}});
    }
    return s;
}

double SyntheticScene::density(const Vec3 &x) const {
    if (preset == Preset::slab) return slab_sigma * logistic((0.5 * slab_thickness - std::abs(x[2] - slab_z0)) / edge);
    double s = 0;
    for (const auto &sp : spheres) s += sphere_sigma * logistic((sp.radius - norm(x - sp.center)) / edge);
    return s;
}

Vec3 SyntheticScene::color(const Vec3 &x) const {
    if (preset == Preset::slab) {
        const double m = 1 + texture * std::sin(2.5 * x[0] + phase) * std::cos(2.0 * x[1]);
        return {std::clamp(slab_color[0] * m, 0.0, 1.0), std::clamp(slab_color[1] * m, 0.0, 1.0),
                std::clamp(slab_color[2] * m, 0.0, 1.0)};
    }
    const Vec3 l = normalized(light);
    Vec3 acc{0, 0, 0};
    double wsum = 0;
    for (const auto &sp : spheres) {
        const Vec3 rel = x - sp.center;
        const double len = norm(rel);
        const Vec3 n = len > 0 ? (1.0 / len) * rel : Vec3{0, 0, -1};
        const double pattern = 1 - texture + texture * std::sin(5 * std::atan2(n[0], -n[2]) + phase) * std::cos(4 * n[1]);
        const double shade = 0.3 + 0.7 * std::max(0.0, dot(n, l));
        const double w = logistic((sp.radius - len) / edge) + 1e-12;
        for (int c = 0; c < 3; ++c) acc[static_cast<std::size_t>(c)] += w * std::clamp(sp.albedo[static_cast<std::size_t>(c)] * pattern * shade, 0.0, 1.0);
        wsum += w;
    }
    return (1.0 / wsum) * acc;
}

bool SyntheticScene::clip(const Vec3 &o, const Vec3 &d, double &t0, double &t1) const {
    const double pad = kEdgeReach * edge;
    if (preset == Preset::slab) {
        const double lo = slab_z0 - 0.5 * slab_thickness - pad, hi = slab_z0 + 0.5 * slab_thickness + pad;
        if (std::abs(d[2]) < 1e-12) {
            if (o[2] < lo || o[2] > hi) return false;
            t0 = -1e300;
            t1 = 1e300;
            return true;
        }
        const double a = (lo - o[2]) / d[2], b = (hi - o[2]) / d[2];
        t0 = std::min(a, b);
        t1 = std::max(a, b);
        return true;
    }
    bool hit = false;
    for (const auto &sp : spheres) {
        double a, b;
        if (!sphere_interval(o, d, sp.center, sp.radius + pad, a, b)) continue;
        t0 = hit ? std::min(t0, a) : a;
        t1 = hit ? std::max(t1, b) : b;
        hit = true;
    }
    return hit;
}

double SyntheticScene::slab_optical_depth() const {
    // Integral of the logistic profile across the slab: 2 edge softplus(t / (2 edge)).
    const double a = 0.5 * slab_thickness / edge;
    return slab_sigma * 2 * edge * (a + std::log1p(std::exp(-a)));
}

std::vector<CameraView> arc_rig(const RigOptions &o) {
    if (o.views < 1) throw ContractError("arc_rig: need at least one view");
    std::vector<CameraView> cams;
    const double f = o.focal_scale * o.width;
    for (int k = 0; k < o.views; ++k) {
        const double th = (k - 0.5 * (o.views - 1)) * o.baseline_deg * std::numbers::pi / 180.0;
        const Vec3 eye{o.radius * std::sin(th), 0, -o.radius * std::cos(th)};
        cams.push_back(look_at(eye, {0, 0, 0}, {0, -1, 0}, f, f, 0.5 * o.width, 0.5 * o.height, o.width, o.height, o.near, o.far));
    }
    return cams;
}

OracleImage render_oracle(const SyntheticScene &scene, const CameraView &cam, int S) {
    if (S < 2) throw ContractError("render_oracle: need at least 2 samples");
    const int H = cam.height, W = cam.width;
    OracleImage img;
    img.rgb = Tensor<float>::zeros({3, H, W});
    img.depth.assign(static_cast<std::size_t>(H) * W, 0.f);
    img.opacity.assign(static_cast<std::size_t>(H) * W, 0.f);
    const Vec3 o = cam.center();
    const std::int64_t chunk = 128;
    const std::int64_t N = static_cast<std::int64_t>(H) * W;
    for (std::int64_t p0 = 0; p0 < N; p0 += chunk) {
        const std::int64_t n = std::min(chunk, N - p0);
        std::vector<double> sig(static_cast<std::size_t>(S * n), 0.0), col(static_cast<std::size_t>(3 * S * n), 0.0);
        RaySamples rs;
        rs.N = static_cast<int>(n);
        rs.D = S;
        rs.t.resize(static_cast<std::size_t>(n * S));
        rs.deltas.resize(static_cast<std::size_t>(n * S));
        for (std::int64_t q = 0; q < n; ++q) {
            const std::int64_t p = p0 + q;
            const int i = static_cast<int>(p / W), j = static_cast<int>(p % W);
            const Vec3 d = ray_direction(j + 0.5, i + 0.5, cam);
            double t0 = cam.near, t1 = cam.far, a, b;
            if (scene.clip(o, d, a, b)) {
                t0 = std::clamp(a, cam.near, cam.far);
                t1 = std::clamp(b, cam.near, cam.far);
            }
            if (!(t1 > t0)) t1 = t0 + 1e-9; // ray misses within [near, far]
            const double dt = (t1 - t0) / S, len = norm(d);
            for (int k = 0; k < S; ++k) {
                const double t = t0 + (k + 0.5) * dt;
                const Vec3 x = o + t * d;
                const std::size_t idx = static_cast<std::size_t>(k * n + q);
                sig[idx] = scene.density(x);
                const Vec3 c = scene.color(x);
                for (int ch = 0; ch < 3; ++ch) col[static_cast<std::size_t>(ch) * S * n + idx] = c[static_cast<std::size_t>(ch)];
                rs.t[static_cast<std::size_t>(q * S + k)] = t;
                rs.deltas[static_cast<std::size_t>(q * S + k)] = dt * len;
            }
        }
        const auto out = composite(Tensor<double>::from({1, S, n}, std::move(sig)), Tensor<double>::from({3, S, n}, std::move(col)), rs, 1,
                                   static_cast<int>(n));
        for (std::int64_t q = 0; q < n; ++q) {
            const std::int64_t p = p0 + q;
            for (int ch = 0; ch < 3; ++ch) img.rgb.ptr()[ch * N + p] = static_cast<float>(out.rgb.ptr()[ch * n + q]);
            const double op = out.opacity.ptr()[q];
            img.opacity[static_cast<std::size_t>(p)] = static_cast<float>(op);
            img.depth[static_cast<std::size_t>(p)] = op > 1e-6 ? static_cast<float>(out.depth.ptr()[q]) : 0.f;
        }
    }
    return img;
}

SceneManifest synth_scene(const SynthOptions &opts, const std::string &out_dir) {
    return synth_scene(SyntheticScene::make(opts.preset, opts.seed), opts, out_dir);
}

SceneManifest synth_scene(const SyntheticScene &scene, const SynthOptions &opts, const std::string &out_dir) {
    fs::create_directories(out_dir);
    const auto cams = arc_rig(opts.rig);
    const int K = static_cast<int>(cams.size());
    std::vector<OracleImage> images(static_cast<std::size_t>(K));
    {
        // One worker per view; each view is rendered independently.
        std::vector<std::jthread> workers;
        for (int k = 0; k < K; ++k) {
            workers.emplace_back([&, k] { images[static_cast<std::size_t>(k)] = render_oracle(scene, cams[static_cast<std::size_t>(k)], opts.d_oracle); });
        }
    }
    SceneManifest m;
    m.near = opts.rig.near;
    m.far = opts.rig.far;
    for (int k = 0; k < K; ++k) {
        char name[64];
        std::snprintf(name, sizeof(name), "view_%03d.ppm", k);
        char dname[64];
        std::snprintf(dname, sizeof(dname), "depth_%03d.pfm", k);
        const auto &img = images[static_cast<std::size_t>(k)];
        write_ppm((fs::path(out_dir) / name).string(), img.rgb);
        write_pfm((fs::path(out_dir) / dname).string(), img.depth, opts.rig.height, opts.rig.width);
        const auto &c = cams[static_cast<std::size_t>(k)];
        ManifestView v;
        v.image_path = name;
        v.depth_path = dname;
        v.fx = c.fx;
        v.fy = c.fy;
        v.cx = c.cx;
        v.cy = c.cy;
        v.world_to_camera = c.world_to_camera;
        v.width = c.width;
        v.height = c.height;
        m.views.push_back(v);
    }
    save_manifest(m, (fs::path(out_dir) / "manifest.txt").string());
    return m;
}

} // namespace frf
