// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

// Acceptance runner. `frf_acceptance [N ...]` runs the listed criteria (all
// when none are given) and prints one PASS/FAIL line per criterion.

#include "frf/errors.hpp"
#include "frf/gradcheck_suite.hpp"
#include "frf/io.hpp"
#include "frf/memory.hpp"
#include "frf/synth.hpp"
#include "frf/train.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

using namespace frf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_dir(const std::string &name) {
    auto p = fs::temp_directory_path() / ("frf_accept_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64 &rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto &e : v) e = static_cast<T>(u(rng));
    return Tensor<T>::from(std::move(shape), std::move(v));
}

// ---------------------------------------------------------------------------
// 1. Analytic slab opacity and convergence in D

CameraView slab_camera(int res) {
    // Oblique rays included: 40 degree field of view.
    const double f = res / (2 * std::tan(20 * M_PI / 180));
    return look_at({0, 0, -4}, {0, 0, 0}, {0, -1, 0}, f, f, res / 2.0, res / 2.0, res, res, 2, 6);
}

std::vector<double> slab_opacity(const RayBundle &rays, const std::function<double(const Vec3 &)> &sigma) {
    const int D = rays.num_depths();
    const std::int64_t R = static_cast<std::int64_t>(rays.h) * rays.w;
    std::vector<double> dens(static_cast<std::size_t>(D * R));
    for (std::int64_t r = 0; r < R; ++r)
        for (int d = 0; d < D; ++d) dens[static_cast<std::size_t>(d * R + r)] = sigma(rays.point(static_cast<int>(r), d));
    const auto out = composite(Tensor<double>::from({1, D, R}, std::move(dens)), Tensor<double>::zeros({3, D, R}),
                               samples_from_rays(rays), rays.h, rays.w);
    return std::vector<double>(out.opacity.ptr(), out.opacity.ptr() + R);
}

Outcome criterion_slab() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cam = slab_camera(32);

    // Smooth-edged slab preset: its optical depth integrates to sigma * L exactly.
    const auto scene = SyntheticScene::make(Preset::slab, 0);
    const double tau = scene.slab_optical_depth();
    const auto rays = make_rays(cam, 1, 256);
    const auto op = slab_opacity(rays, [&](const Vec3 &x) { return scene.density(x); });
    double worst = 0;
    for (std::size_t r = 0; r < op.size(); ++r) worst = std::max(worst, std::abs(op[r] - (1 - std::exp(-tau * norm(rays.dirs[r])))));

    // Sharp-faced box at random offsets: RMS error against 1 - exp(-sigma L)
    // over placements, fitted as err ~ D^-p.
    const double sigma = 1.5, L = 0.7;
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> off(-0.8, 0.8 - L);
    std::vector<double> z0s(48);
    for (auto &z : z0s) z = off(rng);
    const auto small = slab_camera(4);
    std::vector<double> lx, ly;
    std::string series;
    for (int D : {16, 32, 64, 128, 256, 512}) {
        const auto rb = make_rays(small, 1, D);
        double se = 0;
        int n = 0;
        for (double z0 : z0s) {
            const auto o = slab_opacity(rb, [&](const Vec3 &x) { return x[2] >= z0 && x[2] < z0 + L ? sigma : 0.0; });
            for (std::size_t r = 0; r < o.size(); ++r) {
                const double e = o[r] - (1 - std::exp(-sigma * L * norm(rb.dirs[r])));
                se += e * e;
                ++n;
            }
        }
        const double rms = std::sqrt(se / n);
        lx.push_back(std::log(static_cast<double>(D)));
        ly.push_back(std::log(rms));
        series += fmt(" %d:%.2e", D, rms);
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size(), my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double order = -sxy / sxx;
    const double secs = seconds_since(t0);
    return {worst < 1e-3 && order >= 0.9 && secs < 10,
            fmt("max opacity error %.2e at D=256 (< 1e-3); convergence order %.3f (>= 0.9; rms%s); %.2f s (< 10 s)", worst,
                order, series.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

Outcome criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_gradcheck_suite();
    int failed = 0;
    double worst_op = 0, worst_comp = 0;
    std::string names;
    for (const auto &r : results) {
        if (!r.pass) {
            ++failed;
            names += " " + r.name;
        }
        (r.tolerance > 1e-4 ? worst_comp : worst_op) = std::max(r.tolerance > 1e-4 ? worst_comp : worst_op, r.max_rel_error);
    }
    const double secs = seconds_since(t0);
    return {failed == 0 && secs < 120,
            fmt("%zu checks, %d failed%s; worst op %.2e (< 1e-4), worst composite %.2e (< 1e-3); %.1f s (< 120 s)",
                results.size(), failed, names.c_str(), worst_op, worst_comp, secs)};
}

// ---------------------------------------------------------------------------
// 3. Group cosine against a pair loop

Outcome criterion_cosine() {
    std::mt19937_64 rng(3);
    double worst = 0;
    bool pairs_ok = true;
    for (int K : {2, 3, 4, 6})
        for (int G : {1, 4, 8}) {
            const int N = 50, M = 64, Mg = M / G, P = K * (K - 1) / 2;
            const auto f = random_tensor<double>({K, N, M}, rng);
            const std::vector<std::uint8_t> valid(static_cast<std::size_t>(K * N), 1);
            const auto c = pairwise_group_cosine(f, G, valid);
            pairs_ok &= c.dim(2) == P && static_cast<int>(view_pairs(K).size()) == P;
            for (int n = 0; n < N; ++n)
                for (int g = 0; g < G; ++g) {
                    int p = 0;
                    for (int i = 0; i < K; ++i)
                        for (int j = i + 1; j < K; ++j, ++p) {
                            double ab = 0, aa = 0, bb = 0;
                            for (int m = 0; m < Mg; ++m) {
                                const double a = f.ptr()[(i * N + n) * M + g * Mg + m], b = f.ptr()[(j * N + n) * M + g * Mg + m];
                                ab += a * b;
                                aa += a * a;
                                bb += b * b;
                            }
                            worst = std::max(worst, std::abs(c.ptr()[(n * G + g) * P + p] - ab / std::sqrt(aa * bb)));
                        }
                }
        }
    return {worst <= 1e-12 && pairs_ok,
            fmt("max |gram - loop| = %.2e (<= 1e-12) over K in {2,3,4,6}, G in {1,4,8}; pair counts %s", worst,
                pairs_ok ? "K(K-1)/2" : "WRONG")};
}

// ---------------------------------------------------------------------------
// 4. Chi-square fit of resampled depths

double chi2_pvalue(const std::vector<double> &observed, const std::vector<double> &expected) {
    std::vector<double> o, e;
    double ao = 0, ae = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        ao += observed[i];
        ae += expected[i];
        if (ae >= 5) {
            o.push_back(ao);
            e.push_back(ae);
            ao = ae = 0;
        }
    }
    if (ae > 0 && !e.empty()) {
        o.back() += ao;
        e.back() += ae;
    }
    if (o.size() < 2) return 1.0;
    double stat = 0;
    for (std::size_t i = 0; i < o.size(); ++i) stat += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(static_cast<double>(o.size() - 1)), stat));
}

// `per_call` samples per pdf_resample call: 1 gives independent draws, 16
// the stratified fine-stage sampler.
double resample_pvalue(const std::vector<double> &w, int per_call, std::uint64_t seed) {
    constexpr int kDraws = 100000, kSub = 4;
    const int D = static_cast<int>(w.size());
    std::vector<double> depths(static_cast<std::size_t>(D));
    for (int d = 0; d < D; ++d) depths[static_cast<std::size_t>(d)] = 2 + (d + 0.5) * 4.0 / D;
    const auto edges = bin_edges(depths);
    double total = 0;
    for (double v : w) total += v + 1e-5;
    std::vector<double> obs(static_cast<std::size_t>(D * kSub), 0), expd(obs.size());
    for (int d = 0; d < D; ++d)
        for (int s = 0; s < kSub; ++s) expd[static_cast<std::size_t>(d * kSub + s)] = kDraws * (w[static_cast<std::size_t>(d)] + 1e-5) / total / kSub;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < kDraws; i += per_call) {
        for (double t : pdf_resample(w, depths, per_call, &rng)) {
            const int d = std::clamp(static_cast<int>(std::upper_bound(edges.begin(), edges.end(), t) - edges.begin()) - 1, 0, D - 1);
            const double frac = (t - edges[static_cast<std::size_t>(d)]) / (edges[static_cast<std::size_t>(d) + 1] - edges[static_cast<std::size_t>(d)]);
            obs[static_cast<std::size_t>(d * kSub + std::clamp(static_cast<int>(frac * kSub), 0, kSub - 1))] += 1;
        }
    }
    return chi2_pvalue(obs, expd);
}

Outcome criterion_resampling() {
    const int D = 64;
    std::map<std::string, std::vector<double>> profiles;
    std::vector<double> delta(D, 0), uniform(D, 1), bimodal(D);
    delta[23] = 1;
    for (int d = 0; d < D; ++d) bimodal[static_cast<std::size_t>(d)] = std::exp(-0.5 * std::pow((d - 15) / 3.0, 2)) + 0.6 * std::exp(-0.5 * std::pow((d - 47) / 2.0, 2));
    profiles["delta"] = delta;
    profiles["uniform"] = uniform;
    profiles["bimodal"] = bimodal;
    bool ok = true;
    std::string detail;
    for (const auto &[name, w] : profiles) {
        const double p_iid = resample_pvalue(w, 1, 11), p_strat = resample_pvalue(w, 16, 12);
        ok &= p_iid > 0.01 && p_strat > 0.01;
        detail += fmt("%s%s p=%.3f (stratified p=%.3f)", detail.empty() ? "" : "; ", name.c_str(), p_iid, p_strat);
    }
    return {ok, detail + " (1e5 draws each, p > 0.01)"};
}

// ---------------------------------------------------------------------------
// 5. Parameter counts

ModelConfig ratio_model(DecoderKind kind) {
    ModelConfig cfg;
    cfg.encoder.c2 = 16;
    cfg.encoder.c4 = 24;
    cfg.encoder.c8 = 32;
    cfg.encoder.transformer_blocks = 1;
    cfg.volume.channels = 32;
    cfg.decoder.width = 64;
    cfg.decoder.kind = kind;
    cfg.s = 4;
    cfg.depth_planes = 32;
    return cfg;
}

Outcome criterion_parameters() {
    const auto a = block_weight_count(DecoderKind::conv3d, 64), b = block_weight_count(DecoderKind::plus21d, 64);
    const double block_ratio = static_cast<double>(a) / static_cast<double>(b);
    const Model<float> m21(ratio_model(DecoderKind::plus21d)), m3(ratio_model(DecoderKind::conv3d));
    const auto n21 = m21.params().count(), n3 = m3.params().count();
    const double model_ratio = static_cast<double>(n3) / static_cast<double>(n21);
    return {a == 110592 && b == 49152 && block_ratio == 27.0 / 12.0 && model_ratio > 1.5,
            fmt("per block %lld / %lld = %.4f (= 2.25); whole model %lld / %lld = %.3f (> 1.5)", static_cast<long long>(a),
                static_cast<long long>(b), block_ratio, static_cast<long long>(n3), static_cast<long long>(n21), model_ratio)};
}

// ---------------------------------------------------------------------------
// 6. Context-scope probes

// Which output cells of the field change when input cell (d0, y0, x0) moves.
std::vector<std::uint8_t> probe(const Decoder<double> &dec, const Tensor<double> &vol, int d0, int y0, int x0) {
    const auto base = dec(vol);
    auto pert = Tensor<double>::from(vol.shape(), std::vector<double>(vol.ptr(), vol.ptr() + vol.numel()));
    const std::int64_t D = vol.dim(1), H = vol.dim(2), W = vol.dim(3);
    for (std::int64_t c = 0; c < vol.dim(0); ++c) pert.ptr()[((c * D + d0) * H + y0) * W + x0] += 0.5;
    const auto out = dec(pert);
    const std::int64_t n = D * H * W;
    std::vector<std::uint8_t> ch(static_cast<std::size_t>(n), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) ch[static_cast<std::size_t>(i)] |= base.color.ptr()[c * n + i] != out.color.ptr()[c * n + i];
        ch[static_cast<std::size_t>(i)] |= base.density.ptr()[i] != out.density.ptr()[i];
    }
    return ch;
}

Outcome criterion_probes() {
    const int C = 6, D = 6, H = 7, W = 7, d0 = 3, y0 = 3, x0 = 2;
    struct Case {
        DecoderKind kind;
        std::function<bool(int, int, int)> allowed; // may (d, y, x) change
    };
    const std::vector<Case> cases{
        {DecoderKind::mlp, [&](int d, int y, int x) { return d == d0 && y == y0 && x == x0; }},
        {DecoderKind::conv1d, [&](int, int y, int x) { return y == y0 && x == x0; }},
        {DecoderKind::ray_transformer, [&](int, int y, int x) { return y == y0 && x == x0; }},
        {DecoderKind::conv2d, [&](int d, int, int) { return d == d0; }},
    };
    bool ok = true;
    std::string detail;
    for (const auto &c : cases) {
        DecoderConfig cfg;
        cfg.kind = c.kind;
        cfg.width = 8;
        cfg.blocks = 3;
        cfg.rt_blocks = 2;
        cfg.rt_heads = 2;
        ParameterSet<double> params;
        std::mt19937_64 rng(7);
        Decoder<double> dec(ParamBuilder<double>(params, rng, "dec.", "decoder"), cfg, C, 1);
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        for (auto &p : params.all())
            if (p.name.find("weight") == std::string::npos)
                for (std::int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.ptr()[i] += u(rng);
        const auto ch = probe(dec, random_tensor<double>({C, D, H, W}, rng), d0, y0, x0);
        int leaks = 0, reached = 0;
        for (int d = 0; d < D; ++d)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const bool changed = ch[static_cast<std::size_t>((d * H + y) * W + x)] != 0;
                    if (changed && !c.allowed(d, y, x)) ++leaks;
                    reached += changed;
                }
        // The probe must see context inside the allowed scope for non-pointwise kinds.
        const bool spread = c.kind == DecoderKind::mlp ? reached == 1 : reached > 1;
        ok &= leaks == 0 && spread;
        detail += fmt("%s%s: %d changed, %d outside scope", detail.empty() ? "" : "; ", to_string(c.kind).c_str(), reached, leaks);
    }
    return {ok, detail + " (f64, bit-exact)"};
}

// ---------------------------------------------------------------------------
// 7 and 8. Training on synthetic scenes

TrainConfig toy_config() {
    TrainConfig c;
    auto &m = c.model;
    m.s = 4;
    m.depth_planes = 32;
    m.encoder.c2 = 16;
    m.encoder.c4 = 24;
    m.encoder.c8 = 32;
    m.encoder.transformer_blocks = 1;
    m.volume.channels = 16;
    m.volume.groups = 8;
    m.decoder.width = 16;
    m.decoder.blocks = 4;
    m.decoder.up_channels = 8;
    c.lr_decoder = 5e-4;
    c.lr_encoder = 5e-5;
    c.log_every = 100000;
    return c;
}

struct SceneSetup {
    Preset preset;
    int views;
    double spacing_deg;
    int res;
    std::vector<int> sources, train_targets, held_out;
    double focal_scale = 1.2, radius = 4;
};

struct TrainOutcome {
    double train_psnr = 0, held_psnr = 0, baseline_psnr = 0;
};

TrainOutcome train_and_score(const SceneSetup &s, const TrainConfig &base, int steps, std::uint64_t seed, Orientation o,
                             const fs::path &dir) {
    SynthOptions so;
    so.preset = s.preset;
    so.rig.views = s.views;
    so.rig.baseline_deg = s.spacing_deg;
    so.rig.height = so.rig.width = s.res;
    so.rig.focal_scale = s.focal_scale;
    so.rig.radius = s.radius;
    so.rig.near = s.radius - 2;
    so.rig.far = s.radius + 2;
    so.d_oracle = 512;
    const auto scene_dir = dir / (to_string(s.preset) + "_scene");
    if (!fs::exists(scene_dir / "manifest.txt")) synth_scene(so, scene_dir.string());
    const auto scene = load_scene(scene_dir.string());

    TrainConfig cfg = base;
    cfg.steps = steps;
    cfg.seed = seed;
    cfg.model.init_seed = seed + 1;
    cfg.model.orientation = o;
    cfg.source_views = s.sources;
    cfg.target_views = s.train_targets;
    Model<float> model(cfg.model);
    train(model, cfg, scene);

    TrainOutcome out;
    out.train_psnr = evaluate(model, cfg, scene, s.train_targets).mean_psnr;
    out.held_psnr = evaluate(model, cfg, scene, s.held_out).mean_psnr;
    // Baseline: the image of the input view whose camera center is nearest.
    for (int id : s.held_out) {
        const auto &v = scene.views[static_cast<std::size_t>(id)];
        int best = s.sources[0];
        for (int src : s.sources)
            if (norm(scene.views[static_cast<std::size_t>(src)].center() - v.center()) <
                norm(scene.views[static_cast<std::size_t>(best)].center() - v.center()))
                best = src;
        out.baseline_psnr += psnr(scene.views[static_cast<std::size_t>(best)].image, v.image) / static_cast<double>(s.held_out.size());
    }
    return out;
}

Outcome criterion_overfit() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dir = scratch_dir("overfit");
    bool ok = true;
    std::string detail;
    for (Preset p : {Preset::slab, Preset::sphere}) {
        // 60 degrees between neighbouring inputs: at narrow baselines a planar
        // slab barely changes between views and copying the nearest input is
        // already near-perfect.
        const SceneSetup s{p, 9, 15, 32, {0, 4, 8}, {0, 1, 3, 4, 5, 7, 8}, {2, 6}};
        const auto r = train_and_score(s, toy_config(), 2000, 0, Orientation::target, dir);
        const double gain = r.held_psnr - r.baseline_psnr;
        ok &= r.train_psnr > 30 && gain >= 3;
        detail += fmt("%s: train %.2f dB (> 30), held-out %.2f dB vs nearest-view %.2f dB, gain %.2f (>= 3); ", to_string(p).c_str(),
                      r.train_psnr, r.held_psnr, r.baseline_psnr, gain);
    }
    fs::remove_all(dir);
    const double secs = seconds_since(t0);
    ok &= secs < 900;
    return {ok, detail + fmt("%.0f s (< 900 s)", secs)};
}

// Share of the held-out views' density integral that lies outside the
// frustum of the first source view.
double missed_mass(const SceneSetup &s) {
    RigOptions ro;
    ro.views = s.views;
    ro.baseline_deg = s.spacing_deg;
    ro.height = ro.width = s.res;
    ro.focal_scale = s.focal_scale;
    ro.radius = s.radius;
    ro.near = s.radius - 2;
    ro.far = s.radius + 2;
    const auto cams = arc_rig(ro);
    const auto scene = SyntheticScene::make(s.preset, 0);
    const auto &ref = cams[static_cast<std::size_t>(s.sources[0])];
    double total = 0, outside = 0;
    for (int id : s.held_out) {
        const auto rays = make_rays(cams[static_cast<std::size_t>(id)], 1, 256);
        for (int r = 0; r < rays.h * rays.w; ++r)
            for (int d = 0; d < 256; ++d) {
                const Vec3 x = rays.point(r, d);
                const double sigma = scene.density(x);
                const auto p = project(x, ref);
                const bool in = p.in_front && p.u >= 0 && p.u <= ref.width && p.v >= 0 && p.v <= ref.height && p.depth >= ref.near &&
                                p.depth <= ref.far;
                total += sigma;
                outside += in ? 0 : sigma;
            }
    }
    return outside / total;
}

Outcome criterion_orientation() {
    const auto dir = scratch_dir("orientation");
    // 60 degrees between neighbouring inputs, held-out views halfway between.
    const SceneSetup s{Preset::two_spheres, 9, 15, 32, {0, 4, 8}, {0, 1, 3, 4, 5, 7, 8}, {2, 6}};
    bool ok = true;
    std::string detail = fmt("held-out density outside the reference frustum %.3f; ", missed_mass(s));
    double mt = 0, mr = 0;
    for (std::uint64_t seed : {0, 1, 2}) {
        const auto t = train_and_score(s, toy_config(), 800, seed, Orientation::target, dir);
        const auto r = train_and_score(s, toy_config(), 800, seed, Orientation::reference, dir);
        ok &= t.held_psnr > r.held_psnr;
        mt += t.held_psnr / 3;
        mr += r.held_psnr / 3;
        detail += fmt("seed %llu: target %.2f dB vs reference %.2f dB; ", static_cast<unsigned long long>(seed), t.held_psnr, r.held_psnr);
    }
    fs::remove_all(dir);
    return {ok, detail + fmt("mean %.2f vs %.2f (target must win every seed)", mt, mr)};
}

// ---------------------------------------------------------------------------
// 9. Patched rendering

Outcome criterion_patches() {
    const auto dir = scratch_dir("patches");
    SynthOptions so;
    so.preset = Preset::sphere;
    so.rig.views = 3;
    so.rig.baseline_deg = 10;
    so.rig.height = so.rig.width = 64;
    so.d_oracle = 64;
    synth_scene(so, dir.string());
    const auto scene = load_scene(dir.string());
    fs::remove_all(dir);

    ModelConfig mc = toy_config().model;
    mc.s = 8;
    mc.depth_planes = 16;
    Model<float> model(mc);
    NoGradGuard ng;
    const auto views = model.prepare({scene.views[0], scene.views[1], scene.views[2]});

    // Small target for the exactness checks.
    RigOptions ro;
    ro.views = 1;
    ro.height = 384;
    ro.width = 512;
    ro.focal_scale = 0.8;
    const auto small = arc_rig(ro)[0];
    const auto full = model.render_coarse(views, small);
    const auto p1 = model.render_patched(views, small, 1, 0);
    bool p1_exact = true;
    for (std::int64_t i = 0; i < full.rgb.numel(); ++i) p1_exact &= full.rgb.ptr()[i] == p1.rgb.ptr()[i];
    for (std::int64_t i = 0; i < full.weights.numel(); ++i) p1_exact &= full.weights.ptr()[i] == p1.weights.ptr()[i];

    const int s = mc.s, h = small.height / s, w = small.width / s;
    const int rf = receptive_field_radius(mc.decoder, s);
    const int P = 4;
    const auto tiled = model.render_patched(views, small, P, rf);
    // Interior: cells at least rf from every cut edge of every patch covering them.
    const auto plan = plan_patches(h, w, P, rf);
    std::vector<std::uint8_t> interior(static_cast<std::size_t>(h * w), 1);
    for (const auto &p : plan)
        for (int y = p.y0; y < p.y0 + p.ph; ++y)
            for (int x = p.x0; x < p.x0 + p.pw; ++x) {
                const bool near_cut = (p.y0 > 0 && y - p.y0 < rf) || (p.y0 + p.ph < h && p.y0 + p.ph - 1 - y < rf) ||
                                      (p.x0 > 0 && x - p.x0 < rf) || (p.x0 + p.pw < w && p.x0 + p.pw - 1 - x < rf);
                if (near_cut) interior[static_cast<std::size_t>(y * w + x)] = 0;
            }
    double worst = 0;
    std::int64_t n_interior = 0;
    const std::int64_t HW = static_cast<std::int64_t>(small.height) * small.width;
    for (int y = 0; y < small.height; ++y)
        for (int x = 0; x < small.width; ++x) {
            if (!interior[static_cast<std::size_t>((y / s) * w + x / s)]) continue;
            ++n_interior;
            for (int c = 0; c < 3; ++c) {
                const std::int64_t i = c * HW + y * small.width + x;
                worst = std::max(worst, static_cast<double>(std::abs(full.rgb.ptr()[i] - tiled.rgb.ptr()[i])));
            }
        }

    // Large target: unpatched exceeds the cap, P = 4 stays below it.
    RigOptions big = ro;
    big.height = 768;
    big.width = 1024;
    const auto large = arc_rig(big)[0];
    auto &meter = MemoryMeter::instance();
    std::size_t patched_peak = 0;
    {
        MemoryCapGuard g(0);
        model.render_patched(views, large, P, rf);
        patched_peak = meter.peak();
    }
    const std::size_t cap = patched_peak + patched_peak / 4;
    bool patched_ok = true, unpatched_exceeds = false;
    {
        MemoryCapGuard g(cap);
        try {
            model.render_patched(views, large, P, rf);
        } catch (const MemoryCapExceeded &) {
            patched_ok = false;
        }
    }
    std::size_t unpatched_peak = 0;
    {
        MemoryCapGuard g(cap);
        try {
            model.render_coarse(views, large);
        } catch (const MemoryCapExceeded &) {
            unpatched_exceeds = true;
        }
    }
    {
        MemoryCapGuard g(0);
        model.render_coarse(views, large);
        unpatched_peak = meter.peak();
    }
    const bool ok = p1_exact && n_interior > 0 && worst <= 1e-5 && patched_ok && unpatched_exceeds;
    return {ok, fmt("P=1 %s; P=4 overlap %d: %lld interior px, max diff %.2e (<= 1e-5); %dx%d cap %.0f MB: patched %s "
                    "(peak %.0f MB), unpatched %s (peak %.0f MB)",
                    p1_exact ? "bit-identical" : "DIFFERS", rf, static_cast<long long>(n_interior), worst, large.width, large.height,
                    cap / 1e6, patched_ok ? "fits" : "EXCEEDS", patched_peak / 1e6, unpatched_exceeds ? "exceeds" : "FITS",
                    unpatched_peak / 1e6)};
}

// ---------------------------------------------------------------------------
// 10. Round trips

CameraView random_pose(std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> u(-2, 2);
    double q[4], len = 0;
    for (double &v : q) len += (v = n(rng)) * v;
    for (double &v : q) v /= std::sqrt(len);
    const double a = q[0], x = q[1], y = q[2], z = q[3];
    CameraView c;
    c.world_to_camera = {1 - 2 * (y * y + z * z), 2 * (x * y - z * a), 2 * (x * z + y * a), u(rng),
                         2 * (x * y + z * a), 1 - 2 * (x * x + z * z), 2 * (y * z - x * a), u(rng),
                         2 * (x * z - y * a), 2 * (y * z + x * a), 1 - 2 * (x * x + y * y), u(rng),
                         0, 0, 0, 1};
    c.fx = 40 + 80 * std::abs(n(rng));
    c.fy = 40 + 80 * std::abs(n(rng));
    c.cx = 32 + u(rng);
    c.cy = 24 + u(rng);
    c.width = 64;
    c.height = 48;
    c.near = 0.5;
    c.far = 10;
    return c;
}

Outcome criterion_round_trips() {
    std::mt19937_64 rng(5);
    // Geometry.
    double geo = 0;
    std::uniform_real_distribution<double> uu(-10, 70), zz(0.6, 9.5);
    for (int i = 0; i < 1000; ++i) {
        const auto cam = random_pose(rng);
        const double u = uu(rng), v = uu(rng), z = zz(rng);
        const auto p = project(unproject(u, v, z, cam), cam);
        geo = std::max({geo, std::abs(p.u - u), std::abs(p.v - v), std::abs(p.depth - z)});
        const Vec3 wpt = cam.to_world({uu(rng) / 30, uu(rng) / 30, zz(rng)});
        const auto q = project(wpt, cam);
        const Vec3 back = unproject(q.u, q.v, q.depth, cam);
        for (int k = 0; k < 3; ++k) geo = std::max(geo, std::abs(back[k] - wpt[k]));
    }

    const auto dir = scratch_dir("roundtrip");
    // Checkpoint.
    ModelConfig mc = toy_config().model;
    mc.fine.enabled = true;
    Model<float> a(mc);
    for (auto &p : a.params().all())
        for (std::int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.ptr()[i] = std::uniform_real_distribution<float>(-3, 3)(rng);
    save_checkpoint(a.params(), (dir / "m.ckpt").string());
    mc.init_seed = 99;
    Model<float> b(mc);
    load_checkpoint(b.params(), (dir / "m.ckpt").string());
    bool ckpt = a.params().all().size() == b.params().all().size();
    for (std::size_t k = 0; ckpt && k < a.params().all().size(); ++k) {
        const auto &x = a.params().all()[k].tensor, &y = b.params().all()[k].tensor;
        ckpt &= x.numel() == y.numel() && std::memcmp(x.ptr(), y.ptr(), static_cast<std::size_t>(x.numel()) * sizeof(float)) == 0;
    }

    // PPM: decode(encode(x)) is a fixed point after one quantization.
    const auto img = random_tensor<float>({3, 17, 23}, rng, -0.1, 1.1);
    write_ppm((dir / "a.ppm").string(), img);
    const auto r1 = read_ppm((dir / "a.ppm").string());
    write_ppm((dir / "b.ppm").string(), r1);
    const auto r2 = read_ppm((dir / "b.ppm").string());
    auto bytes = [](const fs::path &p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), {});
    };
    bool ppm = bytes(dir / "a.ppm") == bytes(dir / "b.ppm") && r1.numel() == r2.numel();
    for (std::int64_t i = 0; ppm && i < r1.numel(); ++i) ppm &= r1.ptr()[i] == r2.ptr()[i];
    fs::remove_all(dir);

    // Pixel shuffle.
    bool shuffle = true;
    for (int r : {2, 4, 8}) {
        const auto x = random_tensor<double>({3 * r * r, 5, 6}, rng);
        const auto y = pixel_unshuffle(pixel_shuffle(x, r), r);
        const auto z = random_tensor<double>({2, 4, 3 * r, 2 * r}, rng);
        const auto zz2 = pixel_shuffle(pixel_unshuffle(z, r), r);
        for (std::int64_t i = 0; i < x.numel(); ++i) shuffle &= x.ptr()[i] == y.ptr()[i];
        for (std::int64_t i = 0; i < z.numel(); ++i) shuffle &= z.ptr()[i] == zz2.ptr()[i];
    }
    return {geo < 1e-9 && ckpt && ppm && shuffle,
            fmt("geometry max error %.2e (< 1e-9); checkpoint %s; PPM %s; pixel shuffle %s", geo, ckpt ? "bit-exact" : "DIFFERS",
                ppm ? "idempotent" : "NOT IDEMPOTENT", shuffle ? "bit-exact" : "DIFFERS")};
}

} // namespace

int main(int argc, char **argv) {
    const std::vector<std::pair<int, std::function<Outcome()>>> all{
        {1, criterion_slab},      {2, criterion_gradients},   {3, criterion_cosine},  {4, criterion_resampling},
        {5, criterion_parameters}, {6, criterion_probes},     {7, criterion_overfit}, {8, criterion_orientation},
        {9, criterion_patches},   {10, criterion_round_trips}};
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
    int failures = 0;
    for (const auto &[id, fn] : all) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), id) == wanted.end()) continue;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
