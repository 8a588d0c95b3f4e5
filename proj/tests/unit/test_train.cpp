// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/errors.hpp"
#include "frf/synth.hpp"
#include "frf/train.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace frf;
using frf::testing::TempDir;

namespace {

Tensor<double> random_image(int h, int w, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> v(static_cast<std::size_t>(3 * h * w));
    for (auto &e : v) e = u(rng);
    return Tensor<double>::from({3, h, w}, std::move(v));
}

// Direct windowed SSIM: every valid 11x11 window, Gaussian sigma 1.5.
double ssim_oracle(const Tensor<double> &a, const Tensor<double> &b) {
    const int C = static_cast<int>(a.dim(0)), H = static_cast<int>(a.dim(1)), W = static_cast<int>(a.dim(2));
    double g[11], gs = 0;
    for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5));
    for (double &v : g) v /= gs;
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    int n = 0;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y + 11 <= H; ++y)
            for (int x = 0; x + 11 <= W; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const double wgt = g[i] * g[j];
                        const double va = a.ptr()[(c * H + y + i) * W + x + j], vb = b.ptr()[(c * H + y + i) * W + x + j];
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                saa -= ma * ma;
                sbb -= mb * mb;
                sab -= ma * mb;
                total += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
                ++n;
            }
    return total / n;
}

TrainConfig tiny_config() {
    TrainConfig c;
    auto &m = c.model;
    m.s = 4;
    m.depth_planes = 8;
    m.encoder.c2 = 4;
    m.encoder.c4 = 4;
    m.encoder.c8 = 8;
    m.encoder.heads = 2;
    m.encoder.transformer_blocks = 1;
    m.volume.channels = 8;
    m.volume.groups = 4;
    m.volume.window = 3;
    m.volume.agg_hidden = 8;
    m.decoder.width = 8;
    m.decoder.blocks = 1;
    m.decoder.up_channels = 4;
    m.fine.channels = 4;
    m.fine.c1 = 4;
    m.fine.c2 = 8;
    m.fine.samples = 4;
    m.fine.window = 1;
    m.fine.groups = 4;
    c.steps = 3;
    c.source_views = {0, 2};
    c.target_views = {1};
    c.log_every = 1;
    return c;
}

Scene tiny_scene(const TempDir &dir) {
    SynthOptions o;
    o.preset = Preset::sphere;
    o.rig.views = 3;
    o.rig.baseline_deg = 15;
    o.rig.height = o.rig.width = 16;
    o.d_oracle = 64;
    synth_scene(o, dir.path().string());
    return load_scene(dir.path().string());
}

std::vector<float> snapshot(const ParameterSet<float> &p) {
    std::vector<float> v;
    for (const auto &e : p.all()) v.insert(v.end(), e.tensor.ptr(), e.tensor.ptr() + e.tensor.numel());
    return v;
}

} // namespace

TEST(Ssim, IdenticalImagesScoreOne) {
    std::mt19937_64 rng(1);
    const auto a = random_image(16, 20, rng);
    EXPECT_NEAR(ssim(a, a).item(), 1.0, 1e-12);
}

TEST(Ssim, MatchesDirectWindowOracle) {
    std::mt19937_64 rng(2);
    const auto a = random_image(15, 17, rng), b = random_image(15, 17, rng);
    EXPECT_NEAR(ssim(a, b).item(), ssim_oracle(a, b), 1e-10);
}

TEST(Ssim, ConstantImagesClosedForm) {
    const auto a = Tensor<double>::full({3, 12, 12}, 0.2), b = Tensor<double>::full({3, 12, 12}, 0.6);
    const double expect = (2 * 0.2 * 0.6 + 1e-4) / (0.04 + 0.36 + 1e-4);
    EXPECT_NEAR(ssim(a, b).item(), expect, 1e-12);
}

TEST(Ssim, InvertedCheckerboardIsNegative) {
    std::vector<double> v(3 * 16 * 16), w(v.size());
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) {
                v[(c * 16 + i) * 16 + j] = (i + j) % 2;
                w[(c * 16 + i) * 16 + j] = 1 - (i + j) % 2;
            }
    EXPECT_LT(ssim(Tensor<double>::from({3, 16, 16}, v), Tensor<double>::from({3, 16, 16}, w)).item(), 0.0);
}

TEST(Ssim, SmallImageRejected) {
    const auto a = Tensor<double>::zeros({3, 10, 12});
    EXPECT_THROW(ssim(a, a), ContractError);
}

TEST(Psnr, Examples) {
    const auto a = Tensor<double>::full({3, 4, 4}, 0.5);
    EXPECT_EQ(psnr(a, a), 99.0);
    EXPECT_NEAR(psnr(a, Tensor<double>::full({3, 4, 4}, 0.6)), 20.0, 1e-9);
    EXPECT_NEAR(psnr(a, Tensor<double>::full({3, 4, 4}, 0.51)), 40.0, 1e-9);
}

TEST(Loss, ZeroIffEqualAndL1Example) {
    std::mt19937_64 rng(3);
    const auto a = random_image(12, 12, rng);
    EXPECT_NEAR(image_loss(a, a, 1.0, 0.5).item(), 0.0, 1e-12);
    const auto b = add_scalar(a, 0.1);
    EXPECT_NEAR(image_loss(b, a, 1.0, 0.0).item(), 0.1, 1e-12);
    EXPECT_GT(image_loss(b, a, 1.0, 0.5).item(), 0.1);
    EXPECT_THROW(image_loss(a, random_image(12, 13, rng), 1.0, 0.5), DimensionError);
}

TEST(AdamOptimizer, FirstStepMovesByLearningRate) {
    ParameterSet<double> ps;
    auto p = ps.add("w", Tensor<double>::from({3}, {1.0, -2.0, 0.5}), "decoder");
    auto frozen = ps.add("e", Tensor<double>::from({1}, {4.0}), "encoder");
    Adam<double> opt(ps, {{"decoder", 0.1}});
    auto loss = add(sum(mul(p, Tensor<double>::from({3}, {2.0, -3.0, 1e-3}))), sum(mul(frozen, frozen)));
    loss.backward();
    opt.step();
    // m_hat / sqrt(v_hat) = g / |g| on the first step.
    EXPECT_NEAR(p.ptr()[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p.ptr()[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p.ptr()[2], 0.5 - 0.1 * 1e-3 / (1e-3 + 1e-8), 1e-15);
    EXPECT_EQ(frozen.ptr()[0], 4.0);
}

TEST(AdamOptimizer, SecondStepMatchesRecurrence) {
    ParameterSet<double> ps;
    auto p = ps.add("w", Tensor<double>::from({1}, {1.0}), "decoder");
    Adam<double> opt(ps, {{"decoder", 0.01}});
    double x = 1.0, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
        ps.zero_grad();
        auto loss = mul(p, p);
        loss.backward();
        const double g = 2 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        opt.step();
    }
    EXPECT_NEAR(p.ptr()[0], x, 1e-15);
}

TEST(Train, ZeroLearningRateLeavesParametersBitExact) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    auto cfg = tiny_config();
    cfg.lr_encoder = cfg.lr_decoder = 0;
    Model<float> model(cfg.model);
    const auto before = snapshot(model.params());
    train(model, cfg, scene);
    EXPECT_EQ(snapshot(model.params()), before);
}

TEST(Train, DeterministicUnderSeed) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    auto cfg = tiny_config();
    cfg.crop = 12;
    cfg.target_views = {0, 1, 2};
    Model<float> a(cfg.model), b(cfg.model);
    const auto ra = train(a, cfg, scene), rb = train(b, cfg, scene);
    EXPECT_EQ(snapshot(a.params()), snapshot(b.params()));
    ASSERT_EQ(ra.log.size(), 3u);
    for (std::size_t i = 0; i < ra.log.size(); ++i) {
        EXPECT_EQ(ra.log[i].loss, rb.log[i].loss);
        EXPECT_EQ(ra.log[i].target_view, rb.log[i].target_view);
    }
    EXPECT_NE(snapshot(a.params()), snapshot(Model<float>(cfg.model).params()));
}

TEST(Train, FineStageFreezesCoarse) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    auto cfg = tiny_config();
    cfg.model.fine.enabled = true;
    cfg.stage = Stage::fine;
    Model<float> model(cfg.model);
    const auto coarse_before = parameter_hash(model.params(), "coarse.");
    const auto fine_before = parameter_hash(model.params(), "fine.");
    const auto r = train(model, cfg, scene);
    EXPECT_EQ(r.frozen_hash_before, r.frozen_hash_after);
    EXPECT_EQ(parameter_hash(model.params(), "coarse."), coarse_before);
    EXPECT_NE(parameter_hash(model.params(), "fine."), fine_before);
}

TEST(Train, FineStageNeedsFineModel) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    auto cfg = tiny_config();
    cfg.stage = Stage::fine;
    Model<float> model(cfg.model);
    EXPECT_THROW(train(model, cfg, scene), ValidationError);
    cfg.stage = Stage::coarse;
    cfg.crop = 8;
    EXPECT_THROW(train(model, cfg, scene), ValidationError);
}

TEST(Train, UnknownTargetRejected) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    auto cfg = tiny_config();
    cfg.target_views = {7};
    Model<float> model(cfg.model);
    EXPECT_THROW(train(model, cfg, scene), ContractError);
}

TEST(Evaluate, EmptyListAndUnknownIds) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    const auto cfg = tiny_config();
    Model<float> model(cfg.model);
    const auto r = evaluate(model, cfg, scene, {});
    EXPECT_TRUE(r.views.empty());
    EXPECT_EQ(format_report(r), "view psnr ssim\n");
    EXPECT_THROW(evaluate(model, cfg, scene, {3}), ContractError);
}

TEST(Evaluate, OraclePassThroughIsExact) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    const auto r = evaluate_renders([&](int id) { return scene.views[static_cast<std::size_t>(id)].image; }, scene, {0, 2});
    ASSERT_EQ(r.views.size(), 2u);
    EXPECT_EQ(r.mean_psnr, 99.0);
    EXPECT_NEAR(r.mean_ssim, 1.0, 1e-6);
}

TEST(Evaluate, WritesRenders) {
    TempDir dir, out;
    const auto scene = tiny_scene(dir);
    const auto cfg = tiny_config();
    Model<float> model(cfg.model);
    const auto r = evaluate(model, cfg, scene, {1}, out.path().string());
    EXPECT_EQ(r.views.size(), 1u);
    EXPECT_TRUE(std::filesystem::exists(out.file("eval_001.ppm")));
}

TEST(ModelIo, SaveLoadRendersIdentically) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    auto cfg = tiny_config();
    cfg.steps = 1;
    Model<float> model(cfg.model);
    train(model, cfg, scene);
    save_model(model, cfg, dir.file("m.ckpt"));
    const auto loaded = load_model(dir.file("m.ckpt"));
    EXPECT_EQ(snapshot(loaded.model->params()), snapshot(model.params()));
    NoGradGuard ng;
    const auto va = model.prepare(source_cameras(cfg, scene));
    const auto vb = loaded.model->prepare(source_cameras(cfg, scene));
    const auto a = model.render_coarse(va, scene.views[1]), b = loaded.model->render_coarse(vb, scene.views[1]);
    for (std::int64_t i = 0; i < a.rgb.numel(); ++i) ASSERT_EQ(a.rgb.ptr()[i], b.rgb.ptr()[i]);
}

TEST(ModelRender, DeterministicAndPatchedP1BitExact) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    const auto cfg = tiny_config();
    Model<float> model(cfg.model);
    NoGradGuard ng;
    const auto views = model.prepare(source_cameras(cfg, scene));
    const auto a = model.render_coarse(views, scene.views[1]);
    const auto b = model.render_coarse(views, scene.views[1]);
    const auto c = model.render_patched(views, scene.views[1], 1, 0);
    for (std::int64_t i = 0; i < a.rgb.numel(); ++i) {
        ASSERT_EQ(a.rgb.ptr()[i], b.rgb.ptr()[i]);
        ASSERT_EQ(a.rgb.ptr()[i], c.rgb.ptr()[i]);
    }
    for (std::int64_t i = 0; i < a.weights.numel(); ++i) ASSERT_EQ(a.weights.ptr()[i], c.weights.ptr()[i]);
}

TEST(ModelRender, ReferenceOrientationCoincidentFrusta) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    auto cfg = tiny_config();
    Model<float> tgt(cfg.model);
    cfg.model.orientation = Orientation::reference;
    Model<float> ref(cfg.model);
    NoGradGuard ng;
    const auto srcs = source_cameras(cfg, scene);
    const auto v1 = tgt.prepare(srcs), v2 = ref.prepare(srcs);
    const auto a = tgt.render_coarse(v1, srcs[0]), b = ref.render_coarse(v2, srcs[0]);
    double worst = 0;
    for (std::int64_t i = 0; i < a.rgb.numel(); ++i) worst = std::max(worst, static_cast<double>(std::abs(a.rgb.ptr()[i] - b.rgb.ptr()[i])));
    EXPECT_LT(worst, 1e-5);
    EXPECT_THROW(ref.render_patched(v2, srcs[0], 2, 1), ContractError);
}

TEST(ModelRender, FineStageShapes) {
    TempDir dir;
    const auto scene = tiny_scene(dir);
    auto cfg = tiny_config();
    cfg.model.fine.enabled = true;
    Model<float> model(cfg.model);
    NoGradGuard ng;
    const auto views = model.prepare(source_cameras(cfg, scene));
    const auto r = model.render(views, scene.views[1]);
    ASSERT_TRUE(r.fine.has_value());
    EXPECT_EQ(r.fine->rgb.shape(), (Shape{3, 16, 16}));
    EXPECT_EQ(r.fine->weights.shape(), (Shape{4, 16, 16}));
    for (std::int64_t i = 0; i < r.fine->opacity.numel(); ++i) EXPECT_LE(r.fine->opacity.ptr()[i], 1.0f + 1e-6f);
}

TEST(DepthToIndex, PlaneCentersMapToIntegers) {
    const auto d = plane_depths(2, 6, 8);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(depth_to_index(d[i], 2, 6, 8, DepthSpacing::linear), i, 1e-12);
    const auto inv = plane_depths(2, 6, 8, DepthSpacing::inverse);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(depth_to_index(inv[i], 2, 6, 8, DepthSpacing::inverse), i, 1e-12);
}

TEST(ModelRender, ReferenceFrustumCoverage) {
    RigOptions ro;
    ro.views = 9;
    ro.baseline_deg = 15;
    const auto cams = arc_rig(ro);
    EXPECT_EQ(outside_reference_fraction(cams[0], cams[0], 16), 0.0);
    const double mid = outside_reference_fraction(cams[0], cams[4], 16);
    EXPECT_GT(mid, 0.0);
    EXPECT_LT(mid, 1.0);
    // Disjoint frusta.
    const auto &c = cams[0];
    const auto away = look_at(c.center() + Vec3{100, 0, 0}, Vec3{100, 0, 0}, {0, -1, 0}, c.fx, c.fy, c.cx, c.cy, c.width, c.height, c.near, c.far);
    EXPECT_EQ(outside_reference_fraction(c, away, 16), 1.0);
}
