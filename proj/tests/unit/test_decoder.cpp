// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/decoder.hpp"
#include "frf/encoder.hpp"
#include "frf/errors.hpp"
#include "frf/model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace frf;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64 &rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto &e : v) e = static_cast<T>(u(rng));
    return Tensor<T>::from(std::move(shape), std::move(v));
}

DecoderConfig small_decoder(DecoderKind kind) {
    DecoderConfig c;
    c.kind = kind;
    c.width = 8;
    c.blocks = 2;
    c.up_channels = 4;
    c.rt_blocks = 1;
    c.rt_heads = 2;
    return c;
}

struct DecoderRig {
    ParameterSet<double> params;
    std::mt19937_64 rng{17};
    std::unique_ptr<Decoder<double>> dec;
    DecoderRig(const DecoderConfig &cfg, int in, int s) {
        dec = std::make_unique<Decoder<double>>(ParamBuilder<double>(params, rng, "dec.", "decoder"), cfg, in, s);
        // Random biases and norm affines so probes see every path.
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        for (auto &p : params.all()) {
            if (p.name.find("weight") != std::string::npos) continue;
            for (std::int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.ptr()[i] += u(rng);
        }
    }
};

// Returns, per cell (d, y, x) of a [C x D x H x W] pair, whether any channel differs.
std::vector<std::uint8_t> changed_cells(const Tensor<double> &a, const Tensor<double> &b) {
    const std::int64_t C = a.dim(0), n = a.numel() / C;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(n), 0);
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] |= a.ptr()[c * n + i] != b.ptr()[c * n + i];
    return out;
}

// Perturbs input cell (d0, y0, x0) and returns the changed output cells of
// the whole field (color and density).
std::vector<std::uint8_t> probe(const Decoder<double> &dec, const Tensor<double> &vol, int d0, int y0, int x0) {
    const auto base = dec(vol);
    auto pert = Tensor<double>::from(vol.shape(), std::vector<double>(vol.ptr(), vol.ptr() + vol.numel()));
    const std::int64_t D = vol.dim(1), H = vol.dim(2), W = vol.dim(3);
    for (std::int64_t c = 0; c < vol.dim(0); ++c) pert.ptr()[((c * D + d0) * H + y0) * W + x0] += 0.75;
    const auto out = dec(pert);
    auto a = changed_cells(base.color, out.color), b = changed_cells(base.density, out.density);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] |= b[i];
    return a;
}

} // namespace

TEST(Decoder, BlockParameterCounts) {
    EXPECT_EQ(block_weight_count(DecoderKind::conv3d, 64), 110592);
    EXPECT_EQ(block_weight_count(DecoderKind::plus21d, 64), 49152);
    EXPECT_DOUBLE_EQ(static_cast<double>(block_weight_count(DecoderKind::conv3d, 64)) /
                         static_cast<double>(block_weight_count(DecoderKind::plus21d, 64)),
                     27.0 / 12.0);
    EXPECT_EQ(block_weight_count(DecoderKind::conv2d, 64), 9 * 64 * 64);
    EXPECT_EQ(block_weight_count(DecoderKind::conv1d, 64), 3 * 64 * 64);
}

TEST(Decoder, CounterMatchesInstantiatedWeights) {
    for (auto kind : {DecoderKind::plus21d, DecoderKind::conv3d, DecoderKind::conv2d, DecoderKind::conv1d, DecoderKind::mlp}) {
        auto cfg = small_decoder(kind);
        cfg.blocks = 3;
        DecoderRig rig(cfg, 5, 2);
        std::int64_t n = 0;
        for (const auto &p : rig.params.all()) {
            if (p.name.rfind("dec.block", 0) == 0 && p.name.find(".weight") != std::string::npos) n += p.tensor.numel();
        }
        EXPECT_EQ(n, 3 * block_weight_count(kind, cfg.width)) << to_string(kind);
    }
}

TEST(Decoder, OutputShapesAndActivationRanges) {
    for (auto kind : {DecoderKind::plus21d, DecoderKind::conv3d, DecoderKind::conv2d, DecoderKind::conv1d,
                      DecoderKind::ray_transformer, DecoderKind::mlp}) {
        DecoderRig rig(small_decoder(kind), 6, 4);
        std::mt19937_64 rng(3);
        const auto vol = random_tensor<double>({6, 5, 3, 2}, rng, -20, 20);
        const auto f = (*rig.dec)(vol);
        ASSERT_EQ(f.color.shape(), (Shape{3, 5, 12, 8})) << to_string(kind);
        ASSERT_EQ(f.density.shape(), (Shape{1, 5, 12, 8})) << to_string(kind);
        for (std::int64_t i = 0; i < f.color.numel(); ++i) {
            EXPECT_GE(f.color.ptr()[i], 0.0);
            EXPECT_LE(f.color.ptr()[i], 1.0);
        }
        for (std::int64_t i = 0; i < f.density.numel(); ++i) EXPECT_GE(f.density.ptr()[i], 0.0);
    }
}

TEST(Decoder, ChannelMismatchRejected) {
    DecoderRig rig(small_decoder(DecoderKind::plus21d), 6, 4);
    EXPECT_THROW((*rig.dec)(Tensor<double>::zeros({5, 2, 2, 2})), ContractError);
}

TEST(Decoder, UpsamplerShapeAndConstantBias) {
    auto cfg = small_decoder(DecoderKind::conv2d);
    DecoderRig rig(cfg, 4, 8);
    // Zero upsampler weights, constant bias b: every upsampled feature is act(b).
    for (auto &p : rig.params.all()) {
        if (p.name == "dec.upsampler.weight") std::fill(p.tensor.ptr(), p.tensor.ptr() + p.tensor.numel(), 0.0);
        if (p.name == "dec.upsampler.bias") std::fill(p.tensor.ptr(), p.tensor.ptr() + p.tensor.numel(), 0.3);
        if (p.name == "dec.density_head.weight") std::fill(p.tensor.ptr(), p.tensor.ptr() + p.tensor.numel(), 1.0);
        if (p.name == "dec.density_head.bias") p.tensor.ptr()[0] = 0;
    }
    std::mt19937_64 rng(8);
    const auto f = (*rig.dec)(random_tensor<double>({4, 16, 1, 1}, rng));
    ASSERT_EQ(f.density.shape(), (Shape{1, 16, 8, 8}));
    const double a = 0.3 / (1 + std::exp(-0.3));
    const double expect = std::log1p(std::exp(cfg.up_channels * a));
    for (std::int64_t i = 0; i < f.density.numel(); ++i) EXPECT_NEAR(f.density.ptr()[i], expect, 1e-14);
}

TEST(Decoder, MlpIsCellLocal) {
    DecoderRig rig(small_decoder(DecoderKind::mlp), 4, 1);
    std::mt19937_64 rng(4);
    const auto vol = random_tensor<double>({4, 5, 4, 3}, rng);
    const auto ch = probe(*rig.dec, vol, 2, 1, 2);
    for (int d = 0; d < 5; ++d)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 3; ++x) EXPECT_EQ(ch[(d * 4 + y) * 3 + x] != 0, d == 2 && y == 1 && x == 2);
}

TEST(Decoder, MlpCommutesWithCellPermutation) {
    DecoderRig rig(small_decoder(DecoderKind::mlp), 4, 1);
    std::mt19937_64 rng(6);
    const auto vol = random_tensor<double>({4, 3, 2, 2}, rng);
    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto pv = Tensor<double>::zeros({4, 3, 2, 2});
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 12; ++i) pv.ptr()[c * 12 + i] = vol.ptr()[c * 12 + perm[i]];
    const auto a = (*rig.dec)(vol), b = (*rig.dec)(pv);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 12; ++i) EXPECT_EQ(b.color.ptr()[c * 12 + i], a.color.ptr()[c * 12 + perm[i]]);
}

TEST(Decoder, RayLocalVariants) {
    for (auto kind : {DecoderKind::conv1d, DecoderKind::ray_transformer}) {
        DecoderRig rig(small_decoder(kind), 4, 1);
        std::mt19937_64 rng(5);
        const auto vol = random_tensor<double>({4, 6, 4, 4}, rng);
        const auto ch = probe(*rig.dec, vol, 3, 2, 1);
        int same_ray = 0;
        for (int d = 0; d < 6; ++d)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) {
                    const bool c = ch[(d * 4 + y) * 4 + x] != 0;
                    if (y != 2 || x != 1) EXPECT_FALSE(c) << to_string(kind);
                    else same_ray += c;
                }
        EXPECT_GT(same_ray, 1) << to_string(kind); // context travels along the ray
    }
}

TEST(Decoder, Conv2dIsSliceLocal) {
    DecoderRig rig(small_decoder(DecoderKind::conv2d), 4, 1);
    std::mt19937_64 rng(9);
    const auto vol = random_tensor<double>({4, 4, 6, 6}, rng);
    const auto ch = probe(*rig.dec, vol, 1, 3, 3);
    int in_slice = 0;
    for (int d = 0; d < 4; ++d)
        for (int i = 0; i < 36; ++i) {
            if (d != 1) EXPECT_FALSE(ch[d * 36 + i]);
            else in_slice += ch[d * 36 + i];
        }
    EXPECT_GT(in_slice, 1);
}

TEST(Decoder, Conv2dSliceLocalAfterUpsampling) {
    DecoderRig rig(small_decoder(DecoderKind::conv2d), 4, 4);
    std::mt19937_64 rng(10);
    const auto vol = random_tensor<double>({4, 3, 3, 3}, rng);
    const auto ch = probe(*rig.dec, vol, 0, 1, 1);
    for (int d = 1; d < 3; ++d)
        for (int i = 0; i < 144; ++i) EXPECT_FALSE(ch[d * 144 + i]);
}

TEST(Decoder, ReceptiveFieldRadiusBoundsSpread) {
    for (auto kind : {DecoderKind::plus21d, DecoderKind::conv3d, DecoderKind::conv2d}) {
        auto cfg = small_decoder(kind);
        DecoderRig rig(cfg, 4, 1);
        std::mt19937_64 rng(12);
        const int n = 11, c = 5;
        const auto vol = random_tensor<double>({4, 3, n, n}, rng);
        const auto ch = probe(*rig.dec, vol, 1, c, c);
        const int r = receptive_field_radius(cfg, 1);
        int reach = 0;
        for (int d = 0; d < 3; ++d)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    if (ch[(d * n + y) * n + x]) reach = std::max({reach, std::abs(y - c), std::abs(x - c)});
        EXPECT_EQ(reach, r) << to_string(kind);
    }
}

TEST(Decoder, Plus21dMatchesConv3dShape) {
    DecoderRig a(small_decoder(DecoderKind::plus21d), 4, 2), b(small_decoder(DecoderKind::conv3d), 4, 2);
    const auto vol = Tensor<double>::full({4, 3, 2, 2}, 0.1);
    EXPECT_EQ((*a.dec)(vol).color.shape(), (*b.dec)(vol).color.shape());
}

TEST(FineUNet, ShapeAndSkipPath) {
    ParameterSet<double> params;
    std::mt19937_64 rng(2);
    FineConfig cfg;
    cfg.channels = 4;
    cfg.c1 = 6;
    cfg.c2 = 8;
    FineUNet<double> net(ParamBuilder<double>(params, rng, "unet.", "decoder"), cfg, Activation::silu);
    const auto vol = random_tensor<double>({4, 8, 8, 4}, rng);
    const auto f = net(vol);
    EXPECT_EQ(f.color.shape(), (Shape{3, 8, 8, 4}));
    EXPECT_EQ(f.density.shape(), (Shape{1, 8, 8, 4}));
    // Without the bottleneck path, input changes still reach the output.
    auto &w = net.bottleneck().w;
    std::fill(w.ptr(), w.ptr() + w.numel(), 0.0);
    const auto g = net(vol), h = net(random_tensor<double>({4, 8, 8, 4}, rng));
    int diff = 0;
    for (std::int64_t i = 0; i < g.color.numel(); ++i) diff += g.color.ptr()[i] != h.color.ptr()[i];
    EXPECT_GT(diff, g.color.numel() / 2);
    EXPECT_THROW(net(Tensor<double>::zeros({4, 6, 8, 4})), ContractError);
}

TEST(Model, WholeToyParameterRatio) {
    // Toy widths with the full 12-block decoder.
    ModelConfig cfg;
    cfg.encoder.c2 = 16;
    cfg.encoder.c4 = 24;
    cfg.encoder.c8 = 32;
    cfg.encoder.transformer_blocks = 1;
    cfg.volume.channels = 32;
    cfg.decoder.width = 64;
    cfg.s = 4;
    cfg.depth_planes = 32;
    cfg.decoder.kind = DecoderKind::plus21d;
    const Model<float> a(cfg);
    cfg.decoder.kind = DecoderKind::conv3d;
    const Model<float> b(cfg);
    const double ratio = static_cast<double>(b.params().count()) / static_cast<double>(a.params().count());
    EXPECT_GT(ratio, 1.5) << b.params().count() << " / " << a.params().count();
}

namespace {

struct EncoderRig {
    ParameterSet<double> params;
    std::mt19937_64 rng{23};
    EncoderConfig cfg;
    std::unique_ptr<Encoder<double>> enc;
    EncoderRig() {
        cfg.c2 = 4;
        cfg.c4 = 6;
        cfg.c8 = 8;
        cfg.heads = 2;
        enc = std::make_unique<Encoder<double>>(ParamBuilder<double>(params, rng, "enc.", "encoder"), cfg);
        std::uniform_real_distribution<double> u(-0.2, 0.2);
        for (auto &p : params.all()) {
            if (p.name.find("weight") != std::string::npos) continue;
            for (std::int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.ptr()[i] += u(rng);
        }
    }
    const Tensor<double> &param(const std::string &name) const { return params.find(name)->tensor; }
};

// Direct 3x3 convolution with padding 1 on [C x H x W].
std::vector<double> conv_oracle(const std::vector<double> &x, int C, int H, int W, const Tensor<double> &w,
                                const Tensor<double> &b, int stride, int &Ho, int &Wo) {
    const int O = static_cast<int>(w.dim(0));
    Ho = (H + 2 - 3) / stride + 1;
    Wo = (W + 2 - 3) / stride + 1;
    std::vector<double> y(static_cast<std::size_t>(O * Ho * Wo));
    for (int o = 0; o < O; ++o)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                double s = b.ptr()[o];
                for (int c = 0; c < C; ++c)
                    for (int a = 0; a < 3; ++a)
                        for (int e = 0; e < 3; ++e) {
                            const int yi = i * stride + a - 1, xj = j * stride + e - 1;
                            if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                            s += w.ptr()[((o * C + c) * 3 + a) * 3 + e] * x[(c * H + yi) * W + xj];
                        }
                y[(o * Ho + i) * Wo + j] = s;
            }
    return y;
}

double silu_ref(double v) { return v / (1 + std::exp(-v)); }

} // namespace

TEST(Encoder, PyramidShapes) {
    EncoderRig rig;
    const auto p = rig.enc->encode_cnn(Tensor<double>::full({3, 64, 64}, 0.5));
    EXPECT_EQ(p.f2.shape(), (Shape{4, 32, 32}));
    EXPECT_EQ(p.f4.shape(), (Shape{6, 16, 16}));
    EXPECT_EQ(p.f8.shape(), (Shape{8, 8, 8}));
    EXPECT_THROW(rig.enc->encode_cnn(Tensor<double>::zeros({3, 60, 64})), ContractError);
}

TEST(Encoder, CnnMatchesDirectOracle) {
    EncoderRig rig;
    std::mt19937_64 rng(1);
    const int H = 16, W = 24;
    const auto img = random_tensor<double>({3, H, W}, rng, 0, 1);
    const auto got = rig.enc->encode_cnn(img);

    int h = H, w = W, c = 3, ho, wo;
    auto act = [](std::vector<double> v) {
        for (auto &e : v) e = silu_ref(e);
        return v;
    };
    auto conv = [&](const std::vector<double> &x, const std::string &name, int stride) {
        auto y = conv_oracle(x, c, h, w, rig.param("enc." + name + ".weight"), rig.param("enc." + name + ".bias"), stride, ho, wo);
        c = static_cast<int>(rig.param("enc." + name + ".weight").dim(0));
        h = ho;
        w = wo;
        return y;
    };
    auto block = [&](const std::vector<double> &x, int i) {
        const std::string b = "block" + std::to_string(i);
        auto y = conv(act(conv(x, b + ".conv1", 1)), b + ".conv2", 1);
        for (std::size_t k = 0; k < y.size(); ++k) y[k] += x[k];
        return act(y);
    };
    std::vector<double> x(img.ptr(), img.ptr() + img.numel());
    x = act(conv(x, "stem", 1));
    const Tensor<double> *levels[3] = {&got.f2, &got.f4, &got.f8};
    for (int lvl = 0; lvl < 3; ++lvl) {
        x = block(block(x, 2 * lvl + 1), 2 * lvl + 2);
        x = act(conv(x, "down" + std::to_string(lvl + 1), 2));
        ASSERT_EQ(levels[lvl]->numel(), static_cast<std::int64_t>(x.size()));
        double worst = 0;
        for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(levels[lvl]->ptr()[k] - x[k]));
        EXPECT_LT(worst, 1e-12) << "level " << lvl;
    }
}

TEST(Encoder, SharedWeightsGiveIdenticalPyramids) {
    EncoderRig rig;
    std::mt19937_64 rng(2);
    const auto img = random_tensor<double>({3, 16, 16}, rng, 0, 1);
    const auto p = (*rig.enc)({img, img});
    for (std::int64_t i = 0; i < p[0].f8.numel(); ++i) EXPECT_EQ(p[0].f8.ptr()[i], p[1].f8.ptr()[i]);
    // Identical inputs stay identical through cross-attention.
    for (std::int64_t i = 0; i < p[0].t8.numel(); ++i) EXPECT_EQ(p[0].t8.ptr()[i], p[1].t8.ptr()[i]);
}

TEST(Encoder, TransformerCyclicPermutationBitExact) {
    EncoderRig rig;
    std::mt19937_64 rng(3);
    std::vector<Tensor<double>> f;
    for (int k = 0; k < 3; ++k) f.push_back(random_tensor<double>({8, 2, 3}, rng));
    const auto a = rig.enc->multiview_transformer(f);
    const auto b = rig.enc->multiview_transformer({f[1], f[2], f[0]});
    const int map[3] = {1, 2, 0};
    for (int k = 0; k < 3; ++k) {
        ASSERT_EQ(b[k].shape(), f[0].shape());
        for (std::int64_t i = 0; i < a[0].numel(); ++i) EXPECT_EQ(b[k].ptr()[i], a[map[k]].ptr()[i]);
    }
}

TEST(Encoder, TransformerPermutationWithinRounding) {
    // A non-cyclic reorder changes the key order, so only rounding differs.
    EncoderRig rig;
    std::mt19937_64 rng(4);
    std::vector<Tensor<double>> f;
    for (int k = 0; k < 4; ++k) f.push_back(random_tensor<double>({8, 2, 2}, rng));
    const auto a = rig.enc->multiview_transformer(f);
    const auto b = rig.enc->multiview_transformer({f[2], f[0], f[3], f[1]});
    const int map[4] = {2, 0, 3, 1};
    for (int k = 0; k < 4; ++k)
        for (std::int64_t i = 0; i < a[0].numel(); ++i) EXPECT_NEAR(b[k].ptr()[i], a[map[k]].ptr()[i], 1e-12);
}

TEST(Encoder, TransformerContracts) {
    EncoderRig rig;
    const auto f = Tensor<double>::zeros({8, 2, 2});
    EXPECT_THROW(rig.enc->multiview_transformer({f}), ContractError);
    EXPECT_THROW(rig.enc->multiview_transformer({f, Tensor<double>::zeros({8, 2, 3})}), DimensionError);
}
