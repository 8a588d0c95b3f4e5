// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/gradcheck_suite.hpp"

#include "frf/decoder.hpp"
#include "frf/encoder.hpp"
#include "frf/errors.hpp"
#include "frf/gradcheck.hpp"
#include "frf/render.hpp"
#include "frf/train.hpp"
#include "frf/volume.hpp"

#include <cmath>

namespace frf {
namespace {

using T64 = Tensor<double>;

std::vector<T64> tensors_of(const ParameterSet<double> &ps) {
    std::vector<T64> out;
    for (const auto &p : ps.all()) out.push_back(p.tensor);
    return out;
}

GradCase op(const std::string &name, std::function<double(std::uint64_t)> f) { return {name, false, std::move(f)}; }
GradCase module(const std::string &name, std::function<double(std::uint64_t)> f) { return {name, true, std::move(f)}; }

double check_decoder(DecoderKind kind, std::uint64_t s) {
    DecoderConfig cfg;
    cfg.kind = kind;
    cfg.width = 4;
    cfg.blocks = 1;
    cfg.up_channels = 2;
    cfg.rt_blocks = 1;
    cfg.rt_heads = 2;
    ParameterSet<double> ps;
    std::mt19937_64 rng(s);
    Decoder<double> dec(ParamBuilder<double>(ps, rng, "dec.", "decoder"), cfg, 3, 2);
    auto vol = random_uniform<double>({3, 4, 3, 3}, s + 1);
    auto inputs = tensors_of(ps);
    inputs.push_back(vol);
    return grad_check(
        [&] {
            auto f = dec(vol);
            return add(random_projection(f.color, s + 2), random_projection(f.density, s + 3));
        },
        inputs);
}

struct TinyScene {
    std::vector<CameraView> cams;
    std::vector<T64> images;
    CameraView target;
};

TinyScene tiny_scene(int K, std::uint64_t s) {
    TinyScene t;
    for (int k = 0; k < K; ++k) {
        const double th = (k - 0.5 * (K - 1)) * 0.15;
        auto cam = look_at({4 * std::sin(th), 0, -4 * std::cos(th)}, {0, 0, 0}, {0, -1, 0}, 16, 16, 8, 8, 16, 16, 2, 6);
        t.images.push_back(random_uniform<double>({3, 16, 16}, s + 50 + static_cast<std::uint64_t>(k), 0.0, 1.0));
        t.cams.push_back(cam);
    }
    t.target = look_at({0.3, 0.1, -4}, {0, 0, 0}, {0, -1, 0}, 16, 16, 8, 8, 16, 16, 2, 6);
    return t;
}

EncoderConfig tiny_encoder() {
    EncoderConfig e;
    e.c2 = 4;
    e.c4 = 4;
    e.c8 = 4;
    e.transformer_blocks = 1;
    e.heads = 2;
    e.ffn_mult = 1;
    return e;
}

double check_volume(std::uint64_t s) {
    const auto sc = tiny_scene(3, s);
    ParameterSet<double> ps;
    std::mt19937_64 rng(s);
    const auto ecfg = tiny_encoder();
    Encoder<double> enc(ParamBuilder<double>(ps, rng, "enc.", "encoder"), ecfg);
    VolumeConfig vc;
    vc.channels = 3;
    vc.window = 3;
    vc.groups = 2;
    vc.agg_hidden = 4;
    VolumeBuilder<double> vb(ParamBuilder<double>(ps, rng, "vol.", "decoder"), vc, ecfg.feature_width());
    const auto grid = grid_from_rays(make_rays(sc.target, 8, 3));
    auto inputs = tensors_of(ps);
    auto imgs = sc.images;
    return grad_check(
        [&] {
            SourceViews<double> v;
            v.cams = sc.cams;
            v.images = imgs;
            v.pyramids = enc(imgs);
            return random_projection(vb.build(v, grid).z, s + 4);
        },
        inputs);
}

} // namespace

const std::vector<GradCase> &gradcheck_suite() {
    static const std::vector<GradCase> cases = [] {
        std::vector<GradCase> c;
        auto u = [](Shape sh, std::uint64_t seed, double lo = -1, double hi = 1) { return random_uniform<double>(sh, seed, lo, hi); };
        auto unary = [&](const std::string &name, std::function<T64(const T64 &)> f, double lo = -1, double hi = 1) {
            c.push_back(op(name, [f, lo, hi, u](std::uint64_t s) {
                auto a = u({3, 4}, s, lo, hi);
                return grad_check([&] { return random_projection(f(a), s + 1); }, {a});
            }));
        };
        auto binary = [&](const std::string &name, std::function<T64(const T64 &, const T64 &)> f, double blo = -1) {
            c.push_back(op(name, [f, u, blo](std::uint64_t s) {
                auto a = u({3, 4}, s), b = u({4}, s + 1, blo, 2.0);
                return grad_check([&] { return random_projection(f(a, b), s + 2); }, {a, b});
            }));
        };
        binary("add", [](const T64 &a, const T64 &b) { return add(a, b); });
        binary("sub", [](const T64 &a, const T64 &b) { return sub(a, b); });
        binary("mul", [](const T64 &a, const T64 &b) { return mul(a, b); });
        binary("div", [](const T64 &a, const T64 &b) { return div(a, b); }, 0.5);
        unary("add_scalar", [](const T64 &a) { return add_scalar(a, 0.3); });
        unary("mul_scalar", [](const T64 &a) { return mul_scalar(a, 1.7); });
        unary("neg", [](const T64 &a) { return neg(a); });
        unary("exp", [](const T64 &a) { return exp(a); });
        unary("log", [](const T64 &a) { return log(a); }, 0.5, 2.0);
        unary("abs", [](const T64 &a) { return abs(a); }, 0.2, 2.0);
        unary("square", [](const T64 &a) { return square(a); });
        unary("sigmoid", [](const T64 &a) { return sigmoid(a); });
        unary("softplus", [](const T64 &a) { return softplus(a); });
        unary("relu", [](const T64 &a) { return relu(a); }, 0.2, 2.0);
        unary("silu", [](const T64 &a) { return silu(a); });
        unary("sum", [](const T64 &a) { return sum(a); });
        unary("sum_axis", [](const T64 &a) { return sum(a, 1, true); });
        unary("mean", [](const T64 &a) { return mean(a); });
        unary("mean_axis", [](const T64 &a) { return mean(a, 0); });
        unary("canonical_sum", [](const T64 &a) { return canonical_sum(a, 0); });
        unary("softmax", [](const T64 &a) { return softmax(a, 1); });
        unary("softmax_order_invariant", [](const T64 &a) { return softmax(a, 0, true); });
        unary("log_softmax", [](const T64 &a) { return log_softmax(a, 1); });
        unary("reshape", [](const T64 &a) { return reshape(a, {2, -1}); });
        unary("permute", [](const T64 &a) { return permute(reshape(a, {3, 2, 2}), {2, 0, 1}); });
        unary("transpose2d", [](const T64 &a) { return transpose2d(a); });
        unary("concat", [](const T64 &a) { return concat<double>({a, mul(a, a)}, 1); });
        unary("slice", [](const T64 &a) { return slice(a, 1, 1, 2); });
        unary("index_select", [](const T64 &a) { return index_select(a, 0, {2, 0, 2}); });
        unary("expand", [](const T64 &a) { return expand(slice(a, 0, 0, 1), {3, 4}); });
        unary("l2_normalize", [](const T64 &a) { return l2_normalize(a, 1); });
        c.push_back(op("matmul", [u](std::uint64_t s) {
            auto a = u({3, 5}, s), b = u({5, 2}, s + 1);
            return grad_check([&] { return random_projection(matmul(a, b), s + 2); }, {a, b});
        }));
        c.push_back(op("bmm", [u](std::uint64_t s) {
            auto a = u({2, 3, 4}, s), b = u({2, 4, 5}, s + 1), bt = u({2, 5, 4}, s + 2);
            return std::max(grad_check([&] { return random_projection(bmm(a, b), s + 3); }, {a, b}),
                            grad_check([&] { return random_projection(bmm(a, bt, true), s + 4); }, {a, bt}));
        }));
        c.push_back(op("conv3d", [u](std::uint64_t s) {
            auto x = u({2, 4, 5, 3}, s), w = u({3, 2, 3, 3, 2}, s + 1), b = u({3}, s + 2), pw = u({4, 2, 1, 1, 1}, s + 3);
            return std::max(grad_check([&] { return random_projection(conv3d(x, w, b, {2, 1, 1}, {1, 1, 0}), s + 4); }, {x, w, b}),
                            grad_check([&] { return random_projection(conv3d(x, pw, T64{}), s + 5); }, {x, pw}));
        }));
        c.push_back(op("upsample_nearest", [u](std::uint64_t s) {
            auto x = u({2, 2, 3, 2}, s);
            return grad_check([&] { return random_projection(upsample_nearest(x, {2, 1, 3}), s + 1); }, {x});
        }));
        c.push_back(op("pixel_shuffle", [u](std::uint64_t s) {
            auto x = u({8, 2, 3}, s), y = u({2, 4, 6}, s + 1);
            return std::max(grad_check([&] { return random_projection(pixel_shuffle(x, 2), s + 2); }, {x}),
                            grad_check([&] { return random_projection(pixel_unshuffle(y, 2), s + 3); }, {y}));
        }));
        c.push_back(op("grid_sample_bilinear", [u](std::uint64_t s) {
            auto fm = u({3, 5, 6}, s), xy = u({7, 2}, s + 1, -0.5, 4.5);
            return grad_check([&] { return random_projection(grid_sample_bilinear(fm, xy).values, s + 2); }, {fm});
        }));
        c.push_back(op("grid_sample_trilinear", [u](std::uint64_t s) {
            auto v = u({2, 3, 4, 5}, s), xyz = u({6, 3}, s + 1, 0.0, 2.0);
            return grad_check([&] { return random_projection(grid_sample_trilinear(v, xyz).values, s + 2); }, {v});
        }));
        c.push_back(op("normalize_axis", [u](std::uint64_t s) {
            auto x = u({3, 5}, s), g = u({3}, s + 1), b = u({3}, s + 2), lg = u({5}, s + 3), lb = u({5}, s + 4);
            return std::max(grad_check([&] { return random_projection(normalize_axis(x, 0, g, b), s + 5); }, {x, g, b}),
                            grad_check([&] { return random_projection(normalize_axis(x, 1, lg, lb), s + 6); }, {x, lg, lb}));
        }));
        c.push_back(op("composite", [u](std::uint64_t s) {
            const int D = 5, H = 2, W = 3;
            auto sig = u({1, D, H, W}, s, 0.1, 3.0), col = u({3, D, H, W}, s + 1, 0.0, 1.0);
            RaySamples rs;
            rs.N = H * W;
            rs.D = D;
            for (int r = 0; r < rs.N; ++r)
                for (int d = 0; d < D; ++d) {
                    rs.t.push_back(2 + 0.4 * d + 0.01 * r);
                    rs.deltas.push_back(0.4 + 0.02 * d);
                }
            return grad_check([&] { return random_projection(composite(sig, col, rs, H, W).rgb, s + 2); }, {sig, col});
        }));
        c.push_back(op("pairwise_group_cosine", [u](std::uint64_t s) {
            auto f = u({3, 4, 6}, s);
            std::vector<std::uint8_t> valid(12, 1);
            valid[5] = 0;
            return grad_check([&] { return random_projection(pairwise_group_cosine(f, 2, valid), s + 1); }, {f});
        }));
        c.push_back(op("visibility_weights", [u](std::uint64_t s) {
            auto cs = u({2, 4, 2, 3}, s), a = u({1}, s + 1, 0.5, 1.5), b = u({1}, s + 2);
            std::vector<std::uint8_t> mask{1, 1, 1, 1, 0, 1};
            return grad_check([&] { return random_projection(visibility_weights(cs, a, b, mask), s + 3); }, {cs, a, b});
        }));
        c.push_back(op("ssim", [u](std::uint64_t s) {
            auto a = u({3, 12, 13}, s, 0.0, 1.0), b = u({3, 12, 13}, s + 1, 0.0, 1.0);
            return grad_check([&] { return ssim(a, b); }, {a, b});
        }));
        c.push_back(module("loss", [u](std::uint64_t s) {
            auto a = u({3, 11, 11}, s, 0.0, 1.0), b = u({3, 11, 11}, s + 1, 0.0, 1.0);
            return grad_check([&] { return image_loss(a, b, 1.0, 0.5); }, {a});
        }));
        const std::pair<const char *, DecoderKind> kinds[] = {{"decoder_plus21d", DecoderKind::plus21d},
                                                              {"decoder_conv3d", DecoderKind::conv3d},
                                                              {"decoder_conv2d", DecoderKind::conv2d},
                                                              {"decoder_conv1d", DecoderKind::conv1d},
                                                              {"decoder_ray_transformer", DecoderKind::ray_transformer},
                                                              {"decoder_mlp", DecoderKind::mlp}};
        for (const auto &[name, kind] : kinds) {
            const DecoderKind k = kind;
            c.push_back(module(name, [k](std::uint64_t s) { return check_decoder(k, s); }));
        }
        c.push_back(module("fine_unet", [u](std::uint64_t s) {
            FineConfig fc;
            fc.channels = 2;
            fc.c1 = 2;
            fc.c2 = 2;
            ParameterSet<double> ps;
            std::mt19937_64 rng(s);
            FineUNet<double> net(ParamBuilder<double>(ps, rng, "unet.", "decoder"), fc, Activation::silu);
            auto vol = u({2, 4, 4, 4}, s + 1);
            auto inputs = tensors_of(ps);
            inputs.push_back(vol);
            return grad_check(
                [&] {
                    auto f = net(vol);
                    return add(random_projection(f.color, s + 2), random_projection(f.density, s + 3));
                },
                inputs);
        }));
        c.push_back(module("encoder", [u](std::uint64_t s) {
            ParameterSet<double> ps;
            std::mt19937_64 rng(s);
            Encoder<double> enc(ParamBuilder<double>(ps, rng, "enc.", "encoder"), tiny_encoder());
            std::vector<T64> imgs{u({3, 16, 16}, s + 1, 0.0, 1.0), u({3, 16, 16}, s + 2, 0.0, 1.0)};
            auto inputs = tensors_of(ps);
            return grad_check(
                [&] {
                    const auto pyr = enc(imgs);
                    T64 acc = Tensor<double>::scalar(0.0);
                    for (std::size_t k = 0; k < pyr.size(); ++k) {
                        acc = add(acc, random_projection(pyr[k].f2, s + 10 * k + 3));
                        acc = add(acc, random_projection(pyr[k].f4, s + 10 * k + 4));
                        acc = add(acc, random_projection(pyr[k].t8, s + 10 * k + 5));
                    }
                    return acc;
                },
                inputs);
        }));
        c.push_back(module("volume_builder", [](std::uint64_t s) { return check_volume(s); }));
        return c;
    }();
    return cases;
}

std::vector<GradResult> run_gradcheck_suite(const std::string &only, std::uint64_t seed) {
    std::vector<GradResult> out;
    for (const auto &c : gradcheck_suite()) {
        if (!only.empty() && c.name != only) continue;
        GradResult r{c.name, 0, c.tolerance(), false};
        try {
            r.max_rel_error = c.run(seed);
            r.pass = r.max_rel_error < r.tolerance;
        } catch (const NumericalError &) {
            r.max_rel_error = std::nan("");
        }
        out.push_back(r);
    }
    if (!only.empty() && out.empty()) throw ContractError("gradcheck: unknown op '" + only + "'");
    return out;
}

} // namespace frf
