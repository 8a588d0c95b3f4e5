// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace frf {

namespace {

constexpr double kOutside = -1e9; // a coordinate every sampler rejects

Vec3 safe_unit(const Vec3 &v) {
    const double n = norm(v);
    return n > 0 ? (1.0 / n) * v : Vec3{0, 0, 0};
}

template <typename T>
Tensor<T> mask_to_logits(const std::vector<std::uint8_t> &valid, Shape shape) {
    std::vector<T> v(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) v[i] = valid[i] ? T(0) : -std::numeric_limits<T>::infinity();
    return Tensor<T>::from(std::move(shape), std::move(v));
}

} // namespace

SampleGrid grid_from_rays(const RayBundle &rays) {
    SampleGrid g;
    g.D = rays.num_depths();
    g.h = rays.h;
    g.w = rays.w;
    g.eye = rays.origin;
    g.points.resize(static_cast<std::size_t>(g.num_cells()));
    for (std::int64_t r = 0; r < g.num_rays(); ++r)
        for (int d = 0; d < g.D; ++d) g.points[static_cast<std::size_t>(r * g.D + d)] = rays.point(static_cast<int>(r), d);
    return g;
}

SampleGrid grid_from_depths(const RayBundle &rays, const std::vector<double> &depths, int D) {
    SampleGrid g;
    g.D = D;
    g.h = rays.h;
    g.w = rays.w;
    g.eye = rays.origin;
    if (static_cast<std::int64_t>(depths.size()) != g.num_cells()) {
        throw DimensionError("grid_from_depths: expected " + std::to_string(g.num_cells()) + " depths, got " +
                             std::to_string(depths.size()));
    }
    g.points.resize(depths.size());
    for (std::int64_t r = 0; r < g.num_rays(); ++r)
        for (int d = 0; d < D; ++d) {
            const std::size_t i = static_cast<std::size_t>(r * D + d);
            g.points[i] = rays.origin + depths[i] * rays.dirs[static_cast<std::size_t>(r)];
        }
    return g;
}

template <typename T>
SampleResult<T> sample_color_window(const Tensor<T> &image, const std::vector<std::pair<double, double>> &centers, int win) {
    if (win < 1 || win % 2 == 0) throw ContractError("sample_color_window: window must be odd, got " + std::to_string(win));
    if (image.rank() != 3) throw DimensionError("sample_color_window: expected [C x H x W], got " + shape_str(image.shape()));
    const double W = static_cast<double>(image.dim(2)), H = static_cast<double>(image.dim(1));
    const int r = win / 2;
    const auto N = static_cast<std::int64_t>(centers.size());
    const std::int64_t taps = static_cast<std::int64_t>(win) * win;
    std::vector<T> coords(static_cast<std::size_t>(N * taps * 2));
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(N));
    for (std::int64_t n = 0; n < N; ++n) {
        const double x = centers[static_cast<std::size_t>(n)].first - 0.5;
        const double y = centers[static_cast<std::size_t>(n)].second - 0.5;
        const bool ok = x >= 0 && x <= W - 1 && y >= 0 && y <= H - 1;
        valid[static_cast<std::size_t>(n)] = ok;
        T *c = coords.data() + n * taps * 2;
        for (int a = -r; a <= r; ++a)
            for (int b = -r; b <= r; ++b, c += 2) {
                c[0] = static_cast<T>(ok ? x + b : kOutside);
                c[1] = static_cast<T>(ok ? y + a : kOutside);
            }
    }
    auto s = grid_sample_bilinear(image, Tensor<T>::from({N * taps, 2}, std::move(coords)));
    SampleResult<T> out;
    out.values = reshape(s.values, {N, taps * image.dim(0)});
    out.valid = std::move(valid);
    return out;
}

std::vector<std::pair<int, int>> view_pairs(int K) {
    std::vector<std::pair<int, int>> p;
    for (int i = 0; i < K; ++i)
        for (int j = i + 1; j < K; ++j) p.emplace_back(i, j);
    return p;
}

template <typename T>
Tensor<T> pairwise_group_cosine(const Tensor<T> &feats, int groups, const std::vector<std::uint8_t> &valid) {
    if (feats.rank() != 3) throw DimensionError("pairwise_group_cosine: expected [K x N x M], got " + shape_str(feats.shape()));
    const std::int64_t K = feats.dim(0), N = feats.dim(1), M = feats.dim(2);
    if (K < 2) throw ContractError("pairwise_group_cosine: need K >= 2 views");
    if (groups < 1 || M % groups != 0) {
        throw ContractError("pairwise_group_cosine: " + std::to_string(groups) + " groups do not divide " + std::to_string(M) + " channels");
    }
    if (static_cast<std::int64_t>(valid.size()) != K * N) throw DimensionError("pairwise_group_cosine: validity size mismatch");
    const std::int64_t G = groups, Mg = M / groups;
    auto x = l2_normalize(reshape(feats, {K, N * G, Mg}), 2);
    x = permute(x, {1, 0, 2}); // [N*G x K x Mg]
    auto gram = reshape(bmm(x, x, true), {N * G, K * K});
    const auto pairs = view_pairs(static_cast<int>(K));
    std::vector<std::int64_t> idx;
    for (auto [i, j] : pairs) idx.push_back(i * K + j);
    const auto P = static_cast<std::int64_t>(pairs.size());
    auto s = reshape(index_select(gram, 1, idx), {N, G, P});
    std::vector<T> mask(static_cast<std::size_t>(N * P));
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t p = 0; p < P; ++p) {
            const auto [i, j] = pairs[static_cast<std::size_t>(p)];
            mask[static_cast<std::size_t>(n * P + p)] = valid[static_cast<std::size_t>(i * N + n)] && valid[static_cast<std::size_t>(j * N + n)] ? T(1) : T(0);
        }
    return mul(s, Tensor<T>::from({N, 1, P}, std::move(mask)));
}

template <typename T>
Tensor<T> visibility_weights(const Tensor<T> &cos, const Tensor<T> &a, const Tensor<T> &b,
                             const std::vector<std::uint8_t> &pair_mask) {
    if (cos.rank() != 4) throw DimensionError("visibility_weights: expected [R x D x G x P], got " + shape_str(cos.shape()));
    const std::int64_t R = cos.dim(0), D = cos.dim(1), P = cos.dim(3);
    if (D < 2) throw ContractError("visibility_weights: need D >= 2");
    auto score = mean(cos, 2);                       // [R x D x P]
    auto logp = log_softmax(score, 1);               // over depth
    auto H = neg(sum(mul(exp(logp), logp), 1));      // [R x P]
    auto logits = add(mul(neg(H), a), b);
    logits = add(logits, mask_to_logits<T>(pair_mask, {R, P}));
    return softmax(logits, 1, true);
}

template <typename T>
VolumeBuilder<T>::VolumeBuilder(ParamBuilder<T> pb, const VolumeConfig &cfg, int feature_width)
    : cfg_(cfg), feature_width_(feature_width) {
    cfg.validate(feature_width);
    agg1_ = Linear<T>(pb.scope("agg.fc1"), 2 * feature_width + 4, cfg.agg_hidden);
    agg2_ = Linear<T>(pb.scope("agg.fc2"), cfg.agg_hidden, 1);
    vis_a_ = pb.constant("vis.a", {1}, T(1));
    vis_b_ = pb.constant("vis.b", {1}, T(0));
    proj_ = Linear<T>(pb.scope("proj"), cfg.element_width(feature_width), cfg.channels);
}

template <typename T>
Tensor<T> VolumeBuilder<T>::aggregation_weights(const Tensor<T> &feats, const Tensor<T> &dir_feats,
                                                const std::vector<std::uint8_t> &valid) const {
    const std::int64_t K = feats.dim(0), N = feats.dim(1), M = feats.dim(2);
    std::vector<T> inv_count(static_cast<std::size_t>(N), T(0));
    for (std::int64_t n = 0; n < N; ++n) {
        int c = 0;
        for (std::int64_t k = 0; k < K; ++k) c += valid[static_cast<std::size_t>(k * N + n)];
        inv_count[static_cast<std::size_t>(n)] = T(1) / static_cast<T>(std::max(c, 1));
    }
    auto mean_f = mul(canonical_sum(feats, 0), Tensor<T>::from({N, 1}, std::move(inv_count)));
    auto mean_rep = expand(reshape(mean_f, {1, N, M}), {K, N, M});
    auto in = reshape(concat<T>({feats, mean_rep, dir_feats}, 2), {K * N, 2 * M + 4});
    auto logits = reshape(agg2_(activate(agg1_(in), cfg_.act)), {K, N});
    logits = add(logits, mask_to_logits<T>(valid, {K, N}));
    return softmax(transpose2d(logits), 1, true);
}

template <typename T>
Tensor<T> VolumeBuilder<T>::build_chunk(const SourceViews<T> &views, const SampleGrid &grid, std::int64_t ray0,
                                        std::int64_t rays, std::vector<std::uint8_t> &validity) const {
    const int K = views.size();
    const int D = grid.D;
    const std::int64_t n = rays * D;
    const std::int64_t R = grid.num_rays();
    const std::int64_t c0 = ray0 * D;

    std::vector<std::uint8_t> valid(static_cast<std::size_t>(K * n), 0);
    std::vector<Tensor<T>> colors, feats;
    std::vector<T> dirs(static_cast<std::size_t>(K * n * 4), T(0));
    constexpr int kScales[4] = {2, 4, 8, 8};
    for (int k = 0; k < K; ++k) {
        const CameraView &cam = views.cams[static_cast<std::size_t>(k)];
        const auto &pyr = views.pyramids[static_cast<std::size_t>(k)];
        const Tensor<T> *levels[4] = {&pyr.f2, &pyr.f4, &pyr.f8, &pyr.t8};
        const Vec3 src_center = cam.center();
        std::vector<std::pair<double, double>> centers(static_cast<std::size_t>(n));
        std::vector<std::vector<T>> fc(4, std::vector<T>(static_cast<std::size_t>(n * 2)));
        for (std::int64_t i = 0; i < n; ++i) {
            const Vec3 &p = grid.points[static_cast<std::size_t>(c0 + i)];
            const Projection pr = project(p, cam);
            const double x = pr.u - 0.5, y = pr.v - 0.5;
            const bool ok = pr.in_front && x >= 0 && x <= cam.width - 1 && y >= 0 && y <= cam.height - 1;
            valid[static_cast<std::size_t>(k * n + i)] = ok;
            centers[static_cast<std::size_t>(i)] = ok ? std::make_pair(pr.u, pr.v) : std::make_pair(kOutside, kOutside);
            for (int l = 0; l < 4; ++l) {
                const double lw = static_cast<double>(levels[l]->dim(2)), lh = static_cast<double>(levels[l]->dim(1));
                // Clamp so border cells read edge features instead of zeros.
                fc[static_cast<std::size_t>(l)][static_cast<std::size_t>(2 * i)] =
                    static_cast<T>(ok ? std::clamp(pr.u / kScales[l] - 0.5, 0.0, lw - 1) : kOutside);
                fc[static_cast<std::size_t>(l)][static_cast<std::size_t>(2 * i + 1)] =
                    static_cast<T>(ok ? std::clamp(pr.v / kScales[l] - 0.5, 0.0, lh - 1) : kOutside);
            }
            if (ok) {
                const Vec3 dt = safe_unit(grid.eye - p);
                const Vec3 di = safe_unit(src_center - p);
                T *df = dirs.data() + (k * n + i) * 4;
                df[0] = static_cast<T>(dot(dt, di));
                df[1] = static_cast<T>(dt[0] - di[0]);
                df[2] = static_cast<T>(dt[1] - di[1]);
                df[3] = static_cast<T>(dt[2] - di[2]);
            }
        }
        if (cfg_.use_color) {
            auto cw = sample_color_window(views.images[static_cast<std::size_t>(k)], centers, cfg_.window);
            colors.push_back(reshape(cw.values, {1, n, cw.values.dim(1)}));
        }
        std::vector<Tensor<T>> parts;
        for (int l = 0; l < 4; ++l) {
            parts.push_back(grid_sample_bilinear(*levels[l], Tensor<T>::from({n, 2}, fc[static_cast<std::size_t>(l)])).values);
        }
        auto f = concat(parts, 1);
        if (f.dim(1) != feature_width_) {
            throw DimensionError("volume: pyramid feature width " + std::to_string(f.dim(1)) + " != configured " +
                                 std::to_string(feature_width_));
        }
        feats.push_back(reshape(f, {1, n, f.dim(1)}));
    }
    for (int k = 0; k < K; ++k)
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t r = ray0 + i / D, d = i % D;
            validity[static_cast<std::size_t>((k * D + d) * R + r)] = valid[static_cast<std::size_t>(k * n + i)];
        }

    auto F = K == 1 ? feats[0] : concat(feats, 0); // [K x n x M]
    auto w = aggregation_weights(F, Tensor<T>::from({K, n, 4}, std::move(dirs)), valid);
    auto wk = reshape(transpose2d(w), {K, n, 1});

    std::vector<Tensor<T>> elements;
    if (cfg_.use_color) {
        auto C = K == 1 ? colors[0] : concat(colors, 0);
        elements.push_back(canonical_sum(mul(C, wk), 0));
    }
    if (cfg_.use_feature) elements.push_back(canonical_sum(mul(F, wk), 0));
    if (cfg_.use_cosine) {
        if (K < 2) throw ContractError("volume: the cosine element needs at least 2 views");
        const int G = cfg_.groups;
        auto cos = pairwise_group_cosine(F, G, valid); // [n x G x P]
        const std::int64_t P = cos.dim(2);
        const auto pairs = view_pairs(K);
        std::vector<std::uint8_t> pair_mask(static_cast<std::size_t>(rays * P), 0);
        for (std::int64_t r = 0; r < rays; ++r)
            for (std::int64_t p = 0; p < P; ++p) {
                const auto [a, b] = pairs[static_cast<std::size_t>(p)];
                for (int d = 0; d < D; ++d) {
                    const std::int64_t i = r * D + d;
                    if (valid[static_cast<std::size_t>(a * n + i)] && valid[static_cast<std::size_t>(b * n + i)]) {
                        pair_mask[static_cast<std::size_t>(r * P + p)] = 1;
                        break;
                    }
                }
            }
        auto cos4 = reshape(cos, {rays, D, G, P});
        auto wp = visibility_weights(cos4, vis_a_, vis_b_, pair_mask);
        auto s_hat = canonical_sum(mul(cos4, reshape(wp, {rays, 1, 1, P})), 3);
        elements.push_back(reshape(s_hat, {n, G}));
    }
    auto z = proj_(elements.size() == 1 ? elements[0] : concat(elements, 1));
    std::vector<T> cell_mask(static_cast<std::size_t>(n), T(0));
    for (std::int64_t i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k)
            if (valid[static_cast<std::size_t>(k * n + i)]) cell_mask[static_cast<std::size_t>(i)] = T(1);
    return mul(z, Tensor<T>::from({n, 1}, std::move(cell_mask)));
}

template <typename T>
FrustumVolume<T> VolumeBuilder<T>::build(const SourceViews<T> &views, const SampleGrid &grid) const {
    const int K = views.size();
    if (K < 1) throw ContractError("volume: need at least one view");
    if (cfg_.use_cosine && K < 2) throw ContractError("volume: the cosine element needs at least 2 views");
    if (static_cast<int>(views.pyramids.size()) != K || static_cast<int>(views.images.size()) != K) {
        throw DimensionError("volume: views, images and pyramids differ in count");
    }
    FrustumVolume<T> vol;
    vol.K = K;
    vol.D = grid.D;
    vol.h = grid.h;
    vol.w = grid.w;
    const std::int64_t R = grid.num_rays();
    vol.validity.assign(static_cast<std::size_t>(K * grid.D * R), 0);
    const std::int64_t rays_per_chunk = std::max<std::int64_t>(1, cfg_.cells_per_chunk / grid.D);
    std::vector<Tensor<T>> chunks;
    for (std::int64_t r0 = 0; r0 < R; r0 += rays_per_chunk) {
        chunks.push_back(build_chunk(views, grid, r0, std::min(rays_per_chunk, R - r0), vol.validity));
    }
    auto z = chunks.size() == 1 ? chunks[0] : concat(chunks, 0); // [R*D x C]
    const std::int64_t C = z.dim(1);
    vol.z = reshape(permute(reshape(z, {R, grid.D, C}), {2, 1, 0}), {C, grid.D, grid.h, grid.w});
    return vol;
}

template SampleResult<float> sample_color_window<float>(const Tensor<float> &, const std::vector<std::pair<double, double>> &, int);
template SampleResult<double> sample_color_window<double>(const Tensor<double> &, const std::vector<std::pair<double, double>> &, int);
template Tensor<float> pairwise_group_cosine<float>(const Tensor<float> &, int, const std::vector<std::uint8_t> &);
template Tensor<double> pairwise_group_cosine<double>(const Tensor<double> &, int, const std::vector<std::uint8_t> &);
template Tensor<float> visibility_weights<float>(const Tensor<float> &, const Tensor<float> &, const Tensor<float> &, const std::vector<std::uint8_t> &);
template Tensor<double> visibility_weights<double>(const Tensor<double> &, const Tensor<double> &, const Tensor<double> &, const std::vector<std::uint8_t> &);
template class VolumeBuilder<float>;
template class VolumeBuilder<double>;

} // namespace frf
