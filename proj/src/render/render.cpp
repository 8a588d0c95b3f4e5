// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/render.hpp"

#include <algorithm>
#include <cmath>

namespace frf {

RaySamples samples_from_rays(const RayBundle &rays) {
    RaySamples s;
    s.N = rays.h * rays.w;
    s.D = rays.num_depths();
    s.t.resize(static_cast<std::size_t>(s.N) * s.D);
    for (int r = 0; r < s.N; ++r)
        std::copy(rays.depths.begin(), rays.depths.end(), s.t.begin() + static_cast<std::ptrdiff_t>(r) * s.D);
    s.deltas = rays.deltas;
    return s;
}

RaySamples samples_from_depths(const RayBundle &rays, const std::vector<double> &depths, int D) {
    RaySamples s;
    s.N = rays.h * rays.w;
    s.D = D;
    if (depths.size() != static_cast<std::size_t>(s.N) * D) throw DimensionError("samples_from_depths: size mismatch");
    s.t = depths;
    s.deltas.resize(depths.size());
    for (int r = 0; r < s.N; ++r) {
        const double len = norm(rays.dirs[static_cast<std::size_t>(r)]);
        const double *t = depths.data() + static_cast<std::size_t>(r) * D;
        double *dl = s.deltas.data() + static_cast<std::size_t>(r) * D;
        for (int d = 0; d + 1 < D; ++d) dl[d] = (t[d + 1] - t[d]) * len;
        dl[D - 1] = D >= 2 ? dl[D - 2] : 0.0;
    }
    return s;
}

template <typename T>
RenderOutput<T> composite(const Tensor<T> &density, const Tensor<T> &color, const RaySamples &samples, int H, int W) {
    const std::int64_t N = static_cast<std::int64_t>(H) * W, D = samples.D;
    if (samples.N != N) throw DimensionError("composite: samples cover " + std::to_string(samples.N) + " rays, image has " + std::to_string(N));
    if (density.numel() != D * N || color.numel() != 3 * D * N) {
        throw DimensionError("composite: density " + shape_str(density.shape()) + " / color " + shape_str(color.shape()) +
                             " do not match D=" + std::to_string(D) + " and " + std::to_string(H) + "x" + std::to_string(W));
    }
    const T *sig = density.ptr();
    const T *col = color.ptr();
    for (std::int64_t i = 0; i < D * N; ++i) {
        if (sig[i] < T(0)) throw ContractError("composite: negative density " + std::to_string(static_cast<double>(sig[i])));
    }
    Buffer<T> rgb(static_cast<std::size_t>(3 * N), T(0));
    Buffer<T> depth(static_cast<std::size_t>(N), T(0));
    Buffer<T> opacity(static_cast<std::size_t>(N), T(0));
    Buffer<T> weights(static_cast<std::size_t>(D * N), T(0));
    std::vector<T> trans_after(static_cast<std::size_t>(D * N)); // T_{d+1}
    for (std::int64_t r = 0; r < N; ++r) {
        T trans = T(1), acc = T(0), tw = T(0);
        T c3[3] = {T(0), T(0), T(0)};
        for (std::int64_t d = 0; d < D; ++d) {
            const std::size_t i = static_cast<std::size_t>(d * N + r);
            const T delta = static_cast<T>(samples.deltas[static_cast<std::size_t>(r * D + d)]);
            const T keep = std::exp(-sig[i] * delta);
            const T w = trans * (T(1) - keep);
            trans *= keep;
            trans_after[i] = trans;
            weights[i] = w;
            acc += w;
            tw += w * static_cast<T>(samples.t[static_cast<std::size_t>(r * D + d)]);
            for (int c = 0; c < 3; ++c) c3[c] += w * col[static_cast<std::size_t>(c) * D * N + i];
        }
        for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(c * N + r)] = c3[c];
        opacity[static_cast<std::size_t>(r)] = acc;
        depth[static_cast<std::size_t>(r)] = tw / std::max(acc, T(1e-8));
    }
    RenderOutput<T> out;
    out.H = H;
    out.W = W;
    out.D = static_cast<int>(D);
    out.depth = Tensor<T>::from_buffer({H, W}, std::move(depth));
    out.opacity = Tensor<T>::from_buffer({H, W}, std::move(opacity));
    std::vector<T> wcopy(weights.begin(), weights.end());
    out.weights = Tensor<T>::from_buffer({D, H, W}, std::move(weights));
    const bool record = detail::needs_graph<T>({&density, &color});
    std::vector<T> deltas(samples.deltas.begin(), samples.deltas.end());
    out.rgb = detail::make_result<T>(
        {3, H, W}, std::move(rgb), record, {density, color},
        [N, D, wcopy = std::move(wcopy), trans_after = std::move(trans_after), deltas = std::move(deltas)](TensorImpl<T> &self) {
            auto &S = self.parents[0];
            auto &C = self.parents[1];
            const T *g = self.grad->data();
            const T *col = C->data->data();
            T *gs = S->requires_grad ? detail::grad_of(S).data() : nullptr;
            T *gc = C->requires_grad ? detail::grad_of(C).data() : nullptr;
            for (std::int64_t r = 0; r < N; ++r) {
                const T g3[3] = {g[r], g[N + r], g[2 * N + r]};
                T suffix[3] = {T(0), T(0), T(0)}; // sum_{e>d} w_e c_e
                for (std::int64_t d = D - 1; d >= 0; --d) {
                    const std::size_t i = static_cast<std::size_t>(d * N + r);
                    const T w = wcopy[i];
                    if (gs) {
                        T acc = T(0);
                        for (int c = 0; c < 3; ++c) acc += g3[c] * (trans_after[i] * col[static_cast<std::size_t>(c) * D * N + i] - suffix[c]);
                        gs[i] += static_cast<T>(deltas[static_cast<std::size_t>(r * D + d)]) * acc;
                    }
                    for (int c = 0; c < 3; ++c) {
                        const std::size_t ci = static_cast<std::size_t>(c) * D * N + i;
                        if (gc) gc[ci] += g3[c] * w;
                        suffix[c] += w * col[ci];
                    }
                }
            }
        });
    return out;
}

std::vector<double> bin_edges(const std::vector<double> &c) {
    const std::size_t n = c.size();
    if (n < 2) throw ContractError("bin_edges: need at least 2 planes");
    std::vector<double> e(n + 1);
    e[0] = c[0] - 0.5 * (c[1] - c[0]);
    for (std::size_t i = 1; i < n; ++i) e[i] = 0.5 * (c[i - 1] + c[i]);
    e[n] = c[n - 1] + 0.5 * (c[n - 1] - c[n - 2]);
    return e;
}

std::vector<double> pdf_resample(const std::vector<double> &weights, const std::vector<double> &depths, int n,
                                 std::mt19937_64 *rng) {
    const std::size_t D = depths.size();
    if (weights.size() != D) throw DimensionError("pdf_resample: weights and depths differ in length");
    if (n < 1) throw ContractError("pdf_resample: need at least one sample");
    const auto edges = bin_edges(depths);
    std::vector<double> cdf(D + 1, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
        if (weights[i] < 0) throw ContractError("pdf_resample: negative weight");
        total += weights[i] + 1e-5;
    }
    for (std::size_t i = 0; i < D; ++i) cdf[i + 1] = cdf[i] + (weights[i] + 1e-5) / total;
    cdf[D] = 1.0;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> out(static_cast<std::size_t>(n));
    std::size_t b = 0;
    for (int k = 0; k < n; ++k) {
        const double xi = rng ? uni(*rng) : 0.5;
        const double u = (k + xi) / n;
        while (b + 1 < D && cdf[b + 1] <= u) ++b;
        const double mass = cdf[b + 1] - cdf[b];
        const double f = mass > 0 ? std::clamp((u - cdf[b]) / mass, 0.0, 1.0) : 0.5;
        out[static_cast<std::size_t>(k)] = edges[b] + f * (edges[b + 1] - edges[b]);
    }
    return out;
}

template <typename T>
DepthNormal render_depth_normal(const RenderOutput<T> &out, const CameraView &target) {
    DepthNormal dn;
    dn.H = out.H;
    dn.W = out.W;
    const int H = out.H, W = out.W;
    dn.depth.resize(static_cast<std::size_t>(H) * W);
    dn.normal.assign(static_cast<std::size_t>(H) * W, Vec3{0, 0, 0});
    dn.valid.assign(static_cast<std::size_t>(H) * W, 0);
    std::vector<Vec3> pts(static_cast<std::size_t>(H) * W);
    std::vector<std::uint8_t> ok(static_cast<std::size_t>(H) * W, 0);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const std::size_t p = static_cast<std::size_t>(i * W + j);
            dn.depth[p] = static_cast<double>(out.depth.ptr()[p]);
            ok[p] = out.opacity.ptr()[p] >= T(0.1) && dn.depth[p] > 0;
            if (ok[p]) pts[p] = unproject(j + 0.5, i + 0.5, dn.depth[p], target);
        }
    const Vec3 eye = target.center();
    auto diff = [&](int i0, int j0, int i1, int j1, Vec3 &d) {
        const std::size_t a = static_cast<std::size_t>(i0 * W + j0), b = static_cast<std::size_t>(i1 * W + j1);
        if (!ok[a] || !ok[b]) return false;
        d = pts[b] - pts[a];
        return true;
    };
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const std::size_t p = static_cast<std::size_t>(i * W + j);
            if (!ok[p]) continue;
            Vec3 dx, dy;
            // Central differences, one-sided at borders or next to invalid pixels.
            const bool hx = (j > 0 && j + 1 < W && diff(i, j - 1, i, j + 1, dx)) || (j + 1 < W && diff(i, j, i, j + 1, dx)) ||
                            (j > 0 && diff(i, j - 1, i, j, dx));
            const bool hy = (i > 0 && i + 1 < H && diff(i - 1, j, i + 1, j, dy)) || (i + 1 < H && diff(i, j, i + 1, j, dy)) ||
                            (i > 0 && diff(i - 1, j, i, j, dy));
            if (!hx || !hy) continue;
            Vec3 n = cross(dx, dy);
            const double len = norm(n);
            if (!(len > 0)) continue;
            n = (1.0 / len) * n;
            if (dot(n, eye - pts[p]) < 0) n = -1.0 * n;
            dn.normal[p] = n;
            dn.valid[p] = 1;
        }
    return dn;
}

std::vector<Patch> plan_patches(int h, int w, int P, int overlap) {
    if (P < 1) throw ContractError("plan_patches: P must be >= 1");
    if (overlap < 0) throw ContractError("plan_patches: overlap must be >= 0");
    if (P > h || P > w) throw ContractError("plan_patches: " + std::to_string(P) + "x" + std::to_string(P) + " patches on a " +
                                            std::to_string(h) + "x" + std::to_string(w) + " grid");
    std::vector<Patch> out;
    for (int a = 0; a < P; ++a)
        for (int b = 0; b < P; ++b) {
            Patch p;
            p.cy0 = a * h / P;
            p.ch = (a + 1) * h / P - p.cy0;
            p.cx0 = b * w / P;
            p.cw = (b + 1) * w / P - p.cx0;
            p.y0 = std::max(0, p.cy0 - overlap);
            p.x0 = std::max(0, p.cx0 - overlap);
            p.ph = std::min(h, p.cy0 + p.ch + overlap) - p.y0;
            p.pw = std::min(w, p.cx0 + p.cw + overlap) - p.x0;
            out.push_back(p);
        }
    return out;
}

template RenderOutput<float> composite<float>(const Tensor<float> &, const Tensor<float> &, const RaySamples &, int, int);
template RenderOutput<double> composite<double>(const Tensor<double> &, const Tensor<double> &, const RaySamples &, int, int);
template DepthNormal render_depth_normal<float>(const RenderOutput<float> &, const CameraView &);
template DepthNormal render_depth_normal<double>(const RenderOutput<double> &, const CameraView &);

} // namespace frf
