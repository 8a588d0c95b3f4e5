// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/ops.hpp"

#include <cmath>

namespace frf {

namespace {

// Channel-last copy [C x S] -> [S x C] so each sample gathers contiguous rows.
template <typename T>
std::vector<T> to_channel_last(const T *src, std::int64_t C, std::int64_t S) {
    std::vector<T> out(static_cast<std::size_t>(C * S));
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t s = 0; s < S; ++s) out[static_cast<std::size_t>(s * C + c)] = src[c * S + s];
    return out;
}

struct Tap {
    std::int64_t offset; // spatial index
    double weight;
};

// Corner taps along one axis; `len` is the axis size. Returns false when out of range.
inline bool axis_taps(double x, std::int64_t len, std::int64_t &i0, std::int64_t &i1, double &f) {
    if (!(x >= 0.0) || !(x <= static_cast<double>(len - 1))) return false;
    const double fl = std::floor(x);
    i0 = static_cast<std::int64_t>(fl);
    if (i0 > len - 1) i0 = len - 1;
    i1 = std::min<std::int64_t>(i0 + 1, len - 1);
    f = x - static_cast<double>(i0);
    return true;
}

template <typename T>
SampleResult<T> gather_taps(const Tensor<T> &field, std::int64_t C, std::int64_t S, std::int64_t N, int taps_per,
                            std::vector<Tap> taps, std::vector<std::uint8_t> valid) {
    const std::vector<T> cl = to_channel_last(field.ptr(), C, S);
    Buffer<T> out(static_cast<std::size_t>(N * C), T(0));
    for (std::int64_t n = 0; n < N; ++n) {
        if (!valid[static_cast<std::size_t>(n)]) continue;
        T *dst = out.data() + n * C;
        for (int t = 0; t < taps_per; ++t) {
            const Tap &tp = taps[static_cast<std::size_t>(n * taps_per + t)];
            const T w = static_cast<T>(tp.weight);
            const T *src = cl.data() + tp.offset * C;
            for (std::int64_t c = 0; c < C; ++c) dst[c] += w * src[c];
        }
    }
    const bool record = detail::needs_graph<T>({&field});
    SampleResult<T> res;
    res.values = detail::make_result<T>(
        {N, C}, std::move(out), record, {field},
        [C, S, N, taps_per, taps = std::move(taps), valid](TensorImpl<T> &self) {
            auto &F = self.parents[0];
            if (!F->requires_grad) return;
            std::vector<T> gcl(static_cast<std::size_t>(C * S), T(0));
            const T *g = self.grad->data();
            for (std::int64_t n = 0; n < N; ++n) {
                if (!valid[static_cast<std::size_t>(n)]) continue;
                const T *src = g + n * C;
                for (int t = 0; t < taps_per; ++t) {
                    const Tap &tp = taps[static_cast<std::size_t>(n * taps_per + t)];
                    const T w = static_cast<T>(tp.weight);
                    T *dst = gcl.data() + tp.offset * C;
                    for (std::int64_t c = 0; c < C; ++c) dst[c] += w * src[c];
                }
            }
            T *gf = detail::grad_of(F).data();
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t s = 0; s < S; ++s) gf[c * S + s] += gcl[static_cast<std::size_t>(s * C + c)];
        });
    res.valid = std::move(valid);
    return res;
}

} // namespace

template <typename T>
SampleResult<T> grid_sample_bilinear(const Tensor<T> &feature_map, const Tensor<T> &coords) {
    if (feature_map.rank() != 3) throw DimensionError("grid_sample_bilinear: expected [C x H x W], got " + shape_str(feature_map.shape()));
    if (coords.rank() != 2 || coords.dim(1) != 2) throw DimensionError("grid_sample_bilinear: expected coords [N x 2], got " + shape_str(coords.shape()));
    const std::int64_t C = feature_map.dim(0), H = feature_map.dim(1), W = feature_map.dim(2);
    const std::int64_t N = coords.dim(0);
    std::vector<Tap> taps(static_cast<std::size_t>(N * 4), Tap{0, 0.0});
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(N), 0);
    const T *pc = coords.ptr();
    for (std::int64_t n = 0; n < N; ++n) {
        std::int64_t x0, x1, y0, y1;
        double fx, fy;
        if (!axis_taps(static_cast<double>(pc[2 * n]), W, x0, x1, fx)) continue;
        if (!axis_taps(static_cast<double>(pc[2 * n + 1]), H, y0, y1, fy)) continue;
        valid[static_cast<std::size_t>(n)] = 1;
        Tap *t = taps.data() + n * 4;
        t[0] = {y0 * W + x0, (1 - fx) * (1 - fy)};
        t[1] = {y0 * W + x1, fx * (1 - fy)};
        t[2] = {y1 * W + x0, (1 - fx) * fy};
        t[3] = {y1 * W + x1, fx * fy};
    }
    return gather_taps(feature_map, C, H * W, N, 4, std::move(taps), std::move(valid));
}

template <typename T>
SampleResult<T> grid_sample_trilinear(const Tensor<T> &field, const Tensor<T> &coords) {
    if (field.rank() != 4) throw DimensionError("grid_sample_trilinear: expected [C x D x H x W], got " + shape_str(field.shape()));
    if (coords.rank() != 2 || coords.dim(1) != 3) throw DimensionError("grid_sample_trilinear: expected coords [N x 3], got " + shape_str(coords.shape()));
    const std::int64_t C = field.dim(0), D = field.dim(1), H = field.dim(2), W = field.dim(3);
    const std::int64_t N = coords.dim(0);
    std::vector<Tap> taps(static_cast<std::size_t>(N * 8), Tap{0, 0.0});
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(N), 0);
    const T *pc = coords.ptr();
    for (std::int64_t n = 0; n < N; ++n) {
        std::int64_t x[2], y[2], z[2];
        double fx, fy, fz;
        if (!axis_taps(static_cast<double>(pc[3 * n]), W, x[0], x[1], fx)) continue;
        if (!axis_taps(static_cast<double>(pc[3 * n + 1]), H, y[0], y[1], fy)) continue;
        if (!axis_taps(static_cast<double>(pc[3 * n + 2]), D, z[0], z[1], fz)) continue;
        valid[static_cast<std::size_t>(n)] = 1;
        Tap *t = taps.data() + n * 8;
        for (int k = 0; k < 8; ++k) {
            const int a = (k >> 2) & 1, b = (k >> 1) & 1, c = k & 1;
            const double w = (a ? fz : 1 - fz) * (b ? fy : 1 - fy) * (c ? fx : 1 - fx);
            t[k] = {(z[a] * H + y[b]) * W + x[c], w};
        }
    }
    return gather_taps(field, C, D * H * W, N, 8, std::move(taps), std::move(valid));
}

template SampleResult<float> grid_sample_bilinear<float>(const Tensor<float> &, const Tensor<float> &);
template SampleResult<double> grid_sample_bilinear<double>(const Tensor<double> &, const Tensor<double> &);
template SampleResult<float> grid_sample_trilinear<float>(const Tensor<float> &, const Tensor<float> &);
template SampleResult<double> grid_sample_trilinear<double>(const Tensor<double> &, const Tensor<double> &);

} // namespace frf
