// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/ops.hpp"

#include <algorithm>
#include <memory>

namespace frf {

namespace {

struct ConvGeometry {
    int cin = 0, cout = 0;
    Int3 in{}, k{}, out{}, stride{}, pad{};
    std::int64_t in_size() const { return static_cast<std::int64_t>(in[0]) * in[1] * in[2]; }
    std::int64_t out_size() const { return static_cast<std::int64_t>(out[0]) * out[1] * out[2]; }
    std::int64_t kvol() const { return static_cast<std::int64_t>(k[0]) * k[1] * k[2]; }
    bool pointwise() const {
        return k == Int3{1, 1, 1} && stride == Int3{1, 1, 1} && pad == Int3{0, 0, 0};
    }
};

// Calls fn(o0, o1, o2, len, offset) for each run of output positions in
// [p0, p0 + pc) that share (o0, o1); offset is relative to p0.
template <typename F>
void for_each_line(const ConvGeometry &g, std::int64_t p0, std::int64_t pc, F &&fn) {
    std::int64_t q = p0;
    const std::int64_t end = p0 + pc;
    while (q < end) {
        const int o2 = static_cast<int>(q % g.out[2]);
        const std::int64_t r = q / g.out[2];
        const int o1 = static_cast<int>(r % g.out[1]);
        const int o0 = static_cast<int>(r / g.out[1]);
        const int len = static_cast<int>(std::min<std::int64_t>(g.out[2] - o2, end - q));
        fn(o0, o1, o2, len, q - p0);
        q += len;
    }
}

// Range [lo, hi) of t in [0, len) with 0 <= (o2 + t) * stride - pad + c < in.
inline void valid_range(const ConvGeometry &g, int o2, int len, int c, int &lo, int &hi) {
    const int s = g.stride[2], base = o2 * s - g.pad[2] + c;
    lo = base >= 0 ? 0 : (-base + s - 1) / s;
    hi = base >= g.in[2] ? 0 : std::min(len, (g.in[2] - base + s - 1) / s);
    if (hi < lo) hi = lo;
}

// Builds cols[Q x pc] for output positions [p0, p0 + pc).
template <typename T>
void im2col(const ConvGeometry &g, const T *x, std::int64_t p0, std::int64_t pc, T *cols) {
    std::int64_t row = 0;
    const int s2 = g.stride[2];
    for (int ci = 0; ci < g.cin; ++ci) {
        const T *xc = x + ci * g.in_size();
        for (int a = 0; a < g.k[0]; ++a) {
            for (int b = 0; b < g.k[1]; ++b) {
                for (int c = 0; c < g.k[2]; ++c, ++row) {
                    T *dst = cols + row * pc;
                    for_each_line(g, p0, pc, [&](int o0, int o1, int o2, int len, std::int64_t off) {
                        T *d = dst + off;
                        const int i0 = o0 * g.stride[0] - g.pad[0] + a, i1 = o1 * g.stride[1] - g.pad[1] + b;
                        if (i0 < 0 || i0 >= g.in[0] || i1 < 0 || i1 >= g.in[1]) {
                            std::fill(d, d + len, T(0));
                            return;
                        }
                        int lo, hi;
                        valid_range(g, o2, len, c, lo, hi);
                        const T *src = xc + (static_cast<std::int64_t>(i0) * g.in[1] + i1) * g.in[2] + (o2 * s2 - g.pad[2] + c);
                        std::fill(d, d + lo, T(0));
                        if (s2 == 1) {
                            std::copy(src + lo, src + hi, d + lo);
                        } else {
                            for (int t = lo; t < hi; ++t) d[t] = src[static_cast<std::int64_t>(t) * s2];
                        }
                        std::fill(d + hi, d + len, T(0));
                    });
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const ConvGeometry &g, const T *cols, std::int64_t p0, std::int64_t pc, T *gx) {
    std::int64_t row = 0;
    const int s2 = g.stride[2];
    for (int ci = 0; ci < g.cin; ++ci) {
        T *gc = gx + ci * g.in_size();
        for (int a = 0; a < g.k[0]; ++a) {
            for (int b = 0; b < g.k[1]; ++b) {
                for (int c = 0; c < g.k[2]; ++c, ++row) {
                    const T *srow = cols + row * pc;
                    for_each_line(g, p0, pc, [&](int o0, int o1, int o2, int len, std::int64_t off) {
                        const int i0 = o0 * g.stride[0] - g.pad[0] + a, i1 = o1 * g.stride[1] - g.pad[1] + b;
                        if (i0 < 0 || i0 >= g.in[0] || i1 < 0 || i1 >= g.in[1]) return;
                        int lo, hi;
                        valid_range(g, o2, len, c, lo, hi);
                        T *dst = gc + (static_cast<std::int64_t>(i0) * g.in[1] + i1) * g.in[2] + (o2 * s2 - g.pad[2] + c);
                        const T *src = srow + off;
                        for (int t = lo; t < hi; ++t) dst[static_cast<std::int64_t>(t) * s2] += src[t];
                    });
                }
            }
        }
    }
}

std::int64_t chunk_positions(std::int64_t q, std::int64_t total) {
    constexpr std::int64_t kTargetElems = 1 << 20;
    const std::int64_t c = std::max<std::int64_t>(256, kTargetElems / std::max<std::int64_t>(q, 1));
    return std::min(c, total);
}

} // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T> &x, const Tensor<T> &w, const Tensor<T> &bias, Int3 stride, Int3 padding) {
    if (x.rank() != 4 || w.rank() != 5) {
        throw DimensionError("conv3d: expected x[C x D1 x D2 x D3] and w[Co x Ci x k1 x k2 x k3], got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (w.dim(1) != x.dim(0)) {
        throw DimensionError("conv3d: input channels " + std::to_string(x.dim(0)) + " do not match kernel " +
                             shape_str(w.shape()));
    }
    ConvGeometry g;
    g.cin = static_cast<int>(x.dim(0));
    g.cout = static_cast<int>(w.dim(0));
    for (int i = 0; i < 3; ++i) {
        g.in[static_cast<std::size_t>(i)] = static_cast<int>(x.dim(i + 1));
        g.k[static_cast<std::size_t>(i)] = static_cast<int>(w.dim(i + 2));
        g.stride[static_cast<std::size_t>(i)] = stride[static_cast<std::size_t>(i)];
        g.pad[static_cast<std::size_t>(i)] = padding[static_cast<std::size_t>(i)];
        if (stride[static_cast<std::size_t>(i)] < 1) throw ContractError("conv3d: stride must be >= 1");
        if (padding[static_cast<std::size_t>(i)] < 0) throw ContractError("conv3d: padding must be >= 0");
        const int span = g.in[static_cast<std::size_t>(i)] + 2 * g.pad[static_cast<std::size_t>(i)];
        if (g.k[static_cast<std::size_t>(i)] > span) {
            throw DimensionError("conv3d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                                 shape_str(x.shape()) + " on axis " + std::to_string(i + 1));
        }
        g.out[static_cast<std::size_t>(i)] = (span - g.k[static_cast<std::size_t>(i)]) / g.stride[static_cast<std::size_t>(i)] + 1;
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
        throw DimensionError("conv3d: bias shape " + shape_str(bias.shape()) + " for " + std::to_string(g.cout) + " outputs");
    }
    const std::int64_t P = g.out_size();
    const std::int64_t Q = g.cin * g.kvol();
    Buffer<T> out(static_cast<std::size_t>(g.cout * P));
    if (g.pointwise()) {
        gemm::nn(g.cout, static_cast<int>(P), g.cin, w.ptr(), g.cin, x.ptr(), static_cast<int>(P), out.data(),
                 static_cast<int>(P), false);
    } else {
        const std::int64_t chunk = chunk_positions(Q, P);
        auto cols = std::make_unique_for_overwrite<T[]>(static_cast<std::size_t>(Q * chunk));
        for (std::int64_t p0 = 0; p0 < P; p0 += chunk) {
            const std::int64_t pc = std::min(chunk, P - p0);
            im2col(g, x.ptr(), p0, pc, cols.get());
            gemm::nn(g.cout, static_cast<int>(pc), static_cast<int>(Q), w.ptr(), static_cast<int>(Q), cols.get(),
                     static_cast<int>(pc), out.data() + p0, static_cast<int>(P), false);
        }
    }
    if (bias.defined()) {
        const T *b = bias.ptr();
        for (int o = 0; o < g.cout; ++o) {
            T *row = out.data() + o * P;
            for (std::int64_t p = 0; p < P; ++p) row[p] += b[o];
        }
    }
    std::vector<Tensor<T>> parents{x, w};
    if (bias.defined()) parents.push_back(bias);
    const bool record = detail::needs_graph<T>(parents);
    return detail::make_result<T>(
        {g.cout, g.out[0], g.out[1], g.out[2]}, std::move(out), record, parents, [g, P, Q](TensorImpl<T> &self) {
            auto &X = self.parents[0];
            auto &W = self.parents[1];
            const T *gy = self.grad->data();
            if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                T *gb = detail::grad_of(self.parents[2]).data();
                for (int o = 0; o < g.cout; ++o) {
                    const T *row = gy + o * P;
                    T acc = T(0);
                    for (std::int64_t p = 0; p < P; ++p) acc += row[p];
                    gb[o] += acc;
                }
            }
            const T *xv = X->data->data();
            const T *wv = W->data->data();
            T *gw = W->requires_grad ? detail::grad_of(W).data() : nullptr;
            T *gx = X->requires_grad ? detail::grad_of(X).data() : nullptr;
            if (g.pointwise()) {
                if (gw) gemm::nt(g.cout, g.cin, static_cast<int>(P), gy, static_cast<int>(P), xv, static_cast<int>(P), gw, g.cin, true);
                if (gx) gemm::tn(g.cin, static_cast<int>(P), g.cout, wv, g.cin, gy, static_cast<int>(P), gx, static_cast<int>(P), true);
                return;
            }
            const std::int64_t chunk = chunk_positions(Q, P);
            auto cols = std::make_unique_for_overwrite<T[]>(static_cast<std::size_t>(Q * chunk));
            for (std::int64_t p0 = 0; p0 < P; p0 += chunk) {
                const std::int64_t pc = std::min(chunk, P - p0);
                if (gw) {
                    im2col(g, xv, p0, pc, cols.get());
                    gemm::nt(g.cout, static_cast<int>(Q), static_cast<int>(pc), gy + p0, static_cast<int>(P), cols.get(),
                             static_cast<int>(pc), gw, static_cast<int>(Q), true);
                }
                if (gx) {
                    gemm::tn(static_cast<int>(Q), static_cast<int>(pc), g.cout, wv, static_cast<int>(Q), gy + p0,
                             static_cast<int>(P), cols.get(), static_cast<int>(pc), false);
                    col2im_add(g, cols.get(), p0, pc, gx);
                }
            }
        });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T> &x, Int3 f) {
    if (x.rank() != 4) throw DimensionError("upsample_nearest: expected rank 4, got " + shape_str(x.shape()));
    for (int v : f) {
        if (v < 1) throw ContractError("upsample_nearest: factors must be >= 1");
    }
    const std::int64_t C = x.dim(0), A = x.dim(1), B = x.dim(2), D = x.dim(3);
    const std::int64_t OA = A * f[0], OB = B * f[1], OD = D * f[2];
    Buffer<T> out(static_cast<std::size_t>(C * OA * OB * OD));
    const T *px = x.ptr();
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < OA; ++i)
            for (std::int64_t j = 0; j < OB; ++j) {
                const T *src = px + ((c * A + i / f[0]) * B + j / f[1]) * D;
                T *dst = out.data() + ((c * OA + i) * OB + j) * OD;
                for (std::int64_t l = 0; l < OD; ++l) dst[l] = src[l / f[2]];
            }
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>({C, OA, OB, OD}, std::move(out), record, {x}, [=](TensorImpl<T> &self) {
        auto &X = self.parents[0];
        if (!X->requires_grad) return;
        T *gx = detail::grad_of(X).data();
        const T *g = self.grad->data();
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < OA; ++i)
                for (std::int64_t j = 0; j < OB; ++j) {
                    T *dst = gx + ((c * A + i / f[0]) * B + j / f[1]) * D;
                    const T *src = g + ((c * OA + i) * OB + j) * OD;
                    for (std::int64_t l = 0; l < OD; ++l) dst[l / f[2]] += src[l];
                }
    });
}

namespace {

// Index map for depth-to-space: out[o] = in[map[o]].
std::vector<std::int64_t> shuffle_map(std::int64_t C, std::int64_t B, std::int64_t h, std::int64_t w, int r) {
    const std::int64_t oh = h * r, ow = w * r;
    std::vector<std::int64_t> map(static_cast<std::size_t>(C * B * oh * ow));
    std::size_t o = 0;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t x = 0; x < ow; ++x) {
                    const std::int64_t ic = c * r * r + (y % r) * r + (x % r);
                    map[o++] = ((ic * B + b) * h + y / r) * w + x / r;
                }
    return map;
}

template <typename T>
Tensor<T> gather_perm(const Tensor<T> &x, Shape out_shape, std::vector<std::int64_t> map, bool inverse) {
    Buffer<T> out(map.size());
    const T *px = x.ptr();
    if (inverse) {
        for (std::size_t o = 0; o < map.size(); ++o) out[static_cast<std::size_t>(map[o])] = px[o];
    } else {
        for (std::size_t o = 0; o < map.size(); ++o) out[o] = px[map[o]];
    }
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>(std::move(out_shape), std::move(out), record, {x},
                                  [map = std::move(map), inverse](TensorImpl<T> &self) {
                                      auto &X = self.parents[0];
                                      if (!X->requires_grad) return;
                                      T *gx = detail::grad_of(X).data();
                                      const T *g = self.grad->data();
                                      if (inverse) {
                                          for (std::size_t o = 0; o < map.size(); ++o) gx[o] += g[map[o]];
                                      } else {
                                          for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
                                      }
                                  });
}

} // namespace

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T> &x, int r) {
    if (r < 1) throw ContractError("pixel_shuffle: factor must be >= 1");
    if (x.rank() != 3 && x.rank() != 4) throw DimensionError("pixel_shuffle: expected rank 3 or 4, got " + shape_str(x.shape()));
    const bool batched = x.rank() == 4;
    const std::int64_t ch = x.dim(0);
    if (ch % (static_cast<std::int64_t>(r) * r) != 0) {
        throw DimensionError("pixel_shuffle: channel count " + std::to_string(ch) + " not divisible by r^2 = " +
                             std::to_string(r * r));
    }
    const std::int64_t C = ch / (r * r);
    const std::int64_t B = batched ? x.dim(1) : 1;
    const std::int64_t h = x.dim(-2), w = x.dim(-1);
    Shape out_shape = batched ? Shape{C, B, h * r, w * r} : Shape{C, h * r, w * r};
    return gather_perm(x, std::move(out_shape), shuffle_map(C, B, h, w, r), false);
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T> &x, int r) {
    if (r < 1) throw ContractError("pixel_unshuffle: factor must be >= 1");
    if (x.rank() != 3 && x.rank() != 4) throw DimensionError("pixel_unshuffle: expected rank 3 or 4, got " + shape_str(x.shape()));
    const bool batched = x.rank() == 4;
    const std::int64_t C = x.dim(0);
    const std::int64_t B = batched ? x.dim(1) : 1;
    const std::int64_t oh = x.dim(-2), ow = x.dim(-1);
    if (oh % r != 0 || ow % r != 0) {
        throw DimensionError("pixel_unshuffle: spatial size " + shape_str(x.shape()) + " not divisible by " + std::to_string(r));
    }
    const std::int64_t h = oh / r, w = ow / r;
    Shape out_shape = batched ? Shape{C * r * r, B, h, w} : Shape{C * r * r, h, w};
    return gather_perm(x, std::move(out_shape), shuffle_map(C, B, h, w, r), true);
}

#define FRF_INSTANTIATE_CONV(T)                                                                                \
    template Tensor<T> conv3d<T>(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, Int3, Int3);         \
    template Tensor<T> upsample_nearest<T>(const Tensor<T> &, Int3);                                           \
    template Tensor<T> pixel_shuffle<T>(const Tensor<T> &, int);                                               \
    template Tensor<T> pixel_unshuffle<T>(const Tensor<T> &, int);

FRF_INSTANTIATE_CONV(float)
FRF_INSTANTIATE_CONV(double)

} // namespace frf
