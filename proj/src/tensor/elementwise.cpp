// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace frf {

namespace {

struct BroadcastPlan {
    Shape out;
    std::vector<std::int64_t> stride_a;
    std::vector<std::int64_t> stride_b;
    bool same = false;
};

std::vector<std::int64_t> strides_for(const Shape &shape, std::size_t rank) {
    // Right-aligned strides of `shape` in a `rank`-dim index space; 0 on
    // broadcast axes.
    std::vector<std::int64_t> s(rank, 0);
    std::int64_t acc = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const std::size_t src = shape.size() - 1 - i;
        const std::size_t dst = rank - 1 - i;
        s[dst] = shape[src] == 1 ? 0 : acc;
        acc *= shape[src];
    }
    return s;
}

BroadcastPlan make_plan(const Shape &a, const Shape &b) {
    BroadcastPlan p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    p.out.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        }
        p.out[i] = std::max(da, db);
        if (da == 0 || db == 0) p.out[i] = 0;
    }
    p.stride_a = strides_for(a, rank);
    p.stride_b = strides_for(b, rank);
    return p;
}

/// Calls f(out_index, a_offset, b_offset) for every output element in
/// row-major order.
template <typename F>
void for_each_broadcast(const BroadcastPlan &p, F &&f) {
    const std::int64_t total = numel_of(p.out);
    if (total == 0) return;
    if (p.same) {
        for (std::int64_t i = 0; i < total; ++i) f(i, i, i);
        return;
    }
    const std::size_t rank = p.out.size();
    if (rank == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<std::int64_t> idx(rank, 0);
    const std::int64_t inner = p.out[rank - 1];
    const std::int64_t sa = p.stride_a[rank - 1];
    const std::int64_t sb = p.stride_b[rank - 1];
    std::int64_t oa = 0;
    std::int64_t ob = 0;
    std::int64_t o = 0;
    while (o < total) {
        for (std::int64_t j = 0; j < inner; ++j) f(o + j, oa + j * sa, ob + j * sb);
        o += inner;
        // Advance the odometer over the outer axes.
        for (int ax = static_cast<int>(rank) - 2; ax >= 0; --ax) {
            const auto a = static_cast<std::size_t>(ax);
            ++idx[a];
            oa += p.stride_a[a];
            ob += p.stride_b[a];
            if (idx[a] < p.out[a]) break;
            oa -= p.stride_a[a] * idx[a];
            ob -= p.stride_b[a] * idx[a];
            idx[a] = 0;
        }
    }
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T> &a, const Tensor<T> &b, F f, DA da, DB db) {
    BroadcastPlan plan = make_plan(a.shape(), b.shape());
    Buffer<T> out(static_cast<std::size_t>(numel_of(plan.out)));
    const T *pa = a.ptr();
    const T *pb = b.ptr();
    T *po = out.data();
    if (plan.same) {
        const std::size_t n = out.size();
        for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    } else {
        for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            po[o] = f(pa[ia], pb[ib]);
        });
    }
    const bool record = detail::needs_graph<T>({&a, &b});
    Shape out_shape = plan.out;
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), record, {a, b},
        [plan = std::move(plan), da, db](TensorImpl<T> &self) {
            auto &A = self.parents[0];
            auto &B = self.parents[1];
            const T *x = A->data->data();
            const T *y = B->data->data();
            const T *g = self.grad->data();
            const T *r = self.data->data();
            T *ga = A->requires_grad ? detail::grad_of(A).data() : nullptr;
            T *gb = B->requires_grad ? detail::grad_of(B).data() : nullptr;
            for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                if (ga) ga[ia] += g[o] * da(x[ia], y[ib], r[o]);
                if (gb) gb[ib] += g[o] * db(x[ia], y[ib], r[o]);
            });
        });
}

template <typename T, typename F, typename DF>
Tensor<T> unary_op(const Tensor<T> &x, F f, DF df) {
    const std::size_t n = static_cast<std::size_t>(x.numel());
    Buffer<T> out(n);
    const T *px = x.ptr();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(px[i]);
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>(x.shape(), std::move(out), record, {x}, [df](TensorImpl<T> &self) {
        auto &X = self.parents[0];
        if (!X->requires_grad) return;
        const T *xv = X->data->data();
        const T *yv = self.data->data();
        const T *g = self.grad->data();
        T *gx = detail::grad_of(X).data();
        const std::size_t n = self.data->size();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * df(xv[i], yv[i]);
    });
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
    return binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b) {
    return binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
    return binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T> &a, const Tensor<T> &b) {
    return binary_op(
        a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T, T y, T r) { return -r / y; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T> &a, T s) {
    return unary_op(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T> &a, T s) {
    return unary_op(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T> &x) {
    return unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T> &x) {
    return unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T> &x) {
    return unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T> &x) {
    return unary_op(
        x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T> &x) {
    return unary_op(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T> &x) {
    return unary_op(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T> &x) {
    return unary_op(
        x, [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](T v, T) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        });
}

template <typename T>
Tensor<T> relu(const Tensor<T> &x) {
    return unary_op(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> silu(const Tensor<T> &x) {
    return unary_op(
        x,
        [](T v) { return v / (T(1) + std::exp(-v)); },
        [](T v, T) {
            const T s = T(1) / (T(1) + std::exp(-v));
            return s * (T(1) + v * (T(1) - s));
        });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {

struct AxisSplit {
    std::int64_t outer = 1;
    std::int64_t len = 1;
    std::int64_t inner = 1;
};

int normalize_axis_index(int axis, int rank) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return a;
}

AxisSplit split_at(const Shape &s, int axis) {
    AxisSplit r;
    for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
    r.len = s[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

Shape reduced_shape(const Shape &s, int axis, bool keepdim) {
    Shape out = s;
    if (keepdim) {
        out[static_cast<std::size_t>(axis)] = 1;
    } else {
        out.erase(out.begin() + axis);
    }
    return out;
}

template <typename T>
Tensor<T> axis_sum(const Tensor<T> &x, int axis, bool keepdim, T scale, bool canonical) {
    const int a = normalize_axis_index(axis, x.rank());
    const AxisSplit sp = split_at(x.shape(), a);
    Buffer<T> out(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
    const T *px = x.ptr();
    if (canonical) {
        std::vector<T> terms(static_cast<std::size_t>(sp.len));
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                for (std::int64_t l = 0; l < sp.len; ++l) {
                    terms[static_cast<std::size_t>(l)] = px[(o * sp.len + l) * sp.inner + i];
                }
                std::sort(terms.begin(), terms.end());
                T acc = T(0);
                for (T t : terms) acc += t;
                out[static_cast<std::size_t>(o * sp.inner + i)] = acc * scale;
            }
        }
    } else {
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            T *dst = out.data() + o * sp.inner;
            for (std::int64_t l = 0; l < sp.len; ++l) {
                const T *src = px + (o * sp.len + l) * sp.inner;
                for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
            }
            if (scale != T(1)) {
                for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] *= scale;
            }
        }
    }
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>(reduced_shape(x.shape(), a, keepdim), std::move(out), record, {x},
                                  [sp, scale](TensorImpl<T> &self) {
                                      auto &X = self.parents[0];
                                      if (!X->requires_grad) return;
                                      T *gx = detail::grad_of(X).data();
                                      const T *g = self.grad->data();
                                      for (std::int64_t o = 0; o < sp.outer; ++o) {
                                          const T *src = g + o * sp.inner;
                                          for (std::int64_t l = 0; l < sp.len; ++l) {
                                              T *dst = gx + (o * sp.len + l) * sp.inner;
                                              for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * scale;
                                          }
                                      }
                                  });
}

} // namespace

template <typename T>
Tensor<T> sum(const Tensor<T> &x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    Buffer<T> out(1, acc);
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>({}, std::move(out), record, {x}, [](TensorImpl<T> &self) {
        auto &X = self.parents[0];
        if (!X->requires_grad) return;
        const T g = (*self.grad)[0];
        for (auto &v : detail::grad_of(X)) v += g;
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T> &x, int axis, bool keepdim) {
    return axis_sum(x, axis, keepdim, T(1), false);
}

template <typename T>
Tensor<T> mean(const Tensor<T> &x) {
    if (x.numel() == 0) throw DimensionError("mean of empty tensor");
    return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T> &x, int axis, bool keepdim) {
    const int a = normalize_axis_index(axis, x.rank());
    const auto len = x.shape()[static_cast<std::size_t>(a)];
    if (len == 0) throw DimensionError("mean over empty axis");
    return axis_sum(x, a, keepdim, T(1) / static_cast<T>(len), false);
}

template <typename T>
Tensor<T> canonical_sum(const Tensor<T> &x, int axis, bool keepdim) {
    return axis_sum(x, axis, keepdim, T(1), true);
}

template <typename T>
Tensor<T> softmax(const Tensor<T> &x, int axis, bool order_invariant) {
    const int a = normalize_axis_index(axis, x.rank());
    const AxisSplit sp = split_at(x.shape(), a);
    Buffer<T> out(static_cast<std::size_t>(x.numel()));
    const T *px = x.ptr();
    const T neg_inf = -std::numeric_limits<T>::infinity();
    std::vector<T> terms(static_cast<std::size_t>(sp.len));
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            const std::int64_t base = o * sp.len * sp.inner + i;
            T m = neg_inf;
            for (std::int64_t l = 0; l < sp.len; ++l) m = std::max(m, px[base + l * sp.inner]);
            if (m == neg_inf) {
                for (std::int64_t l = 0; l < sp.len; ++l) out[static_cast<std::size_t>(base + l * sp.inner)] = T(0);
                continue;
            }
            for (std::int64_t l = 0; l < sp.len; ++l) {
                const T v = px[base + l * sp.inner];
                terms[static_cast<std::size_t>(l)] = v == neg_inf ? T(0) : std::exp(v - m);
                out[static_cast<std::size_t>(base + l * sp.inner)] = terms[static_cast<std::size_t>(l)];
            }
            if (order_invariant) std::sort(terms.begin(), terms.end());
            T z = T(0);
            for (T t : terms) z += t;
            for (std::int64_t l = 0; l < sp.len; ++l) out[static_cast<std::size_t>(base + l * sp.inner)] /= z;
        }
    }
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>(x.shape(), std::move(out), record, {x}, [sp](TensorImpl<T> &self) {
        auto &X = self.parents[0];
        if (!X->requires_grad) return;
        T *gx = detail::grad_of(X).data();
        const T *g = self.grad->data();
        const T *y = self.data->data();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                const std::int64_t base = o * sp.len * sp.inner + i;
                T dot = T(0);
                for (std::int64_t l = 0; l < sp.len; ++l) dot += g[base + l * sp.inner] * y[base + l * sp.inner];
                for (std::int64_t l = 0; l < sp.len; ++l) {
                    const std::int64_t k = base + l * sp.inner;
                    gx[k] += y[k] * (g[k] - dot);
                }
            }
        }
    });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T> &x, int axis) {
    const int a = normalize_axis_index(axis, x.rank());
    const AxisSplit sp = split_at(x.shape(), a);
    Buffer<T> out(static_cast<std::size_t>(x.numel()));
    const T *px = x.ptr();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            const std::int64_t base = o * sp.len * sp.inner + i;
            T m = -std::numeric_limits<T>::infinity();
            for (std::int64_t l = 0; l < sp.len; ++l) m = std::max(m, px[base + l * sp.inner]);
            T z = T(0);
            for (std::int64_t l = 0; l < sp.len; ++l) z += std::exp(px[base + l * sp.inner] - m);
            const T lse = m + std::log(z);
            for (std::int64_t l = 0; l < sp.len; ++l) {
                out[static_cast<std::size_t>(base + l * sp.inner)] = px[base + l * sp.inner] - lse;
            }
        }
    }
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>(x.shape(), std::move(out), record, {x}, [sp](TensorImpl<T> &self) {
        auto &X = self.parents[0];
        if (!X->requires_grad) return;
        T *gx = detail::grad_of(X).data();
        const T *g = self.grad->data();
        const T *y = self.data->data();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                const std::int64_t base = o * sp.len * sp.inner + i;
                T gs = T(0);
                for (std::int64_t l = 0; l < sp.len; ++l) gs += g[base + l * sp.inner];
                for (std::int64_t l = 0; l < sp.len; ++l) {
                    const std::int64_t k = base + l * sp.inner;
                    gx[k] += g[k] - std::exp(y[k]) * gs;
                }
            }
        }
    });
}

#define FRF_INSTANTIATE_ELEMENTWISE(T)                                                                  \
    template Tensor<T> add<T>(const Tensor<T> &, const Tensor<T> &);                                    \
    template Tensor<T> sub<T>(const Tensor<T> &, const Tensor<T> &);                                    \
    template Tensor<T> mul<T>(const Tensor<T> &, const Tensor<T> &);                                    \
    template Tensor<T> div<T>(const Tensor<T> &, const Tensor<T> &);                                    \
    template Tensor<T> add_scalar<T>(const Tensor<T> &, T);                                             \
    template Tensor<T> mul_scalar<T>(const Tensor<T> &, T);                                             \
    template Tensor<T> neg<T>(const Tensor<T> &);                                                       \
    template Tensor<T> exp<T>(const Tensor<T> &);                                                       \
    template Tensor<T> log<T>(const Tensor<T> &);                                                       \
    template Tensor<T> abs<T>(const Tensor<T> &);                                                       \
    template Tensor<T> square<T>(const Tensor<T> &);                                                    \
    template Tensor<T> sigmoid<T>(const Tensor<T> &);                                                   \
    template Tensor<T> softplus<T>(const Tensor<T> &);                                                  \
    template Tensor<T> relu<T>(const Tensor<T> &);                                                      \
    template Tensor<T> silu<T>(const Tensor<T> &);                                                      \
    template Tensor<T> sum<T>(const Tensor<T> &);                                                       \
    template Tensor<T> sum<T>(const Tensor<T> &, int, bool);                                            \
    template Tensor<T> mean<T>(const Tensor<T> &);                                                      \
    template Tensor<T> mean<T>(const Tensor<T> &, int, bool);                                           \
    template Tensor<T> canonical_sum<T>(const Tensor<T> &, int, bool);                                  \
    template Tensor<T> softmax<T>(const Tensor<T> &, int, bool);                                        \
    template Tensor<T> log_softmax<T>(const Tensor<T> &, int);

FRF_INSTANTIATE_ELEMENTWISE(float)
FRF_INSTANTIATE_ELEMENTWISE(double)

} // namespace frf
