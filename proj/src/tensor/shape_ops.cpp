// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/ops.hpp"

#include <numeric>

namespace frf {

namespace {

int checked_axis(int axis, int rank) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return a;
}

std::vector<std::int64_t> contiguous_strides(const Shape &s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
        st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
    }
    return st;
}

} // namespace

template <typename T>
Tensor<T> reshape(const Tensor<T> &x, Shape shape) {
    std::int64_t known = 1;
    int infer = -1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw DimensionError("reshape: more than one inferred axis");
            infer = static_cast<int>(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0) {
        if (known == 0 || x.numel() % known != 0) {
            throw DimensionError("reshape: cannot infer axis for " + shape_str(x.shape()) + " -> " + shape_str(shape));
        }
        shape[static_cast<std::size_t>(infer)] = x.numel() / known;
    }
    if (numel_of(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = x.impl()->data;
    Tensor<T> out(std::move(impl));
    if (detail::needs_graph<T>({&x})) {
        auto *o = out.impl();
        o->requires_grad = true;
        o->parents.push_back(x.impl_ptr());
        o->backward_fn = [](TensorImpl<T> &self) {
            auto &X = self.parents[0];
            if (!X->requires_grad) return;
            auto &gx = detail::grad_of(X);
            const auto &g = *self.grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        };
    }
    return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T> &x, const std::vector<int> &dims) {
    const int r = x.rank();
    if (static_cast<int>(dims.size()) != r) throw DimensionError("permute: wrong number of axes for " + shape_str(x.shape()));
    std::vector<int> seen(static_cast<std::size_t>(r), 0);
    Shape out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int d = checked_axis(dims[static_cast<std::size_t>(i)], r);
        if (seen[static_cast<std::size_t>(d)]++) throw DimensionError("permute: repeated axis");
        out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(d)];
    }
    const auto in_strides = contiguous_strides(x.shape());
    // Stride in the input for each output axis.
    std::vector<std::int64_t> src_stride(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) src_stride[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(checked_axis(dims[static_cast<std::size_t>(i)], r))];

    const std::int64_t total = x.numel();
    std::vector<std::int64_t> map(static_cast<std::size_t>(total));
    {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
        std::int64_t off = 0;
        for (std::int64_t o = 0; o < total; ++o) {
            map[static_cast<std::size_t>(o)] = off;
            for (int ax = r - 1; ax >= 0; --ax) {
                const auto a = static_cast<std::size_t>(ax);
                ++idx[a];
                off += src_stride[a];
                if (idx[a] < out_shape[a]) break;
                off -= src_stride[a] * idx[a];
                idx[a] = 0;
            }
        }
    }
    Buffer<T> out(static_cast<std::size_t>(total));
    const T *px = x.ptr();
    for (std::int64_t o = 0; o < total; ++o) out[static_cast<std::size_t>(o)] = px[map[static_cast<std::size_t>(o)]];
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>(std::move(out_shape), std::move(out), record, {x},
                                  [map = std::move(map)](TensorImpl<T> &self) {
                                      auto &X = self.parents[0];
                                      if (!X->requires_grad) return;
                                      T *gx = detail::grad_of(X).data();
                                      const T *g = self.grad->data();
                                      for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
                                  });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T> &x) {
    if (x.rank() != 2) throw DimensionError("transpose2d: expected rank 2, got " + shape_str(x.shape()));
    return permute(x, {1, 0});
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>> &parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const int r = parts[0].rank();
    const int a = checked_axis(axis, r);
    Shape out_shape = parts[0].shape();
    out_shape[static_cast<std::size_t>(a)] = 0;
    for (const auto &p : parts) {
        if (p.rank() != r) throw DimensionError("concat: rank mismatch " + shape_str(p.shape()));
        for (int i = 0; i < r; ++i) {
            if (i != a && p.shape()[static_cast<std::size_t>(i)] != parts[0].shape()[static_cast<std::size_t>(i)]) {
                throw DimensionError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
            }
        }
        out_shape[static_cast<std::size_t>(a)] += p.shape()[static_cast<std::size_t>(a)];
    }
    std::int64_t outer = 1;
    for (int i = 0; i < a; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
    std::int64_t inner = 1;
    for (int i = a + 1; i < r; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
    const std::int64_t out_len = out_shape[static_cast<std::size_t>(a)];

    Buffer<T> out(static_cast<std::size_t>(numel_of(out_shape)));
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto &p : parts) {
        const std::int64_t len = p.shape()[static_cast<std::size_t>(a)];
        offsets.push_back(off);
        const T *src = p.ptr();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy(src + o * len * inner, src + (o + 1) * len * inner, out.begin() + (o * out_len + off) * inner);
        }
        off += len;
    }
    const bool record = detail::needs_graph<T>(parts);
    return detail::make_result<T>(std::move(out_shape), std::move(out), record, parts,
                                  [offsets, outer, inner, out_len, a](TensorImpl<T> &self) {
                                      const T *g = self.grad->data();
                                      for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                          auto &P = self.parents[k];
                                          if (!P->requires_grad) continue;
                                          const std::int64_t len = P->shape[static_cast<std::size_t>(a)];
                                          T *gp = detail::grad_of(P).data();
                                          for (std::int64_t o = 0; o < outer; ++o) {
                                              const T *src = g + (o * out_len + offsets[k]) * inner;
                                              T *dst = gp + o * len * inner;
                                              for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                                          }
                                      }
                                  });
}

template <typename T>
Tensor<T> slice(const Tensor<T> &x, int axis, std::int64_t start, std::int64_t length) {
    const int a = checked_axis(axis, x.rank());
    const std::int64_t n = x.shape()[static_cast<std::size_t>(a)];
    if (start < 0 || length < 0 || start + length > n) {
        throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of range on axis " + std::to_string(a) + " of " + shape_str(x.shape()));
    }
    std::vector<std::int64_t> idx(static_cast<std::size_t>(length));
    std::iota(idx.begin(), idx.end(), start);
    return index_select(x, a, idx);
}

template <typename T>
Tensor<T> index_select(const Tensor<T> &x, int axis, const std::vector<std::int64_t> &indices) {
    const int a = checked_axis(axis, x.rank());
    const std::int64_t n = x.shape()[static_cast<std::size_t>(a)];
    for (auto i : indices) {
        if (i < 0 || i >= n) throw DimensionError("index_select: index " + std::to_string(i) + " out of range");
    }
    std::int64_t outer = 1;
    for (int i = 0; i < a; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
    std::int64_t inner = 1;
    for (int i = a + 1; i < x.rank(); ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(a)] = static_cast<std::int64_t>(indices.size());
    const auto m = static_cast<std::int64_t>(indices.size());
    Buffer<T> out(static_cast<std::size_t>(outer * m * inner));
    const T *px = x.ptr();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t k = 0; k < m; ++k) {
            const T *src = px + (o * n + indices[static_cast<std::size_t>(k)]) * inner;
            std::copy(src, src + inner, out.begin() + (o * m + k) * inner);
        }
    }
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>(std::move(out_shape), std::move(out), record, {x},
                                  [indices, outer, inner, n, m](TensorImpl<T> &self) {
                                      auto &X = self.parents[0];
                                      if (!X->requires_grad) return;
                                      T *gx = detail::grad_of(X).data();
                                      const T *g = self.grad->data();
                                      for (std::int64_t o = 0; o < outer; ++o) {
                                          for (std::int64_t k = 0; k < m; ++k) {
                                              T *dst = gx + (o * n + indices[static_cast<std::size_t>(k)]) * inner;
                                              const T *src = g + (o * m + k) * inner;
                                              for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                                          }
                                      }
                                  });
}

template <typename T>
Tensor<T> expand(const Tensor<T> &x, const Shape &shape) {
    if (static_cast<int>(shape.size()) != x.rank()) {
        throw DimensionError("expand: rank mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (x.shape()[i] != shape[i] && x.shape()[i] != 1) {
            throw DimensionError("expand: cannot expand " + shape_str(x.shape()) + " to " + shape_str(shape));
        }
    }
    // Broadcasting add against a zero tensor carries the reduction backward.
    return add(x, Tensor<T>::zeros(shape));
}

#define FRF_INSTANTIATE_SHAPE(T)                                                                        \
    template Tensor<T> reshape<T>(const Tensor<T> &, Shape);                                            \
    template Tensor<T> permute<T>(const Tensor<T> &, const std::vector<int> &);                         \
    template Tensor<T> transpose2d<T>(const Tensor<T> &);                                               \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>> &, int);                                  \
    template Tensor<T> slice<T>(const Tensor<T> &, int, std::int64_t, std::int64_t);                    \
    template Tensor<T> index_select<T>(const Tensor<T> &, int, const std::vector<std::int64_t> &);      \
    template Tensor<T> expand<T>(const Tensor<T> &, const Shape &);

FRF_INSTANTIATE_SHAPE(float)
FRF_INSTANTIATE_SHAPE(double)

} // namespace frf
