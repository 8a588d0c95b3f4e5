// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/ops.hpp"

#include <algorithm>
#include <cmath>

namespace frf {

namespace {

struct AxisSplit {
    std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape &s, int axis) {
    const int r = static_cast<int>(s.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit sp;
    for (int i = 0; i < a; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
    sp.len = s[static_cast<std::size_t>(a)];
    for (int i = a + 1; i < r; ++i) sp.inner *= s[static_cast<std::size_t>(i)];
    return sp;
}

} // namespace

template <typename T>
Tensor<T> normalize_axis(const Tensor<T> &x, int axis, const Tensor<T> &gamma, const Tensor<T> &beta, T eps) {
    const AxisSplit sp = split_axis(x.shape(), axis);
    if (gamma.numel() != sp.len || beta.numel() != sp.len) {
        throw DimensionError("normalize_axis: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                             " for axis of length " + std::to_string(sp.len));
    }
    const std::int64_t A = sp.len, I = sp.inner;
    const std::int64_t cols = sp.outer * I;
    std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
    std::vector<T> inv_std(static_cast<std::size_t>(cols));
    Buffer<T> out(static_cast<std::size_t>(x.numel()));
    const T *px = x.ptr();
    const T *pg = gamma.ptr();
    const T *pb = beta.ptr();
    // Statistics over the axis are accumulated per column in axis order.
    std::vector<T> mu(static_cast<std::size_t>(I)), var(static_cast<std::size_t>(I));
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        const T *xo = px + o * A * I;
        std::fill(mu.begin(), mu.end(), T(0));
        std::fill(var.begin(), var.end(), T(0));
        for (std::int64_t a = 0; a < A; ++a)
            for (std::int64_t i = 0; i < I; ++i) mu[static_cast<std::size_t>(i)] += xo[a * I + i];
        for (auto &m : mu) m /= static_cast<T>(A);
        for (std::int64_t a = 0; a < A; ++a)
            for (std::int64_t i = 0; i < I; ++i) {
                const T d = xo[a * I + i] - mu[static_cast<std::size_t>(i)];
                var[static_cast<std::size_t>(i)] += d * d;
            }
        for (std::int64_t i = 0; i < I; ++i) {
            inv_std[static_cast<std::size_t>(o * I + i)] =
                T(1) / std::sqrt(var[static_cast<std::size_t>(i)] / static_cast<T>(A) + eps);
        }
        for (std::int64_t a = 0; a < A; ++a)
            for (std::int64_t i = 0; i < I; ++i) {
                const std::size_t idx = static_cast<std::size_t>((o * A + a) * I + i);
                const T h = (xo[a * I + i] - mu[static_cast<std::size_t>(i)]) * inv_std[static_cast<std::size_t>(o * I + i)];
                xhat[idx] = h;
                out[idx] = pg[a] * h + pb[a];
            }
    }
    const bool record = detail::needs_graph<T>({&x, &gamma, &beta});
    return detail::make_result<T>(
        x.shape(), std::move(out), record, {x, gamma, beta},
        [sp, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl<T> &self) {
            auto &X = self.parents[0];
            auto &Gm = self.parents[1];
            auto &Bt = self.parents[2];
            const std::int64_t A = sp.len, I = sp.inner;
            const T *g = self.grad->data();
            const T *gam = Gm->data->data();
            if (Gm->requires_grad || Bt->requires_grad) {
                T *gg = Gm->requires_grad ? detail::grad_of(Gm).data() : nullptr;
                T *gb = Bt->requires_grad ? detail::grad_of(Bt).data() : nullptr;
                for (std::int64_t o = 0; o < sp.outer; ++o)
                    for (std::int64_t a = 0; a < A; ++a)
                        for (std::int64_t i = 0; i < I; ++i) {
                            const std::size_t idx = static_cast<std::size_t>((o * A + a) * I + i);
                            if (gg) gg[a] += g[idx] * xhat[idx];
                            if (gb) gb[a] += g[idx];
                        }
            }
            if (!X->requires_grad) return;
            T *gx = detail::grad_of(X).data();
            std::vector<T> m1(static_cast<std::size_t>(I)), m2(static_cast<std::size_t>(I));
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                std::fill(m1.begin(), m1.end(), T(0));
                std::fill(m2.begin(), m2.end(), T(0));
                for (std::int64_t a = 0; a < A; ++a)
                    for (std::int64_t i = 0; i < I; ++i) {
                        const std::size_t idx = static_cast<std::size_t>((o * A + a) * I + i);
                        const T dh = g[idx] * gam[a];
                        m1[static_cast<std::size_t>(i)] += dh;
                        m2[static_cast<std::size_t>(i)] += dh * xhat[idx];
                    }
                for (std::int64_t a = 0; a < A; ++a)
                    for (std::int64_t i = 0; i < I; ++i) {
                        const std::size_t idx = static_cast<std::size_t>((o * A + a) * I + i);
                        const T dh = g[idx] * gam[a];
                        const T inv_n = T(1) / static_cast<T>(A);
                        gx[idx] += inv_std[static_cast<std::size_t>(o * I + i)] *
                                   (dh - m1[static_cast<std::size_t>(i)] * inv_n - xhat[idx] * m2[static_cast<std::size_t>(i)] * inv_n);
                    }
            }
        });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T> &x, int axis, T eps) {
    const AxisSplit sp = split_axis(x.shape(), axis);
    const std::int64_t A = sp.len, I = sp.inner;
    std::vector<T> norms(static_cast<std::size_t>(sp.outer * I), T(0));
    const T *px = x.ptr();
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t a = 0; a < A; ++a)
            for (std::int64_t i = 0; i < I; ++i) {
                const T v = px[(o * A + a) * I + i];
                norms[static_cast<std::size_t>(o * I + i)] += v * v;
            }
    for (auto &n : norms) n = std::sqrt(n);
    Buffer<T> out(static_cast<std::size_t>(x.numel()));
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t a = 0; a < A; ++a)
            for (std::int64_t i = 0; i < I; ++i) {
                const std::size_t idx = static_cast<std::size_t>((o * A + a) * I + i);
                out[idx] = px[idx] / std::max(norms[static_cast<std::size_t>(o * I + i)], eps);
            }
    const bool record = detail::needs_graph<T>({&x});
    return detail::make_result<T>(x.shape(), std::move(out), record, {x},
                                  [sp, eps, norms = std::move(norms)](TensorImpl<T> &self) {
                                      auto &X = self.parents[0];
                                      if (!X->requires_grad) return;
                                      const std::int64_t A = sp.len, I = sp.inner;
                                      const T *g = self.grad->data();
                                      const T *xv = X->data->data();
                                      T *gx = detail::grad_of(X).data();
                                      std::vector<T> gdotx(static_cast<std::size_t>(I));
                                      for (std::int64_t o = 0; o < sp.outer; ++o) {
                                          std::fill(gdotx.begin(), gdotx.end(), T(0));
                                          for (std::int64_t a = 0; a < A; ++a)
                                              for (std::int64_t i = 0; i < I; ++i) {
                                                  const std::size_t idx = static_cast<std::size_t>((o * A + a) * I + i);
                                                  gdotx[static_cast<std::size_t>(i)] += g[idx] * xv[idx];
                                              }
                                          for (std::int64_t i = 0; i < I; ++i) {
                                              const T n = norms[static_cast<std::size_t>(o * I + i)];
                                              const T d = std::max(n, eps);
                                              // Below eps the map is a plain scale.
                                              const T k = n >= eps ? gdotx[static_cast<std::size_t>(i)] / (n * n * n) : T(0);
                                              for (std::int64_t a = 0; a < A; ++a) {
                                                  const std::size_t idx = static_cast<std::size_t>((o * A + a) * I + i);
                                                  gx[idx] += g[idx] / d - xv[idx] * k;
                                              }
                                          }
                                      }
                                  });
}

#define FRF_INSTANTIATE_NORM(T)                                                                                  \
    template Tensor<T> normalize_axis<T>(const Tensor<T> &, int, const Tensor<T> &, const Tensor<T> &, T);       \
    template Tensor<T> l2_normalize<T>(const Tensor<T> &, int, T);

FRF_INSTANTIATE_NORM(float)
FRF_INSTANTIATE_NORM(double)

} // namespace frf
