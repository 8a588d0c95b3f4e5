// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/ops.hpp"

#include <cstring>

#include <algorithm>

namespace frf {

namespace gemm {

namespace {

// Register tile: MR rows of C by NR columns, accumulated over the full k
// range before being stored.
constexpr int kMR = 4;

template <typename T, bool TransA>
inline T a_at(const T *a, int lda, int i, int p) {
    return TransA ? a[static_cast<std::ptrdiff_t>(p) * lda + i] : a[static_cast<std::ptrdiff_t>(i) * lda + p];
}

template <typename T>
struct VecOf;
template <>
struct VecOf<float> {
    typedef float type __attribute__((vector_size(32)));
};
template <>
struct VecOf<double> {
    typedef double type __attribute__((vector_size(32)));
};
template <typename T>
using Vec = typename VecOf<T>::type;

template <typename T>
inline Vec<T> vload(const T *p) {
    Vec<T> v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

template <typename T>
inline void vstore(T *p, const Vec<T> &v) {
    std::memcpy(p, &v, sizeof(v));
}

template <typename T, bool TransA>
void tile_full(int k, const T *a, int lda, int i0, const T *b, int ldb, int j0, T *c, int ldc, bool accumulate) {
    constexpr int L = 32 / static_cast<int>(sizeof(T));
    Vec<T> acc[kMR][2];
    for (int r = 0; r < kMR; ++r) {
        T *cr = c + static_cast<std::ptrdiff_t>(i0 + r) * ldc + j0;
        acc[r][0] = accumulate ? vload(cr) : Vec<T>{};
        acc[r][1] = accumulate ? vload(cr + L) : Vec<T>{};
    }
    for (int p = 0; p < k; ++p) {
        const T *bp = b + static_cast<std::ptrdiff_t>(p) * ldb + j0;
        const Vec<T> b0 = vload(bp), b1 = vload(bp + L);
        for (int r = 0; r < kMR; ++r) {
            const T av = a_at<T, TransA>(a, lda, i0 + r, p);
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
        }
    }
    for (int r = 0; r < kMR; ++r) {
        T *cr = c + static_cast<std::ptrdiff_t>(i0 + r) * ldc + j0;
        vstore(cr, acc[r][0]);
        vstore(cr + L, acc[r][1]);
    }
}

template <typename T, bool TransA>
void tile_edge(int k, const T *a, int lda, int i0, int mr, const T *b, int ldb, int j0, int nr, T *c, int ldc, bool accumulate) {
    for (int r = 0; r < mr; ++r) {
        T *cr = c + static_cast<std::ptrdiff_t>(i0 + r) * ldc + j0;
        for (int j = 0; j < nr; ++j) {
            T acc = accumulate ? cr[j] : T(0);
            for (int p = 0; p < k; ++p) acc += a_at<T, TransA>(a, lda, i0 + r, p) * b[static_cast<std::ptrdiff_t>(p) * ldb + j0 + j];
            cr[j] = acc;
        }
    }
}

template <typename T, bool TransA>
void gemm_tiled(int m, int n, int k, const T *a, int lda, const T *b, int ldb, T *c, int ldc, bool accumulate) {
    constexpr int NR = 64 / static_cast<int>(sizeof(T));
    const int mfull = m - m % kMR, nfull = n - n % NR;
    for (int j0 = 0; j0 < nfull; j0 += NR)
        for (int i0 = 0; i0 < mfull; i0 += kMR) tile_full<T, TransA>(k, a, lda, i0, b, ldb, j0, c, ldc, accumulate);
    if (nfull < n) tile_edge<T, TransA>(k, a, lda, 0, mfull, b, ldb, nfull, n - nfull, c, ldc, accumulate);
    if (mfull < m) tile_edge<T, TransA>(k, a, lda, mfull, m - mfull, b, ldb, 0, n, c, ldc, accumulate);
}

} // namespace

// All kernels accumulate each output element over k in increasing order, so
// a result entry depends only on its own row of A and column of B.

template <typename T>
void nn(int m, int n, int k, const T *a, int lda, const T *b, int ldb, T *c, int ldc, bool accumulate) {
    gemm_tiled<T, false>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
void tn(int m, int n, int k, const T *a, int lda, const T *b, int ldb, T *c, int ldc, bool accumulate) {
    gemm_tiled<T, true>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
void nt(int m, int n, int k, const T *a, int lda, const T *b, int ldb, T *c, int ldc, bool accumulate) {
    std::vector<T> bt(static_cast<std::size_t>(k) * static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = b[static_cast<std::ptrdiff_t>(j) * ldb + p];
    }
    nn(m, n, k, a, lda, bt.data(), n, c, ldc, accumulate);
}

template void nn<float>(int, int, int, const float *, int, const float *, int, float *, int, bool);
template void nn<double>(int, int, int, const double *, int, const double *, int, double *, int, bool);
template void tn<float>(int, int, int, const float *, int, const float *, int, float *, int, bool);
template void tn<double>(int, int, int, const double *, int, const double *, int, double *, int, bool);
template void nt<float>(int, int, int, const float *, int, const float *, int, float *, int, bool);
template void nt<double>(int, int, int, const double *, int, const double *, int, double *, int, bool);

} // namespace gemm

template <typename T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const int m = static_cast<int>(a.dim(0));
    const int k = static_cast<int>(a.dim(1));
    const int n = static_cast<int>(b.dim(1));
    Buffer<T> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
    gemm::nn(m, n, k, a.ptr(), k, b.ptr(), n, out.data(), n, false);
    const bool record = detail::needs_graph<T>({&a, &b});
    return detail::make_result<T>({m, n}, std::move(out), record, {a, b}, [m, n, k](TensorImpl<T> &self) {
        auto &A = self.parents[0];
        auto &B = self.parents[1];
        const T *g = self.grad->data();
        if (A->requires_grad) gemm::nt(m, k, n, g, n, B->data->data(), n, detail::grad_of(A).data(), k, true);
        if (B->requires_grad) gemm::tn(k, n, m, A->data->data(), k, g, n, detail::grad_of(B).data(), n, true);
    });
}

template <typename T>
Tensor<T> bmm(const Tensor<T> &a, const Tensor<T> &b, bool transpose_b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const int batch = static_cast<int>(a.dim(0));
    const int m = static_cast<int>(a.dim(1));
    const int k = static_cast<int>(a.dim(2));
    const int n = static_cast<int>(transpose_b ? b.dim(1) : b.dim(2));
    const int kb = static_cast<int>(transpose_b ? b.dim(2) : b.dim(1));
    if (kb != k) {
        throw DimensionError("bmm: inner dimensions differ: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             (transpose_b ? " (transposed)" : ""));
    }
    const std::size_t sa = static_cast<std::size_t>(m) * k;
    const std::size_t sb = static_cast<std::size_t>(k) * n;
    const std::size_t sc = static_cast<std::size_t>(m) * n;
    Buffer<T> out(sc * static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
        if (transpose_b) {
            gemm::nt(m, n, k, a.ptr() + i * sa, k, b.ptr() + i * sb, k, out.data() + i * sc, n, false);
        } else {
            gemm::nn(m, n, k, a.ptr() + i * sa, k, b.ptr() + i * sb, n, out.data() + i * sc, n, false);
        }
    }
    const bool record = detail::needs_graph<T>({&a, &b});
    return detail::make_result<T>(
        {batch, m, n}, std::move(out), record, {a, b}, [=](TensorImpl<T> &self) {
            auto &A = self.parents[0];
            auto &B = self.parents[1];
            const T *g = self.grad->data();
            const T *av = A->data->data();
            const T *bv = B->data->data();
            T *ga = A->requires_grad ? detail::grad_of(A).data() : nullptr;
            T *gb = B->requires_grad ? detail::grad_of(B).data() : nullptr;
            for (int i = 0; i < batch; ++i) {
                const T *gi = g + i * sc;
                if (transpose_b) {
                    // C = A B^T: dA = dC B, dB = dC^T A
                    if (ga) gemm::nn(m, k, n, gi, n, bv + i * sb, k, ga + i * sa, k, true);
                    if (gb) gemm::tn(n, k, m, gi, n, av + i * sa, k, gb + i * sb, k, true);
                } else {
                    if (ga) gemm::nt(m, k, n, gi, n, bv + i * sb, n, ga + i * sa, k, true);
                    if (gb) gemm::tn(k, n, m, av + i * sa, k, gi, n, gb + i * sb, n, true);
                }
            }
        });
}

template Tensor<float> matmul<float>(const Tensor<float> &, const Tensor<float> &);
template Tensor<double> matmul<double>(const Tensor<double> &, const Tensor<double> &);
template Tensor<float> bmm<float>(const Tensor<float> &, const Tensor<float> &, bool);
template Tensor<double> bmm<double>(const Tensor<double> &, const Tensor<double> &, bool);

} // namespace frf
