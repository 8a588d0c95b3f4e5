// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/tensor.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace frf {

// ---------------------------------------------------------------------------
// Elementwise. Binary ops broadcast numpy-style (shapes right-aligned, size-1
// axes stretch); gradients are reduced back onto each operand's shape.
// ---------------------------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> div(const Tensor<T> &a, const Tensor<T> &b);

template <typename T> Tensor<T> add_scalar(const Tensor<T> &a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T> &a, T s);

template <typename T> Tensor<T> neg(const Tensor<T> &x);
template <typename T> Tensor<T> exp(const Tensor<T> &x);
template <typename T> Tensor<T> log(const Tensor<T> &x);
template <typename T> Tensor<T> abs(const Tensor<T> &x);
template <typename T> Tensor<T> square(const Tensor<T> &x);
template <typename T> Tensor<T> sigmoid(const Tensor<T> &x);
template <typename T> Tensor<T> softplus(const Tensor<T> &x);
template <typename T> Tensor<T> relu(const Tensor<T> &x);
template <typename T> Tensor<T> silu(const Tensor<T> &x);

template <typename T> Tensor<T> operator+(const Tensor<T> &a, const Tensor<T> &b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T> &a, const Tensor<T> &b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T> &a, const Tensor<T> &b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T> &a, const Tensor<T> &b) { return div(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T> &a, T s) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator*(T s, const Tensor<T> &a) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator+(const Tensor<T> &a, T s) { return add_scalar(a, s); }
template <typename T> Tensor<T> operator-(const Tensor<T> &a) { return neg(a); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T> &x);
template <typename T> Tensor<T> sum(const Tensor<T> &x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T> &x);
template <typename T> Tensor<T> mean(const Tensor<T> &x, int axis, bool keepdim = false);

/// Sum along `axis` whose value does not depend on the order of the entries
/// along that axis: terms are added in ascending order. Permuting the axis
/// yields a bit-identical result.
template <typename T> Tensor<T> canonical_sum(const Tensor<T> &x, int axis, bool keepdim = false);

/// Softmax along `axis`, stabilized by max subtraction. Entries equal to -inf
/// receive probability 0; a slice that is entirely -inf yields all zeros.
/// With `order_invariant` the normalizer is a canonical_sum.
template <typename T> Tensor<T> softmax(const Tensor<T> &x, int axis, bool order_invariant = false);
template <typename T> Tensor<T> log_softmax(const Tensor<T> &x, int axis);

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

/// Aliases the data with a new shape (one axis may be -1).
template <typename T> Tensor<T> reshape(const Tensor<T> &x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T> &x, const std::vector<int> &dims);
template <typename T> Tensor<T> transpose2d(const Tensor<T> &x);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>> &parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T> &x, int axis, std::int64_t start, std::int64_t length);
template <typename T>
Tensor<T> index_select(const Tensor<T> &x, int axis, const std::vector<std::int64_t> &indices);
/// Broadcasts size-1 axes up to `shape` (same rank).
template <typename T> Tensor<T> expand(const Tensor<T> &x, const Shape &shape);

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// [m x k] . [k x n]. Every output element accumulates its k products in
/// increasing k order, independent of its position in the result.
template <typename T> Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b);
/// Batched [B x m x k] . [B x k x n], or . [B x n x k]^T with `transpose_b`.
template <typename T> Tensor<T> bmm(const Tensor<T> &a, const Tensor<T> &b, bool transpose_b = false);

// ---------------------------------------------------------------------------
// Convolution and resampling
// ---------------------------------------------------------------------------

using Int3 = std::array<int, 3>;

/// Cross-correlation of x[C_in x D1 x D2 x D3] with w[C_out x C_in x k1 x k2 x k3]
/// and zero padding. Output size per axis is floor((in + 2 pad - k) / stride) + 1.
/// `bias` may be undefined, else shape [C_out].
template <typename T>
Tensor<T> conv3d(const Tensor<T> &x, const Tensor<T> &w, const Tensor<T> &bias, Int3 stride = {1, 1, 1},
                 Int3 padding = {0, 0, 0});

/// Nearest-neighbour upsampling of x[C x D1 x D2 x D3] by integer factors.
template <typename T> Tensor<T> upsample_nearest(const Tensor<T> &x, Int3 factors);

/// Depth-to-space: [(r^2 C) x h x w] -> [C x rh x rw], or with a batch axis
/// [(r^2 C) x B x h x w] -> [C x B x rh x rw]. Input channel c*r^2 + i*r + j
/// lands at output (c, y*r + i, x*r + j).
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T> &x, int r);
/// Inverse of pixel_shuffle.
template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T> &x, int r);

template <typename T>
struct SampleResult {
    Tensor<T> values;           // [N x C]
    std::vector<std::uint8_t> valid; // one flag per sample
};

/// Bilinear sampling of feature_map[C x H x W] at continuous coordinates
/// coords[N x 2] = (x, y), where integer coordinates hit pixel centers.
/// Samples outside [0, W-1] x [0, H-1] are zero and flagged invalid.
/// Gradients flow to the feature map only.
template <typename T>
SampleResult<T> grid_sample_bilinear(const Tensor<T> &feature_map, const Tensor<T> &coords);

/// Trilinear sampling of field[C x D x H x W] at coords[N x 3] = (x, y, z)
/// in index space (x along W, y along H, z along D). Same out-of-range
/// contract as the bilinear sampler.
template <typename T>
SampleResult<T> grid_sample_trilinear(const Tensor<T> &field, const Tensor<T> &coords);

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Normalizes over `axis` at every other position (zero mean, unit variance),
/// then applies per-index affine gamma/beta of shape [dim(axis)]. With axis 0
/// on [C x ...] this is a per-cell channel norm; with the last axis on
/// [N x C] it is layer norm.
template <typename T>
Tensor<T> normalize_axis(const Tensor<T> &x, int axis, const Tensor<T> &gamma, const Tensor<T> &beta,
                         T eps = T(1e-5));

/// x / max(||x||_2, eps) along `axis`. Well-defined (zero output, finite
/// gradient) for zero vectors.
template <typename T> Tensor<T> l2_normalize(const Tensor<T> &x, int axis, T eps = T(1e-8));

/// Element type conversion. Not differentiable.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From> &x) {
    Buffer<To> out(static_cast<std::size_t>(x.numel()));
    const From *p = x.ptr();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(p[i]);
    return Tensor<To>::from_buffer(x.shape(), std::move(out));
}

namespace gemm {

/// C[m x n] (+)= A[m x k] . B[k x n] with leading dimensions.
template <typename T>
void nn(int m, int n, int k, const T *a, int lda, const T *b, int ldb, T *c, int ldc, bool accumulate);
/// C[m x n] (+)= A^T . B with A stored [k x m].
template <typename T>
void tn(int m, int n, int k, const T *a, int lda, const T *b, int ldb, T *c, int ldc, bool accumulate);
/// C[m x n] (+)= A . B^T with B stored [n x k].
template <typename T>
void nt(int m, int n, int k, const T *a, int lda, const T *b, int ldb, T *c, int ldc, bool accumulate);

} // namespace gemm

} // namespace frf
