// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/tensor.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace frf {

/// Compares reverse-mode gradients of the scalar `f` with central finite
/// differences, perturbing every element of every tensor in `inputs` in
/// place. `f` must read the inputs it closes over.
///
/// Returns max over elements of |analytic - numeric| / max(1, |numeric|).
/// Throws NumericalError if f or a gradient is non-finite.
double grad_check(const std::function<Tensor<double>()> &f, const std::vector<Tensor<double>> &inputs,
                  double eps = 1e-5);

/// sum(x * R) with R drawn uniformly in [-1, 1] from `seed`. Turns a tensor
/// valued function into a scalar one whose gradient exercises every output.
Tensor<double> random_projection(const Tensor<double> &x, std::uint64_t seed);

/// Tensor of the given shape with entries uniform in [lo, hi].
template <typename T>
Tensor<T> random_uniform(const Shape &shape, std::uint64_t seed, T lo = T(-1), T hi = T(1), bool requires_grad = false);

} // namespace frf
