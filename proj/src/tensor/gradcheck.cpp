// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/gradcheck.hpp"

#include "frf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace frf {

double grad_check(const std::function<Tensor<double>()> &f, const std::vector<Tensor<double>> &inputs, double eps) {
    for (auto t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    const Tensor<double> y = f();
    if (y.numel() != 1) throw ContractError("grad_check: function must be scalar, got " + shape_str(y.shape()));
    if (!std::isfinite(y.item())) throw NumericalError("grad_check: non-finite function value");
    y.backward();

    double worst = 0.0;
    for (auto t : inputs) {
        const std::vector<double> analytic = t.grad();
        auto values = t.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double fp, fm;
            {
                NoGradGuard ng;
                values[i] = saved + eps;
                fp = f().item();
                values[i] = saved - eps;
                fm = f().item();
            }
            values[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[i])) {
                throw NumericalError("grad_check: non-finite value at element " + std::to_string(i));
            }
            const double numeric = (fp - fm) / (2.0 * eps);
            worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
        }
    }
    return worst;
}

Tensor<double> random_projection(const Tensor<double> &x, std::uint64_t seed) {
    return sum(mul(x, random_uniform<double>(x.shape(), seed)));
}

template <typename T>
Tensor<T> random_uniform(const Shape &shape, std::uint64_t seed, T lo, T hi, bool requires_grad) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto &e : v) e = static_cast<T>(dist(rng));
    return Tensor<T>::from(shape, std::move(v), requires_grad);
}

template Tensor<float> random_uniform<float>(const Shape &, std::uint64_t, float, float, bool);
template Tensor<double> random_uniform<double>(const Shape &, std::uint64_t, double, double, bool);

} // namespace frf
