// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/ops.hpp"

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace frf {

template <typename T>
struct Parameter {
    std::string name;  // dot-separated, unique within a ParameterSet
    Tensor<T> tensor;  // requires_grad
    std::string group; // optimizer group, e.g. "encoder" or "decoder"
};

/// Ordered collection of named parameters.
template <typename T>
class ParameterSet {
public:
    Tensor<T> add(const std::string &name, Tensor<T> t, const std::string &group) {
        if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
        t.set_requires_grad(true);
        index_[name] = params_.size();
        params_.push_back({name, t, group});
        return t;
    }

    const std::vector<Parameter<T>> &all() const { return params_; }
    std::vector<Parameter<T>> &all() { return params_; }

    const Parameter<T> *find(const std::string &name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }

    /// Number of scalar entries over parameters whose name starts with `prefix`.
    std::int64_t count(const std::string &prefix = "") const {
        std::int64_t n = 0;
        for (const auto &p : params_) {
            if (p.name.compare(0, prefix.size(), prefix) == 0) n += p.tensor.numel();
        }
        return n;
    }

    void zero_grad() {
        for (auto &p : params_) p.tensor.zero_grad();
    }

private:
    std::vector<Parameter<T>> params_;
    std::map<std::string, std::size_t> index_;
};

/// Registers parameters under a name prefix with seeded initialization.
template <typename T>
class ParamBuilder {
public:
    ParamBuilder(ParameterSet<T> &set, std::mt19937_64 &rng, std::string prefix, std::string group)
        : set_(&set), rng_(&rng), prefix_(std::move(prefix)), group_(std::move(group)) {}

    ParamBuilder scope(const std::string &name) const {
        return ParamBuilder(*set_, *rng_, prefix_ + name + ".", group_);
    }
    ParamBuilder with_group(const std::string &group) const { return ParamBuilder(*set_, *rng_, prefix_, group); }

    /// Uniform in [-b, b] with b = gain * sqrt(3 / fan_in) (Kaiming-uniform).
    Tensor<T> kaiming(const std::string &name, Shape shape, std::int64_t fan_in, double gain = 1.0) {
        return uniform(name, std::move(shape), gain * std::sqrt(3.0 / static_cast<double>(fan_in)));
    }
    /// Uniform in [-b, b] with b = sqrt(6 / (fan_in + fan_out)).
    Tensor<T> xavier(const std::string &name, Shape shape, std::int64_t fan_in, std::int64_t fan_out) {
        return uniform(name, std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
    }
    Tensor<T> constant(const std::string &name, Shape shape, T value) {
        return set_->add(prefix_ + name, Tensor<T>::full(std::move(shape), value), group_);
    }
    Tensor<T> uniform(const std::string &name, Shape shape, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
        for (auto &e : v) e = static_cast<T>(dist(*rng_));
        return set_->add(prefix_ + name, Tensor<T>::from(std::move(shape), std::move(v)), group_);
    }

private:
    ParameterSet<T> *set_;
    std::mt19937_64 *rng_;
    std::string prefix_;
    std::string group_;
};

enum class Activation { silu, relu };

template <typename T>
Tensor<T> activate(const Tensor<T> &x, Activation a) {
    return a == Activation::relu ? relu(x) : silu(x);
}

Activation parse_activation(const std::string &s);
std::string to_string(Activation a);

/// y = x W + b on x[N x in].
template <typename T>
struct Linear {
    Tensor<T> w, b;
    Linear() = default;
    Linear(ParamBuilder<T> pb, std::int64_t in, std::int64_t out, bool bias = true) {
        w = pb.kaiming("weight", {in, out}, in);
        if (bias) b = pb.constant("bias", {out}, T(0));
    }
    Tensor<T> operator()(const Tensor<T> &x) const {
        auto y = matmul(x, w);
        return b.defined() ? add(y, b) : y;
    }
};

/// Stride-1 "same" 3D convolution on [C x D x H x W].
template <typename T>
struct Conv3d {
    Tensor<T> w, b;
    Int3 k{1, 1, 1};
    Int3 stride{1, 1, 1};
    Conv3d() = default;
    Conv3d(ParamBuilder<T> pb, std::int64_t in, std::int64_t out, Int3 kernel, bool bias, Int3 st = {1, 1, 1})
        : k(kernel), stride(st) {
        const std::int64_t fan_in = in * kernel[0] * kernel[1] * kernel[2];
        w = pb.kaiming("weight", {out, in, kernel[0], kernel[1], kernel[2]}, fan_in);
        if (bias) b = pb.constant("bias", {out}, T(0));
    }
    Tensor<T> operator()(const Tensor<T> &x) const {
        return conv3d(x, w, b, stride, {k[0] / 2, k[1] / 2, k[2] / 2});
    }
    std::int64_t weight_count() const { return w.numel(); }
};

/// Affine normalization over axis 0 of [C x ...] (per cell, across channels).
template <typename T>
struct ChannelNorm {
    Tensor<T> gamma, beta;
    ChannelNorm() = default;
    ChannelNorm(ParamBuilder<T> pb, std::int64_t c) {
        gamma = pb.constant("gamma", {c}, T(1));
        beta = pb.constant("beta", {c}, T(0));
    }
    Tensor<T> operator()(const Tensor<T> &x) const { return normalize_axis(x, 0, gamma, beta); }
};

/// Layer norm over the last axis of [N x C].
template <typename T>
struct LayerNorm {
    Tensor<T> gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamBuilder<T> pb, std::int64_t c) {
        gamma = pb.constant("gamma", {c}, T(1));
        beta = pb.constant("beta", {c}, T(0));
    }
    Tensor<T> operator()(const Tensor<T> &x) const { return normalize_axis(x, 1, gamma, beta); }
};

/// Multi-head scaled dot-product attention on token matrices [N x C].
template <typename T>
struct MultiHeadAttention {
    Linear<T> q, k, v, o;
    int heads = 1;
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamBuilder<T> pb, std::int64_t c, int num_heads) : heads(num_heads) {
        if (c % num_heads != 0) {
            throw ContractError("attention width " + std::to_string(c) + " not divisible by " + std::to_string(num_heads) + " heads");
        }
        auto xav = [&](const std::string &n) {
            Linear<T> l;
            auto s = pb.scope(n);
            l.w = s.xavier("weight", {c, c}, c, c);
            l.b = s.constant("bias", {c}, T(0));
            return l;
        };
        q = xav("q");
        k = xav("k");
        v = xav("v");
        o = xav("o");
    }

    /// queries [Nq x C] attend to keys/values [Nk x C].
    Tensor<T> operator()(const Tensor<T> &queries, const Tensor<T> &context) const {
        const std::int64_t nq = queries.dim(0), nk = context.dim(0), c = queries.dim(1);
        const std::int64_t dh = c / heads;
        auto split = [&](const Tensor<T> &t, std::int64_t n) { return permute(reshape(t, {n, heads, dh}), {1, 0, 2}); };
        auto Q = split(q(queries), nq);
        auto K = split(k(context), nk);
        auto V = split(v(context), nk);
        auto scores = mul_scalar(bmm(Q, K, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
        auto attn = softmax(scores, 2);
        auto out = reshape(permute(bmm(attn, V), {1, 0, 2}), {nq, c});
        return o(out);
    }
};

/// Two-layer position-wise MLP with hidden width `mult * C`.
template <typename T>
struct FeedForward {
    Linear<T> l1, l2;
    Activation act = Activation::silu;
    FeedForward() = default;
    FeedForward(ParamBuilder<T> pb, std::int64_t c, int mult, Activation a)
        : l1(pb.scope("fc1"), c, c * mult), l2(pb.scope("fc2"), c * mult, c), act(a) {}
    Tensor<T> operator()(const Tensor<T> &x) const { return l2(activate(l1(x), act)); }
};

/// Fixed 2D sinusoidal encoding [C x h x w]; C must be a multiple of 4.
template <typename T>
Tensor<T> sinusoidal_2d(std::int64_t c, std::int64_t h, std::int64_t w) {
    if (c % 4 != 0) throw ContractError("sinusoidal_2d: channels must be a multiple of 4, got " + std::to_string(c));
    const std::int64_t nf = c / 4;
    std::vector<T> v(static_cast<std::size_t>(c * h * w));
    for (std::int64_t f = 0; f < nf; ++f) {
        const double freq = 1.0 / std::pow(10000.0, static_cast<double>(f) / static_cast<double>(nf));
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const std::int64_t p = y * w + x;
                v[static_cast<std::size_t>((4 * f + 0) * h * w + p)] = static_cast<T>(std::sin(x * freq));
                v[static_cast<std::size_t>((4 * f + 1) * h * w + p)] = static_cast<T>(std::cos(x * freq));
                v[static_cast<std::size_t>((4 * f + 2) * h * w + p)] = static_cast<T>(std::sin(y * freq));
                v[static_cast<std::size_t>((4 * f + 3) * h * w + p)] = static_cast<T>(std::cos(y * freq));
            }
    }
    return Tensor<T>::from({c, h, w}, std::move(v));
}

/// Fixed 1D sinusoidal encoding [n x C]; C must be even.
template <typename T>
Tensor<T> sinusoidal_1d(std::int64_t n, std::int64_t c) {
    if (c % 2 != 0) throw ContractError("sinusoidal_1d: channels must be even, got " + std::to_string(c));
    std::vector<T> v(static_cast<std::size_t>(n * c));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t f = 0; f < c / 2; ++f) {
            const double freq = 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(f) / static_cast<double>(c));
            v[static_cast<std::size_t>(i * c + 2 * f)] = static_cast<T>(std::sin(i * freq));
            v[static_cast<std::size_t>(i * c + 2 * f + 1)] = static_cast<T>(std::cos(i * freq));
        }
    return Tensor<T>::from({n, c}, std::move(v));
}

} // namespace frf
