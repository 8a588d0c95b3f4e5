// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/errors.hpp"
#include "frf/memory.hpp"

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace frf {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape &shape);
std::string shape_str(const Shape &shape);

/// Gradient recording switch. Thread-local; enabled by default.
class GradMode {
public:
    static bool enabled() noexcept;
    static void set_enabled(bool on) noexcept;
};

/// RAII scope with graph recording disabled.
class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
    bool previous_;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::shared_ptr<Buffer<T>> data;
    std::unique_ptr<Buffer<T>> grad;
    bool requires_grad = false;

    // Graph edge: parents and the closure that pushes this->grad into them.
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl &)> backward_fn;

    Buffer<T> &ensure_grad();
};

/// Dense row-major N-d array with optional reverse-mode gradient tracking.
///
/// Tensors are reference-counted handles: copying a Tensor aliases the same
/// storage. `clone()` makes a deep copy; `detach()` aliases the data but drops
/// the graph edge.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor from_buffer(Shape shape, Buffer<T> values, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(impl_); }
    const Shape &shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    /// Size of axis `axis`; negative values count from the end.
    std::int64_t dim(int axis) const;
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data->size()); }

    std::span<T> data() { return {impl_->data->data(), impl_->data->size()}; }
    std::span<const T> data() const { return {impl_->data->data(), impl_->data->size()}; }
    T *ptr() { return impl_->data->data(); }
    const T *ptr() const { return impl_->data->data(); }

    /// Value of a single-element tensor.
    T item() const;
    /// Element at a multi-index (bounds-checked).
    T at(std::initializer_list<std::int64_t> index) const;
    T &at(std::initializer_list<std::int64_t> index);

    bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
    Tensor &set_requires_grad(bool on);
    bool has_grad() const noexcept { return impl_ && impl_->grad; }
    /// Gradient buffer; zeros if backward never reached this tensor.
    std::vector<T> grad() const;
    std::span<T> grad_span();
    void zero_grad();

    Tensor detach() const;
    Tensor clone() const;

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// reachable tensor that requires grad.
    void backward() const;

    TensorImpl<T> *impl() const noexcept { return impl_.get(); }
    const std::shared_ptr<TensorImpl<T>> &impl_ptr() const noexcept { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {

/// True if any input requires grad and recording is enabled.
template <typename T>
bool needs_graph(std::initializer_list<const Tensor<T> *> inputs);
template <typename T>
bool needs_graph(const std::vector<Tensor<T>> &inputs);

/// Wraps `values` as an op result. When `record` is set the result is
/// attached to `parents` and `backward` will be called with the result impl
/// (whose grad is populated) during the reverse sweep.
template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> values, bool record,
                      std::vector<Tensor<T>> parents,
                      std::function<void(TensorImpl<T> &)> backward);

/// Gradient buffer of a parent, allocating zeros on first use.
template <typename T>
inline Buffer<T> &grad_of(const std::shared_ptr<TensorImpl<T>> &p) {
    return p->ensure_grad();
}

} // namespace detail

} // namespace frf
