// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace frf {

MemoryMeter &MemoryMeter::instance() {
    static MemoryMeter meter;
    return meter;
}

void MemoryMeter::on_allocate(std::size_t bytes) {
    const std::size_t cap = cap_.load(std::memory_order_relaxed);
    const std::size_t now = current_.load(std::memory_order_relaxed);
    if (cap != 0 && now + bytes > cap) {
        std::ostringstream msg;
        msg << "tensor allocation of " << bytes << " bytes would exceed the memory cap of " << cap
            << " bytes (" << now << " bytes live)";
        throw MemoryCapExceeded(msg.str());
    }
    const std::size_t after = current_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t seen = peak_.load(std::memory_order_relaxed);
    while (after > seen && !peak_.compare_exchange_weak(seen, after, std::memory_order_relaxed)) {
    }
}

void MemoryMeter::on_deallocate(std::size_t bytes) noexcept {
    current_.fetch_sub(bytes, std::memory_order_relaxed);
}

MemoryCapGuard::MemoryCapGuard(std::size_t cap_bytes) : previous_(MemoryMeter::instance().cap()) {
    MemoryMeter::instance().set_cap(cap_bytes);
    MemoryMeter::instance().reset_peak();
}

MemoryCapGuard::~MemoryCapGuard() { MemoryMeter::instance().set_cap(previous_); }

std::int64_t numel_of(const Shape &shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape &shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() noexcept { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) noexcept { grad_mode_enabled = on; }

template <typename T>
Buffer<T> &TensorImpl<T>::ensure_grad() {
    if (!grad) grad = std::make_unique<Buffer<T>>(data->size(), T(0));
    return *grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = numel_of(shape);
    return from_buffer(std::move(shape), Buffer<T>(static_cast<std::size_t>(n), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    return from_buffer(std::move(shape), Buffer<T>(values.begin(), values.end()), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_buffer(Shape shape, Buffer<T> values, bool requires_grad) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::make_shared<Buffer<T>>(std::move(values));
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return full({}, value, requires_grad);
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
    const int r = rank();
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape()));
    }
    return impl_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return (*impl_->data)[0];
}

namespace {
std::size_t flat_index(const Shape &shape, std::initializer_list<std::int64_t> index) {
    if (index.size() != shape.size()) {
        throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " +
                             shape_str(shape));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i < 0 || i >= shape[axis]) {
            throw DimensionError("index " + std::to_string(i) + " out of range on axis " +
                                 std::to_string(axis) + " of " + shape_str(shape));
        }
        flat = flat * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return flat;
}
} // namespace

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
    return (*impl_->data)[flat_index(shape(), index)];
}

template <typename T>
T &Tensor<T>::at(std::initializer_list<std::int64_t> index) {
    return (*impl_->data)[flat_index(shape(), index)];
}

template <typename T>
Tensor<T> &Tensor<T>::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
    if (!impl_->grad) return std::vector<T>(impl_->data->size(), T(0));
    return std::vector<T>(impl_->grad->begin(), impl_->grad->end());
}

template <typename T>
std::span<T> Tensor<T>::grad_span() {
    auto &g = impl_->ensure_grad();
    return {g.data(), g.size()};
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return from_buffer(shape(), Buffer<T>(*impl_->data), false);
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!impl_->requires_grad) return;

    // Iterative post-order DFS gives a topological order; reverse it.
    std::vector<TensorImpl<T> *> order;
    std::unordered_set<TensorImpl<T> *> visited;
    std::vector<std::pair<TensorImpl<T> *, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl<T> *parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    impl_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T> *node = *it;
        if (node->backward_fn && node->grad) node->backward_fn(*node);
    }
}

namespace detail {

template <typename T>
bool needs_graph(std::initializer_list<const Tensor<T> *> inputs) {
    if (!GradMode::enabled()) return false;
    for (const auto *t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
bool needs_graph(const std::vector<Tensor<T>> &inputs) {
    if (!GradMode::enabled()) return false;
    for (const auto &t : inputs) {
        if (t.defined() && t.requires_grad()) return true;
    }
    return false;
}

template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> values, bool record, std::vector<Tensor<T>> parents,
                      std::function<void(TensorImpl<T> &)> backward) {
    auto out = Tensor<T>::from_buffer(std::move(shape), std::move(values), false);
    if (record) {
        auto *impl = out.impl();
        impl->requires_grad = true;
        impl->parents.reserve(parents.size());
        for (auto &p : parents) impl->parents.push_back(p.impl_ptr());
        impl->backward_fn = std::move(backward);
    }
    return out;
}

template bool needs_graph<float>(std::initializer_list<const Tensor<float> *>);
template bool needs_graph<double>(std::initializer_list<const Tensor<double> *>);
template bool needs_graph<float>(const std::vector<Tensor<float>> &);
template bool needs_graph<double>(const std::vector<Tensor<double>> &);
template Tensor<float> make_result<float>(Shape, Buffer<float>, bool, std::vector<Tensor<float>>,
                                          std::function<void(TensorImpl<float> &)>);
template Tensor<double> make_result<double>(Shape, Buffer<double>, bool,
                                            std::vector<Tensor<double>>,
                                            std::function<void(TensorImpl<double> &)>);

} // namespace detail

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template class Tensor<float>;
template class Tensor<double>;

} // namespace frf
