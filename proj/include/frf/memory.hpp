// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <new>
#include <vector>

namespace frf {

/// Process-wide accounting of tensor buffer bytes.
///
/// Every tensor data and gradient buffer is allocated through
/// TrackingAllocator, so `current()` is the number of live tensor bytes and
/// `peak()` the high-water mark since the last `reset_peak()`. When a cap is
/// set, an allocation that would push `current()` above it throws
/// MemoryCapExceeded before any memory is requested from the system.
class MemoryMeter {
public:
    static MemoryMeter &instance();

    void on_allocate(std::size_t bytes);
    void on_deallocate(std::size_t bytes) noexcept;

    std::size_t current() const noexcept { return current_.load(std::memory_order_relaxed); }
    std::size_t peak() const noexcept { return peak_.load(std::memory_order_relaxed); }
    void reset_peak() noexcept { peak_.store(current(), std::memory_order_relaxed); }

    /// 0 disables the cap.
    void set_cap(std::size_t bytes) noexcept { cap_.store(bytes, std::memory_order_relaxed); }
    std::size_t cap() const noexcept { return cap_.load(std::memory_order_relaxed); }

private:
    std::atomic<std::size_t> current_{0};
    std::atomic<std::size_t> peak_{0};
    std::atomic<std::size_t> cap_{0};
};

/// Installs a byte cap for the lifetime of the guard and resets the peak.
class MemoryCapGuard {
public:
    explicit MemoryCapGuard(std::size_t cap_bytes);
    ~MemoryCapGuard();
    MemoryCapGuard(const MemoryCapGuard &) = delete;
    MemoryCapGuard &operator=(const MemoryCapGuard &) = delete;

private:
    std::size_t previous_;
};

template <typename T>
struct TrackingAllocator {
    using value_type = T;

    TrackingAllocator() noexcept = default;
    template <typename U>
    TrackingAllocator(const TrackingAllocator<U> &) noexcept {}

    T *allocate(std::size_t n) {
        MemoryMeter::instance().on_allocate(n * sizeof(T));
        try {
            return static_cast<T *>(::operator new(n * sizeof(T)));
        } catch (...) {
            MemoryMeter::instance().on_deallocate(n * sizeof(T));
            throw;
        }
    }
    void deallocate(T *p, std::size_t n) noexcept {
        ::operator delete(p);
        MemoryMeter::instance().on_deallocate(n * sizeof(T));
    }

    template <typename U>
    bool operator==(const TrackingAllocator<U> &) const noexcept { return true; }
    template <typename U>
    bool operator!=(const TrackingAllocator<U> &) const noexcept { return false; }
};

template <typename T>
using Buffer = std::vector<T, TrackingAllocator<T>>;

} // namespace frf
