#pragma once
#include <cstddef>
#include <utility>
#include <vector>

#include "mpdrive/errors.hpp"
#include "mpdrive/rng.hpp"

namespace mpdrive {

// Fixed-capacity experience store; once full, each push overwrites the
// oldest entry.
template <typename T>
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw ContractViolation("replay capacity must be positive");
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }

    void push(T item) {
        if (items_.size() < capacity_) {
            items_.push_back(std::move(item));
        } else {
            items_[head_] = std::move(item);
            head_ = (head_ + 1) % capacity_;
        }
    }

    // Storage order, not insertion order once the buffer has wrapped.
    const T& at(std::size_t i) const { return items_[i]; }

    // Uniform sample with replacement.
    std::vector<T> sample(std::size_t n, Rng& rng) const {
        if (items_.empty()) throw InsufficientData("cannot sample from an empty replay buffer");
        std::vector<T> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            out.push_back(items_[static_cast<std::size_t>(
                rng.uniform_int(static_cast<int>(items_.size())))]);
        return out;
    }

private:
    std::size_t capacity_;
    std::size_t head_ = 0; // next slot to overwrite once full
    std::vector<T> items_;
};

} // namespace mpdrive
