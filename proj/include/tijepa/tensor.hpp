#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tijepa/errors.hpp"

namespace tijepa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // empty == no gradient buffer
    bool requires_grad = false;
};

// Dense row-major tensor with shared storage. Copies alias the same node;
// use clone() for an independent buffer.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<TensorNode<T>>()) {
        for (auto d : shape) {
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
        }
        if (shape_size(shape) != data.size()) {
            throw ShapeError("shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
        }
        for (const T& v : data) {
            if (!std::isfinite(v)) throw NumericalError("non-finite value in tensor data");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static BasicTensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_size(shape);
        return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
        const auto n = shape_size(shape);
        return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static BasicTensor scalar(T value) { return BasicTensor({1}, {value}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rows() const { return node_->shape.at(0); }
    std::size_t cols() const { return node_->shape.at(1); }

    std::span<const T> data() const { return node_->data; }
    // Direct write access; used by initializers, optimizers and loaders.
    std::span<T> mutable_data() { return node_->data; }
    std::vector<T>& storage() { return node_->data; }

    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    T operator[](std::size_t i) const { return node_->data[i]; }
    T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) {
        node_->requires_grad = on;
        if (!on) node_->grad.clear();
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad; }
    void ensure_grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }
    void drop_grad() { node_->grad.clear(); }

    // Deep copy without gradient; requires_grad is preserved.
    BasicTensor clone() const {
        BasicTensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return BasicTensor<U>(node_->shape, std::move(out), node_->requires_grad);
    }

    bool same_storage(const BasicTensor& o) const { return node_ == o.node_; }

    const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

    static BasicTensor from_node(std::shared_ptr<TensorNode<T>> n) {
        BasicTensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

using Tensor = BasicTensor<float>;

// Ordered record of differentiable operations executed in one step.
// Ops are appended in execution order, so replaying the record backwards is a
// valid reverse topological order and each op is visited exactly once.
template <typename T>
class Tape {
public:
    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return ops_.size(); }
    bool empty() const { return ops_.empty(); }
    void clear() { ops_.clear(); }

    // Seeds d(loss)/d(loss) = 1, replays the record in reverse, then clears it.
    void backward(BasicTensor<T>& loss) {
        if (loss.size() != 1) {
            throw NumericalError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
        }
        if (!loss.requires_grad()) {
            throw NumericalError("loss is not connected to any tensor that requires grad");
        }
        loss.ensure_grad();
        loss.mutable_grad()[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        clear();
    }

private:
    std::vector<std::function<void()>> ops_;
};

template <typename T>
Tape<T>*& active_tape() {
    thread_local Tape<T>* tape = nullptr;
    return tape;
}

// Installs a tape as the recording target for the current thread.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
    ~TapeScope() { active_tape<T>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

// Suspends recording: everything computed inside is gradient-free.
template <typename T>
class NoGradScope {
public:
    NoGradScope() : prev_(active_tape<T>()) { active_tape<T>() = nullptr; }
    ~NoGradScope() { active_tape<T>() = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<T>* prev_;
};

// Convenience: backward on the tape currently installed for this thread.
template <typename T>
void backward(BasicTensor<T>& loss) {
    Tape<T>* tape = active_tape<T>();
    if (!tape) throw NumericalError("backward() called with no active tape");
    tape->backward(loss);
}

} // namespace tijepa
