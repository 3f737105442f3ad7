// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sm::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an API is called in a state it does not support (e.g. backward on a non-scalar).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised when a computation produces or would produce a non-finite value.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until something accumulates into it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the grads of `inputs`.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }

    std::vector<T>& grad_buffer() {
        if (grad.empty()) {
            grad.assign(value.size(), T(0));
        }
        return grad;
    }
};

} // namespace detail

/// Dense row-major array that participates in a reverse-mode tape.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// The tape is rebuilt every forward pass; a graph lives as long as some
/// handle to its output does.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor scalar(T v, bool requires_grad = false);
    static Tensor full(Shape shape, T v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    std::span<T> mutable_data() { return node_->value; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag);

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    /// Copy of the values, cut from the graph.
    Tensor detach() const;
    bool all_finite() const;

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

/// Record the result of a forward computation on the tape.
///
/// When no input requires grad the result is a constant and `backward` is dropped.
template <typename T>
Tensor<T> make_op(const char* name,
                  Shape shape,
                  std::vector<T> value,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(detail::Node<T>&)> backward);

/// Populate grads of every requires_grad tensor reachable from `loss`.
///
/// Leaf grads accumulate across calls; intermediate grads are reset per call,
/// so running backward twice on one graph doubles every leaf grad exactly.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace sm::ad
