// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sm::ad {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<detail::Node<T>>()) {
    node_->value.assign(shape_numel(shape), T(0));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
    if (values.size() != shape_numel(shape)) {
        throw DimensionError("tensor: " + std::to_string(values.size()) + " values for shape " +
                             shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    }
    return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw UsageError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->value[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
    if (!node_->is_leaf()) {
        throw UsageError("requires_grad can only be changed on leaf tensors");
    }
    node_->requires_grad = flag;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(node_->shape, node_->value, false);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    return std::all_of(node_->value.begin(), node_->value.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> make_op(const char* name,
                  Shape shape,
                  std::vector<T> value,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(detail::Node<T>&)> backward) {
    auto node = std::make_shared<detail::Node<T>>();
    if (value.size() != shape_numel(shape)) {
        throw DimensionError(std::string(name) + ": produced " + std::to_string(value.size()) +
                             " values for shape " + shape_str(shape));
    }
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = name;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
    if (any) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& t : inputs) {
            node->inputs.push_back(t.node());
        }
        node->backward = std::move(backward);
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward() requires a scalar loss");
    }
    if (!loss.requires_grad()) {
        return;
    }

    // Iterative post-order DFS gives a topological order (inputs before users).
    using NodeT = detail::Node<T>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> visited;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            NodeT* child = node->inputs[next++].get();
            if (child && child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (NodeT* node : order) {
        if (!node->is_leaf()) {
            node->grad.assign(node->value.size(), T(0));
        }
    }
    loss.node()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) {
            (*it)->backward(**it);
        }
    }
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_op(const char*, Shape, std::vector<float>, std::vector<Tensor<float>>,
                               std::function<void(detail::Node<float>&)>);
template Tensor<double> make_op(const char*, Shape, std::vector<double>, std::vector<Tensor<double>>,
                                std::function<void(detail::Node<double>&)>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

} // namespace sm::ad
