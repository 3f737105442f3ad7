// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace sm::ad {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
std::vector<Tensor<T>> tensors_of(const NamedParams<T>& named) {
    std::vector<Tensor<T>> out;
    out.reserve(named.size());
    for (const auto& [name, t] : named) {
        out.push_back(t);
    }
    return out;
}

// Initializers draw in double so float and double models built from the
// same seed hold the same values up to rounding.

template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) {
        x = static_cast<T>(dist(rng));
    }
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> normal_param(Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) {
        x = static_cast<T>(dist(rng));
    }
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> constant_param(Shape shape, double value) {
    return Tensor<T>::full(std::move(shape), static_cast<T>(value), true);
}

} // namespace sm::ad
