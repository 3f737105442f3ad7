// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/tensor.hpp"

#include <cstdint>
#include <vector>

namespace sm::ad {

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moments are stored per parameter in the parameter's own precision.
template <typename T>
struct OptimizerState {
    AdamWConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
};

/// Adam with decoupled weight decay: p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, AdamWConfig config);

    /// One update from the current grads. Parameters without a grad see a zero gradient.
    /// Throws NumericalError (leaving parameters untouched) if any grad is non-finite.
    void step();
    void zero_grad();

    const std::vector<Tensor<T>>& params() const { return params_; }
    const OptimizerState<T>& state() const { return state_; }
    /// Restore moments and step counter; shapes must match the parameters.
    void load_state(OptimizerState<T> state);
    void set_lr(double lr) { state_.config.lr = lr; }

private:
    std::vector<Tensor<T>> params_;
    OptimizerState<T> state_;
};

/// Scales all grads by max_norm / g when the global L2 norm g exceeds max_norm. Returns g.
template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm);

/// Global L2 norm over all present grads.
template <typename T>
double grad_norm(const std::vector<Tensor<T>>& params);

extern template class AdamW<float>;
extern template class AdamW<double>;

} // namespace sm::ad
