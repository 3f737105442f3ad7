// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/autodiff/optim.hpp"

#include <algorithm>
#include <cmath>

namespace sm::ad {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWConfig config) : params_(std::move(params)) {
    state_.config = config;
    for (const auto& p : params_) {
        state_.first_moment.emplace_back(p.numel(), T(0));
        state_.second_moment.emplace_back(p.numel(), T(0));
    }
}

template <typename T>
void AdamW<T>::step() {
    for (const auto& p : params_) {
        if (p.has_grad() && !std::all_of(p.grad().begin(), p.grad().end(), [](T g) { return std::isfinite(g); })) {
            throw NumericalError("optimizer step: non-finite gradient");
        }
    }
    const auto& cfg = state_.config;
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        auto values = p.mutable_data();
        auto& m = state_.first_moment[k];
        auto& v = state_.second_moment[k];
        const bool has_grad = p.has_grad();
        auto grads = p.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = has_grad ? static_cast<double>(grads[i]) : 0.0;
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            const double updated = static_cast<double>(values[i]) * decay - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
            values[i] = static_cast<T>(updated);
        }
    }
}

template <typename T>
void AdamW<T>::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

template <typename T>
void AdamW<T>::load_state(OptimizerState<T> state) {
    if (state.first_moment.size() != params_.size() || state.second_moment.size() != params_.size()) {
        throw DimensionError("optimizer state: parameter count mismatch");
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (state.first_moment[k].size() != params_[k].numel() || state.second_moment[k].size() != params_[k].numel()) {
            throw DimensionError("optimizer state: moment shape mismatch for parameter " + std::to_string(k));
        }
    }
    state_ = std::move(state);
}

template <typename T>
double grad_norm(const std::vector<Tensor<T>>& params) {
    double acc = 0.0;
    for (const auto& p : params) {
        for (T g : p.grad()) {
            acc += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    return std::sqrt(acc);
}

template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm > max_norm) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto p : params) {
            if (!p.has_grad()) {
                continue;
            }
            for (auto& g : p.mutable_grad()) {
                g *= factor;
            }
        }
    }
    return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(const std::vector<Tensor<float>>&, double);
template double clip_grad_norm(const std::vector<Tensor<double>>&, double);
template double grad_norm(const std::vector<Tensor<float>>&);
template double grad_norm(const std::vector<Tensor<double>>&);

} // namespace sm::ad
