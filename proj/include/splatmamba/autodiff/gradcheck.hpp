// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace sm::ad {

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradcheckOptions {
    double step = 1e-5;
    /// Denominator floor: err = |a - n| / max(|a|, |n|, floor).
    double floor = 1e-6;
    /// Differences below noise_ulps * eps * max(|loss|, 1) / step are finite-difference
    /// round-off and count as zero error.
    double noise_ulps = 64.0;
    /// Entries checked per parameter; larger tensors are subsampled deterministically.
    std::size_t max_entries = 64;
    std::uint64_t seed = 0;
};

/// Compares reverse-mode grads of a scalar loss against central finite differences.
///
/// `loss_fn` must rebuild the graph from the current parameter values on every call.
template <typename F>
GradcheckResult gradcheck(F&& loss_fn, std::vector<Tensor<double>> params, const GradcheckOptions& opt = {}) {
    for (auto& p : params) {
        p.zero_grad();
    }
    double loss0 = 0.0;
    {
        Tensor<double> loss = loss_fn();
        loss0 = loss.item();
        backward(loss);
    }
    const double noise =
        opt.noise_ulps * std::numeric_limits<double>::epsilon() * std::max(std::abs(loss0), 1.0) / opt.step;
    std::vector<std::vector<double>> analytic;
    for (const auto& p : params) {
        analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                           : std::vector<double>(p.numel(), 0.0));
    }

    GradcheckResult result;
    std::mt19937_64 rng(opt.seed);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].mutable_data();
        std::vector<std::size_t> idx(values.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (idx.size() > opt.max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opt.max_entries);
            std::sort(idx.begin(), idx.end());
        }
        for (std::size_t i : idx) {
            const double orig = values[i];
            values[i] = orig + opt.step;
            const double up = loss_fn().item();
            values[i] = orig - opt.step;
            const double down = loss_fn().item();
            values[i] = orig;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double a = analytic[k][i];
            const double diff = std::abs(a - numeric);
            const double err = diff <= noise ? 0.0 : diff / std::max({std::abs(a), std::abs(numeric), opt.floor});
            ++result.checked;
            if (err > result.max_rel_error || !std::isfinite(err)) {
                result.max_rel_error = std::isfinite(err) ? err : INFINITY;
                result.worst_param = k;
                result.worst_index = i;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace sm::ad
