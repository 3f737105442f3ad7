// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/params.hpp"
#include "splatmamba/autodiff/tensor.hpp"
#include "splatmamba/model/gaussians.hpp"

#include <random>
#include <vector>

namespace sm::model {

struct DecoderConfig {
    std::size_t d_model = 128;
    std::size_t hidden = 64;
    std::size_t layers = 10;  // linear layers in the shared MLP, the first one projects d_model -> hidden
    std::size_t bins = 32;    // K, per position axis
    double scale_max = kDefaultScaleMax;
    // Head bias initialisation.
    double init_opacity = 0.1;
    double init_scale = 0.03;
    /// Std of the position-logit weights; sets the initial spread of splat centres.
    double position_logit_std = 0.5;

    /// 3K position logits + opacity + 12 SH + 3 log-scales + 4 quaternion.
    std::size_t head_width() const { return 3 * bins + 1 + kShCoeffs + 3 + 4; }
};

template <typename T>
struct DecoderParams {
    std::vector<ad::Tensor<T>> weights; // [hidden x in]
    std::vector<ad::Tensor<T>> biases;  // [hidden]
    ad::Tensor<T> head_weight;          // [head_width x hidden]
    ad::Tensor<T> head_bias;            // [head_width]

    void collect(const std::string& prefix, ad::NamedParams<T>& out) const;
};

template <typename T>
DecoderParams<T> init_decoder(const DecoderConfig& cfg, std::mt19937_64& rng);

/// Softmax over the last axis of logits [M x K] against K bin centres uniformly spaced
/// in [-1, 1]; returns the expectation [M x 1].
template <typename T>
ad::Tensor<T> bin_expectation(const ad::Tensor<T>& logits);

/// Bin centres -1 + 2k/(K-1).
std::vector<double> bin_centers(std::size_t bins);

/// Shared per-token MLP + heads, mapped into valid ranges:
/// positions by bin expectation, opacity by sigmoid, SH as-is,
/// scales by exp clamped at scale_max, rotations normalized (zero -> identity).
template <typename T>
GaussianSet<T> decode(const DecoderParams<T>& params, const DecoderConfig& cfg, const ad::Tensor<T>& hidden);

} // namespace sm::model
