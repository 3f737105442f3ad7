// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/model/decoder.hpp"

#include "splatmamba/autodiff/ops.hpp"
#include "splatmamba/model/backbone.hpp"

#include <cmath>

namespace sm::model {

std::vector<double> bin_centers(std::size_t bins) {
    std::vector<double> c(bins);
    for (std::size_t k = 0; k < bins; ++k) {
        c[k] = -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(bins - 1);
    }
    return c;
}

template <typename T>
void DecoderParams<T>::collect(const std::string& prefix, ad::NamedParams<T>& out) const {
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.emplace_back(prefix + "mlp" + std::to_string(i) + ".weight", weights[i]);
        out.emplace_back(prefix + "mlp" + std::to_string(i) + ".bias", biases[i]);
    }
    out.emplace_back(prefix + "head.weight", head_weight);
    out.emplace_back(prefix + "head.bias", head_bias);
}

template <typename T>
DecoderParams<T> init_decoder(const DecoderConfig& cfg, std::mt19937_64& rng) {
    if (cfg.layers == 0 || cfg.bins < 2) {
        throw ConfigError("decoder: need at least one layer and two bins");
    }
    DecoderParams<T> p;
    std::size_t in = cfg.d_model;
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        // He-style bound keeps activations alive through the SiLU stack.
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        p.weights.push_back(ad::uniform_param<T>({cfg.hidden, in}, bound, rng));
        p.biases.push_back(ad::constant_param<T>({cfg.hidden}, 0.0));
        in = cfg.hidden;
    }
    const std::size_t width = cfg.head_width();
    const std::size_t k3 = 3 * cfg.bins;
    const double h = static_cast<double>(cfg.hidden);
    std::normal_distribution<double> pos_dist(0.0, cfg.position_logit_std / std::sqrt(h));
    std::normal_distribution<double> other_dist(0.0, 0.1 / std::sqrt(h));
    std::vector<T> w(width * cfg.hidden);
    for (std::size_t r = 0; r < width; ++r) {
        for (std::size_t c = 0; c < cfg.hidden; ++c) {
            w[r * cfg.hidden + c] = static_cast<T>(r < k3 ? pos_dist(rng) : other_dist(rng));
        }
    }
    p.head_weight = ad::Tensor<T>({width, cfg.hidden}, std::move(w), true);

    std::vector<T> b(width, T(0));
    b[k3] = static_cast<T>(std::log(cfg.init_opacity / (1.0 - cfg.init_opacity)));
    const std::size_t scale0 = k3 + 1 + kShCoeffs;
    for (std::size_t i = 0; i < 3; ++i) {
        b[scale0 + i] = static_cast<T>(std::log(cfg.init_scale));
    }
    b[scale0 + 3] = T(1); // quaternion w
    p.head_bias = ad::Tensor<T>({width}, std::move(b), true);
    return p;
}

template <typename T>
ad::Tensor<T> bin_expectation(const ad::Tensor<T>& logits) {
    if (logits.rank() != 2 || logits.dim(1) < 2) {
        throw ad::DimensionError("bin_expectation: expected [M x K] with K >= 2, got " + ad::shape_str(logits.shape()));
    }
    const std::size_t k = logits.dim(1);
    const auto centers = bin_centers(k);
    ad::Tensor<T> c({k, 1}, std::vector<T>(centers.begin(), centers.end()));
    return ad::matmul(ad::softmax(logits, 1), c);
}

template <typename T>
GaussianSet<T> decode(const DecoderParams<T>& params, const DecoderConfig& cfg, const ad::Tensor<T>& hidden) {
    if (hidden.rank() != 2 || hidden.dim(1) != cfg.d_model) {
        throw ad::DimensionError("decode: expected [N x " + std::to_string(cfg.d_model) + "], got " +
                                 ad::shape_str(hidden.shape()));
    }
    const std::size_t n = hidden.dim(0), k3 = 3 * cfg.bins;
    auto x = hidden;
    for (std::size_t i = 0; i < params.weights.size(); ++i) {
        x = ad::silu(ad::linear(x, params.weights[i], params.biases[i]));
    }
    auto head = ad::linear(x, params.head_weight, params.head_bias);

    GaussianSet<T> out;
    auto logits = ad::reshape(ad::slice_cols(head, 0, k3), {3 * n, cfg.bins});
    out.positions = ad::reshape(bin_expectation(logits), {n, 3});
    out.opacity = ad::sigmoid(ad::slice_cols(head, k3, k3 + 1));
    out.sh = ad::slice_cols(head, k3 + 1, k3 + 1 + kShCoeffs);
    const std::size_t s0 = k3 + 1 + kShCoeffs;
    out.scales = ad::exp(ad::clamp_max(ad::slice_cols(head, s0, s0 + 3), static_cast<T>(std::log(cfg.scale_max))));
    out.rotations = ad::normalize_rows(ad::slice_cols(head, s0 + 3, s0 + 7), std::vector<T>{1, 0, 0, 0});
    return out;
}

template struct DecoderParams<float>;
template struct DecoderParams<double>;
template DecoderParams<float> init_decoder(const DecoderConfig&, std::mt19937_64&);
template DecoderParams<double> init_decoder(const DecoderConfig&, std::mt19937_64&);
template ad::Tensor<float> bin_expectation(const ad::Tensor<float>&);
template ad::Tensor<double> bin_expectation(const ad::Tensor<double>&);
template GaussianSet<float> decode(const DecoderParams<float>&, const DecoderConfig&, const ad::Tensor<float>&);
template GaussianSet<double> decode(const DecoderParams<double>&, const DecoderConfig&, const ad::Tensor<double>&);

} // namespace sm::model
