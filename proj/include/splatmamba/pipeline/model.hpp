// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/params.hpp"
#include "splatmamba/model/backbone.hpp"
#include "splatmamba/model/decoder.hpp"
#include "splatmamba/pipeline/config.hpp"
#include "splatmamba/pipeline/image_io.hpp"

#include <random>

namespace sm::pipeline {

/// Backbone plus decoder: image + camera -> N splats.
template <typename T>
struct ReconModel {
    model::BackboneParams<T> backbone;
    model::DecoderParams<T> decoder;

    /// Stable order and names; checkpoints rely on it.
    ad::NamedParams<T> named() const;
};

template <typename T>
ReconModel<T> init_model(const Config& cfg, std::mt19937_64& rng);

/// [H x W x 3] tensor from an RGB image. Throws model::ConfigError if the size differs from the config.
template <typename T>
ad::Tensor<T> image_tensor(const Image& rgb, const Config& cfg);

template <typename T>
model::GaussianSet<T> predict(const ReconModel<T>& m, const Config& cfg, const ad::Tensor<T>& image, const model::Camera& cam);

extern template struct ReconModel<float>;
extern template struct ReconModel<double>;

} // namespace sm::pipeline
