// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/pipeline/model.hpp"

namespace sm::pipeline {

template <typename T>
ad::NamedParams<T> ReconModel<T>::named() const {
    ad::NamedParams<T> out;
    backbone.collect("backbone.", out);
    decoder.collect("decoder.", out);
    return out;
}

template <typename T>
ReconModel<T> init_model(const Config& cfg, std::mt19937_64& rng) {
    cfg.validate();
    ReconModel<T> m;
    m.backbone = model::init_backbone<T>(cfg.backbone(), rng);
    m.decoder = model::init_decoder<T>(cfg.decoder(), rng);
    return m;
}

template <typename T>
ad::Tensor<T> image_tensor(const Image& rgb, const Config& cfg) {
    if (rgb.channels != 3) throw std::invalid_argument("image_tensor expects RGB");
    if (static_cast<std::size_t>(rgb.width) != cfg.image_size || static_cast<std::size_t>(rgb.height) != cfg.image_size) {
        throw model::ConfigError("image is " + std::to_string(rgb.width) + "x" + std::to_string(rgb.height) +
                                 " but the model expects " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
    }
    return ad::Tensor<T>({cfg.image_size, cfg.image_size, 3}, std::vector<T>(rgb.data.begin(), rgb.data.end()));
}

template <typename T>
model::GaussianSet<T> predict(const ReconModel<T>& m, const Config& cfg, const ad::Tensor<T>& image, const model::Camera& cam) {
    const auto hidden = model::backbone_forward(m.backbone, cfg.backbone(), image, cam);
    return model::decode(m.decoder, cfg.decoder(), hidden);
}

#define SM_INSTANTIATE_PIPELINE_MODEL(T)                                                                  \
    template struct ReconModel<T>;                                                                        \
    template ReconModel<T> init_model<T>(const Config&, std::mt19937_64&);                                \
    template ad::Tensor<T> image_tensor<T>(const Image&, const Config&);                                  \
    template model::GaussianSet<T> predict<T>(const ReconModel<T>&, const Config&, const ad::Tensor<T>&, \
                                              const model::Camera&);

SM_INSTANTIATE_PIPELINE_MODEL(float)
SM_INSTANTIATE_PIPELINE_MODEL(double)

} // namespace sm::pipeline
