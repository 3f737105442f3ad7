// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/params.hpp"
#include "splatmamba/autodiff/tensor.hpp"
#include "splatmamba/model/camera.hpp"
#include "splatmamba/ssm/ssm.hpp"

#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

namespace sm::model {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kCameraParams = 16;

struct BackboneConfig {
    std::size_t image_size = 64;     // square input, H = W
    std::size_t patch = 8;
    std::size_t token_channels = 64; // C
    std::size_t depth = 4;
    std::size_t d_model = 128;       // D
    std::size_t n_gaussians = 1024;  // N
    std::size_t embed_dim = 512;     // width of the learnable 3DGS embeddings
    std::size_t camera_hidden = 64;
    std::size_t d_state = 16;
    std::size_t conv_width = 4;
    std::size_t expand = 2;

    std::size_t image_tokens() const { return (image_size / patch) * (image_size / patch); }
    ssm::MambaConfig mamba() const;
};

/// One conditioning layer: projections for the prepended camera / image tokens plus its Mamba block.
template <typename T>
struct GambaLayerParams {
    ad::Tensor<T> camera_proj; // [D x 16]
    ad::Tensor<T> token_proj;  // [D x C]
    ssm::MambaBlockParams<T> block;

    void collect(const std::string& prefix, ad::NamedParams<T>& out) const;
};

template <typename T>
struct BackboneParams {
    ad::Tensor<T> patch_weight; // [C x patch*patch*3]
    ad::Tensor<T> patch_bias;   // [C]
    ad::Tensor<T> camera_w1;    // [hidden x 16]
    ad::Tensor<T> camera_b1;    // [hidden]
    ad::Tensor<T> camera_w2;    // [16 x hidden]
    ad::Tensor<T> camera_b2;    // [16]
    ad::Tensor<T> embeddings;   // [N x embed_dim]
    ad::Tensor<T> lift_weight;  // [D x embed_dim]
    ad::Tensor<T> lift_bias;    // [D]
    std::vector<GambaLayerParams<T>> layers;
    ad::Tensor<T> final_gamma;  // [D]
    ad::Tensor<T> final_beta;   // [D]

    void collect(const std::string& prefix, ad::NamedParams<T>& out) const;
};

template <typename T>
BackboneParams<T> init_backbone(const BackboneConfig& cfg, std::mt19937_64& rng);

/// Learned patch embedder: image [H x W x 3] in [0, 1] -> tokens [(H/p)(W/p) x C].
/// Patches are taken row-major; each patch flattens as (row, col, channel).
template <typename T>
ad::Tensor<T> tokenize_image(const BackboneParams<T>& params, const ad::Tensor<T>& image, std::size_t patch);

/// Camera MLP: the 16 raw values (intrinsics normalized by image size) -> T [1 x 16].
template <typename T>
ad::Tensor<T> embed_camera(const BackboneParams<T>& params, const Camera& cam);

/// Same, from an explicit conditioning vector (lets gradients flow into the raw camera values).
template <typename T>
ad::Tensor<T> embed_camera(const BackboneParams<T>& params, const ad::Tensor<T>& raw);

/// Runs [P_c T ; P_x X ; O_prev] through the layer's Mamba block and drops the first 1 + L rows.
template <typename T>
ad::Tensor<T> gamba_block_forward(const GambaLayerParams<T>& layer,
                                  const ad::Tensor<T>& camera_embedding,
                                  const ad::Tensor<T>& tokens,
                                  const ad::Tensor<T>& previous);

/// Hidden features [N x D] for the 3DGS tokens given image tokens and a camera embedding.
template <typename T>
ad::Tensor<T> backbone_forward(const BackboneParams<T>& params,
                               const ad::Tensor<T>& tokens,
                               const ad::Tensor<T>& camera_embedding);

/// Full path from pixels: tokenize, embed camera, run the stack.
template <typename T>
ad::Tensor<T> backbone_forward(const BackboneParams<T>& params,
                               const BackboneConfig& cfg,
                               const ad::Tensor<T>& image,
                               const Camera& cam);

/// External token source: 8-byte magic "SMTOKEN1", uint32 L, uint32 C, then L x C float32.
void write_token_file(const std::filesystem::path& path, const ad::Tensor<float>& tokens);
ad::Tensor<float> read_token_file(const std::filesystem::path& path);

} // namespace sm::model
