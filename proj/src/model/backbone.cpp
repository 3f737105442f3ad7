// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/model/backbone.hpp"

#include "splatmamba/autodiff/ops.hpp"
#include "splatmamba/util/binary_io.hpp"

#include <cmath>

namespace sm::model {

namespace {

constexpr char kTokenMagic[8] = {'S', 'M', 'T', 'O', 'K', 'E', 'N', '1'};

double fan_in_bound(std::size_t fan_in) {
    return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

// image [H x W x 3] -> [(H/p)(W/p) x p*p*3]
template <typename T>
ad::Tensor<T> patchify(const ad::Tensor<T>& image, std::size_t patch) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw ad::DimensionError("tokenize_image: expected [H x W x 3], got " + ad::shape_str(image.shape()));
    }
    const std::size_t h = image.dim(0), w = image.dim(1);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ConfigError("tokenize_image: " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible by patch size " + std::to_string(patch));
    }
    const std::size_t ph = h / patch, pw = w / patch, width = patch * patch * 3;
    // gather[i] = source index of output element i
    std::vector<std::size_t> gather(ph * pw * width);
    std::size_t i = 0;
    for (std::size_t py = 0; py < ph; ++py) {
        for (std::size_t px = 0; px < pw; ++px) {
            for (std::size_t r = 0; r < patch; ++r) {
                for (std::size_t c = 0; c < patch; ++c) {
                    for (std::size_t ch = 0; ch < 3; ++ch) {
                        gather[i++] = ((py * patch + r) * w + (px * patch + c)) * 3 + ch;
                    }
                }
            }
        }
    }
    std::vector<T> out(gather.size());
    for (std::size_t k = 0; k < gather.size(); ++k) {
        out[k] = image.data()[gather[k]];
    }
    return ad::make_op<T>("patchify", {ph * pw, width}, std::move(out), {image},
                          [gather = std::move(gather)](ad::detail::Node<T>& self) {
                              auto& g = self.inputs[0]->grad_buffer();
                              for (std::size_t k = 0; k < gather.size(); ++k) {
                                  g[gather[k]] += self.grad[k];
                              }
                          });
}

} // namespace

ssm::MambaConfig BackboneConfig::mamba() const {
    ssm::MambaConfig m;
    m.d_model = d_model;
    m.d_state = d_state;
    m.expand = expand;
    m.conv_width = conv_width;
    m.out_proj_scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(depth, 1)));
    return m;
}

template <typename T>
void GambaLayerParams<T>::collect(const std::string& prefix, ad::NamedParams<T>& out) const {
    out.emplace_back(prefix + "camera_proj", camera_proj);
    out.emplace_back(prefix + "token_proj", token_proj);
    block.collect(prefix + "mamba.", out);
}

template <typename T>
void BackboneParams<T>::collect(const std::string& prefix, ad::NamedParams<T>& out) const {
    out.emplace_back(prefix + "patch_weight", patch_weight);
    out.emplace_back(prefix + "patch_bias", patch_bias);
    out.emplace_back(prefix + "camera_w1", camera_w1);
    out.emplace_back(prefix + "camera_b1", camera_b1);
    out.emplace_back(prefix + "camera_w2", camera_w2);
    out.emplace_back(prefix + "camera_b2", camera_b2);
    out.emplace_back(prefix + "embeddings", embeddings);
    out.emplace_back(prefix + "lift_weight", lift_weight);
    out.emplace_back(prefix + "lift_bias", lift_bias);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(prefix + "layer" + std::to_string(i) + ".", out);
    }
    out.emplace_back(prefix + "final_gamma", final_gamma);
    out.emplace_back(prefix + "final_beta", final_beta);
}

template <typename T>
BackboneParams<T> init_backbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
    if (cfg.patch == 0 || cfg.image_size % cfg.patch != 0) {
        throw ConfigError("backbone: image_size must be divisible by patch");
    }
    if (cfg.depth == 0 || cfg.n_gaussians == 0 || cfg.d_model == 0) {
        throw ConfigError("backbone: depth, d_model and n_gaussians must be positive");
    }
    const std::size_t c = cfg.token_channels, d = cfg.d_model, pdim = cfg.patch * cfg.patch * 3;
    BackboneParams<T> p;
    p.patch_weight = ad::uniform_param<T>({c, pdim}, fan_in_bound(pdim), rng);
    p.patch_bias = ad::uniform_param<T>({c}, fan_in_bound(pdim), rng);
    p.camera_w1 = ad::uniform_param<T>({cfg.camera_hidden, kCameraParams}, fan_in_bound(kCameraParams), rng);
    p.camera_b1 = ad::uniform_param<T>({cfg.camera_hidden}, fan_in_bound(kCameraParams), rng);
    p.camera_w2 = ad::uniform_param<T>({kCameraParams, cfg.camera_hidden}, fan_in_bound(cfg.camera_hidden), rng);
    p.camera_b2 = ad::uniform_param<T>({kCameraParams}, fan_in_bound(cfg.camera_hidden), rng);
    p.embeddings = ad::normal_param<T>({cfg.n_gaussians, cfg.embed_dim}, 0.02, rng);
    p.lift_weight = ad::uniform_param<T>({d, cfg.embed_dim}, fan_in_bound(cfg.embed_dim), rng);
    p.lift_bias = ad::uniform_param<T>({d}, fan_in_bound(cfg.embed_dim), rng);
    const auto mcfg = cfg.mamba();
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        GambaLayerParams<T> layer;
        layer.camera_proj = ad::uniform_param<T>({d, kCameraParams}, fan_in_bound(kCameraParams), rng);
        layer.token_proj = ad::uniform_param<T>({d, c}, fan_in_bound(c), rng);
        layer.block = ssm::init_mamba_block<T>(mcfg, rng);
        p.layers.push_back(std::move(layer));
    }
    p.final_gamma = ad::constant_param<T>({d}, 1.0);
    p.final_beta = ad::constant_param<T>({d}, 0.0);
    return p;
}

template <typename T>
ad::Tensor<T> tokenize_image(const BackboneParams<T>& params, const ad::Tensor<T>& image, std::size_t patch) {
    return ad::linear(patchify(image, patch), params.patch_weight, params.patch_bias);
}

template <typename T>
ad::Tensor<T> embed_camera(const BackboneParams<T>& params, const ad::Tensor<T>& raw) {
    if (raw.numel() != kCameraParams) {
        throw ad::DimensionError("embed_camera: expected 16 raw camera values, got " + std::to_string(raw.numel()));
    }
    auto x = ad::reshape(raw, {1, kCameraParams});
    auto h = ad::silu(ad::linear(x, params.camera_w1, params.camera_b1));
    return ad::linear(h, params.camera_w2, params.camera_b2);
}

template <typename T>
ad::Tensor<T> embed_camera(const BackboneParams<T>& params, const Camera& cam) {
    const auto v = cam.conditioning_vector();
    std::vector<T> raw(v.begin(), v.end());
    return embed_camera(params, ad::Tensor<T>({kCameraParams}, std::move(raw)));
}

template <typename T>
ad::Tensor<T> gamba_block_forward(const GambaLayerParams<T>& layer,
                                  const ad::Tensor<T>& camera_embedding,
                                  const ad::Tensor<T>& tokens,
                                  const ad::Tensor<T>& previous) {
    const std::size_t l = tokens.dim(0), n = previous.dim(0);
    auto cam_token = ad::linear(ad::reshape(camera_embedding, {1, kCameraParams}), layer.camera_proj);
    auto image_tokens = ad::linear(tokens, layer.token_proj);
    auto sequence = ad::concat_rows<T>({cam_token, image_tokens, previous});
    auto hidden = ssm::mamba_block(sequence, layer.block);
    return ad::slice_rows(hidden, 1 + l, 1 + l + n);
}

template <typename T>
ad::Tensor<T> backbone_forward(const BackboneParams<T>& params,
                               const ad::Tensor<T>& tokens,
                               const ad::Tensor<T>& camera_embedding) {
    auto o = ad::linear(params.embeddings, params.lift_weight, params.lift_bias);
    for (const auto& layer : params.layers) {
        o = gamba_block_forward(layer, camera_embedding, tokens, o);
    }
    return ad::layer_norm(o, params.final_gamma, params.final_beta);
}

template <typename T>
ad::Tensor<T> backbone_forward(const BackboneParams<T>& params,
                               const BackboneConfig& cfg,
                               const ad::Tensor<T>& image,
                               const Camera& cam) {
    return backbone_forward(params, tokenize_image(params, image, cfg.patch), embed_camera(params, cam));
}

void write_token_file(const std::filesystem::path& path, const ad::Tensor<float>& tokens) {
    if (tokens.rank() != 2) {
        throw ad::DimensionError("token file: expected [L x C], got " + ad::shape_str(tokens.shape()));
    }
    util::ByteWriter w;
    w.magic(kTokenMagic, 8);
    w.u32(static_cast<std::uint32_t>(tokens.dim(0)));
    w.u32(static_cast<std::uint32_t>(tokens.dim(1)));
    w.array(tokens.data());
    w.save(path);
}

ad::Tensor<float> read_token_file(const std::filesystem::path& path) {
    auto r = util::ByteReader::load(path);
    r.expect_magic(kTokenMagic, 8);
    const std::size_t l = r.u32();
    const std::size_t c = r.u32();
    auto values = r.array<float>(l * c);
    if (!r.at_end()) {
        r.fail("trailing bytes");
    }
    return ad::Tensor<float>({l, c}, std::move(values));
}

#define SM_INSTANTIATE_BACKBONE(T)                                                                                   \
    template struct GambaLayerParams<T>;                                                                             \
    template struct BackboneParams<T>;                                                                               \
    template BackboneParams<T> init_backbone(const BackboneConfig&, std::mt19937_64&);                               \
    template ad::Tensor<T> tokenize_image(const BackboneParams<T>&, const ad::Tensor<T>&, std::size_t);              \
    template ad::Tensor<T> embed_camera(const BackboneParams<T>&, const Camera&);                                    \
    template ad::Tensor<T> embed_camera(const BackboneParams<T>&, const ad::Tensor<T>&);                             \
    template ad::Tensor<T> gamba_block_forward(const GambaLayerParams<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&, \
                                               const ad::Tensor<T>&);                                                \
    template ad::Tensor<T> backbone_forward(const BackboneParams<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&);   \
    template ad::Tensor<T> backbone_forward(const BackboneParams<T>&, const BackboneConfig&, const ad::Tensor<T>&,    \
                                            const Camera&);

SM_INSTANTIATE_BACKBONE(float)
SM_INSTANTIATE_BACKBONE(double)

#undef SM_INSTANTIATE_BACKBONE

} // namespace sm::model
