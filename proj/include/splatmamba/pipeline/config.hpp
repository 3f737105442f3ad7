// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/optim.hpp"
#include "splatmamba/loss/losses.hpp"
#include "splatmamba/model/backbone.hpp"
#include "splatmamba/model/decoder.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sm::pipeline {

/// Every knob of a run. Defaults are the desk-scale toy setup.
struct Config {
    // model
    std::size_t image_size = 64;
    std::size_t patch = 8;
    std::size_t token_channels = 64;
    std::size_t depth = 4;
    std::size_t d_model = 128;
    std::size_t n_gaussians = 1024;
    std::size_t embed_dim = 512;
    std::size_t camera_hidden = 64;
    std::size_t d_state = 16;
    std::size_t conv_width = 4;
    std::size_t expand = 2;
    std::size_t decoder_hidden = 64;
    std::size_t decoder_layers = 10;
    std::size_t bins = 32;
    double scale_max = model::kDefaultScaleMax;
    double init_opacity = 0.1;
    double init_scale = 0.03;
    double position_logit_std = 0.5;

    // optimisation
    std::size_t steps = 2000;
    double lr = 1e-4;
    double lr_final = -1.0; // < 0: constant lr; otherwise cosine decay to this value
    std::size_t lr_warmup = 0;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double grad_clip = 1.0;
    std::size_t views_per_step = 6; // reference view included
    std::size_t train_views = 16;   // first views of the object used for supervision; the rest are held out
    double lambda_mask = 0.01;
    double lambda_lpips = 0.1;
    double lambda_dist = 1.0;
    std::size_t dist_warmup = 1000;
    std::uint64_t seed = 0;
    std::size_t object = 0;

    // logging
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 500; // 0 disables periodic checkpoints
    std::size_t eval_every = 0;         // 0 disables periodic training-view PSNR evaluation

    // paths
    std::string data_dir = "data";
    std::string run_dir = "run";

    model::BackboneConfig backbone() const;
    model::DecoderConfig decoder() const;
    ad::AdamWConfig optimizer() const;
    loss::LossWeights loss_weights() const;
    double lr_at(std::size_t step) const;

    /// Throws model::ConfigError on inconsistent values.
    void validate() const;

    /// key=value lines in a fixed order; parse(to_text()) reproduces the config exactly.
    std::string to_text() const;

    /// Sets one key from its text form. Throws model::ConfigError for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;

    /// Applies "key = value" lines ('#' starts a comment, blank lines ignored).
    void apply_text(const std::string& text, const std::string& origin = "<text>");
    void apply_file(const std::filesystem::path& path);

    /// Named presets: "toy" (the defaults) and "full" (full-scale numbers, recorded, not runnable here).
    static Config preset(const std::string& name);

    struct KeyInfo {
        std::string name;
        std::string doc;
    };
    static const std::vector<KeyInfo>& keys();
};

} // namespace sm::pipeline
