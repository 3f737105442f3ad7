// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/optim.hpp"
#include "splatmamba/pipeline/checkpoint.hpp"
#include "splatmamba/pipeline/config.hpp"
#include "splatmamba/pipeline/dataset.hpp"
#include "splatmamba/pipeline/model.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>

namespace sm::pipeline {

struct StepMetrics {
    std::size_t step = 0; // index of the step just taken (0-based)
    double loss = 0.0;
    double rgb = 0.0;
    double mask = 0.0;
    double dist = 0.0;
    double psnr = 0.0; // from the mean RGB MSE of the supervised views
    double grad_norm = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

/// One object's supervision for a step: reference view first.
struct TrainSample {
    std::size_t reference = 0;
    std::vector<std::size_t> views;
    std::array<double, 3> background{};
};

/// Amortized training on one object of a synthetic dataset. All randomness after model
/// initialisation comes from one generator that is stored in checkpoints.
class Trainer {
public:
    explicit Trainer(Config cfg);
    /// Continues from a checkpoint. `overrides` (key=value text) may change steps, paths and intervals.
    static Trainer resume(const std::filesystem::path& checkpoint, const std::string& overrides = {});

    StepMetrics step();
    /// Runs until config().steps, writing metrics.csv and checkpoints into the run directory.
    void run(std::ostream* log = nullptr);

    Checkpoint checkpoint() const;
    void save(const std::filesystem::path& path) const;

    /// Prediction from the reference view composited over `background`.
    model::GaussianSet<float> predict_reference(const std::array<double, 3>& background) const;
    /// Mean PSNR of renders over white against the PNG-equivalent ground truth for the given views.
    double mean_psnr(const std::vector<std::size_t>& views) const;
    std::vector<std::size_t> training_views() const;
    std::vector<std::size_t> held_out_views() const;

    const Config& config() const { return cfg_; }
    const ObjectData& data() const { return data_; }
    const ReconModel<float>& model() const { return model_; }
    std::size_t current_step() const { return step_; }
    std::size_t reference_view() const { return reference_; }

private:
    Trainer(Config cfg, const Checkpoint* ckpt);
    TrainSample sample();
    void dump_nan(const TrainSample& s, const model::GaussianSet<float>& g, const std::string& what) const;

    Config cfg_;
    ObjectData data_;
    std::vector<loss::RadialPolygon> polygons_;
    std::size_t reference_ = 0;
    ReconModel<float> model_;
    std::unique_ptr<ad::AdamW<float>> optimizer_;
    std::mt19937_64 rng_;
    std::size_t step_ = 0;
};

/// Single forward pass from a checkpoint: RGB or RGBA image (RGBA is composited over white)
/// with the given camera, or the normalized reference camera when none is given.
struct InferResult {
    std::vector<model::Splat> splats;
    double seconds = 0.0;
};
InferResult infer(const ReconModel<float>& m, const Config& cfg, const Image& image, const std::optional<model::Camera>& camera = {});

/// One PNG (over `background`) and one raw straight-RGBA image per camera; returns the count.
std::size_t render_views(const std::filesystem::path& gaussians_file,
                         const std::filesystem::path& cameras_file,
                         const std::filesystem::path& out_dir,
                         const std::array<double, 3>& background = {1, 1, 1});

} // namespace sm::pipeline
