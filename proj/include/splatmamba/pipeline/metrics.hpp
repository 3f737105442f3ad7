// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/pipeline/image_io.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sm::pipeline {

inline constexpr double kPsnrCap = 99.0;

double mse(const Image& a, const Image& b);

/// 10 log10(1 / MSE) with peak 1; 99 dB when MSE < 1e-10.
double psnr_from_mse(double mse);
double psnr(const Image& a, const Image& b);

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// evaluated at every window position fully inside the image. Images smaller than the window
/// use a single window clipped to the image.
double ssim(const Image& a, const Image& b);

struct ViewMetrics {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    std::string csv() const;
    std::string summary() const;
};

/// Pairs the sorted PNG files of both directories by position. Mismatched counts throw
/// std::invalid_argument. When mask_dir is non-empty its masks (same count) blank the background
/// of both images to black before scoring.
EvalReport evaluate(const std::filesystem::path& pred_dir,
                    const std::filesystem::path& gt_dir,
                    const std::filesystem::path& mask_dir = {});

EvalReport evaluate_images(const std::vector<Image>& pred, const std::vector<Image>& gt, const std::vector<std::string>& names);

} // namespace sm::pipeline
