// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/loss/losses.hpp"
#include "splatmamba/model/camera.hpp"
#include "splatmamba/util/binary_io.hpp"

#include <filesystem>
#include <vector>

namespace sm::pipeline {

/// Interleaved float image, row-major, values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0f) {}

    std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
    float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

/// 8-bit PNG with 1 (gray), 3 (RGB) or 4 (RGBA) channels; values are clamped and rounded.
void write_png(const std::filesystem::path& path, const Image& image);
/// Any PNG libpng can decode, expanded to 8-bit gray/RGB/RGBA floats in [0, 1].
Image read_png(const std::filesystem::path& path);

/// "SMRF" magic, uint32 height, uint32 width, uint32 channels, then float32 data.
void write_raw_image(const std::filesystem::path& path, const Image& image);
Image read_raw_image(const std::filesystem::path& path);

/// Drops or adds channels: RGBA -> RGB keeps colour, gray -> RGB replicates.
Image to_rgb(const Image& image);

/// pixel > 0.5 is foreground (first channel).
loss::Mask to_mask(const Image& image);
Image from_mask(const loss::Mask& mask);

/// One camera per line: 12 extrinsic, 4 intrinsic, width, height. '#' comments allowed.
void write_cameras(const std::filesystem::path& path, const std::vector<model::Camera>& cameras);
std::vector<model::Camera> read_cameras(const std::filesystem::path& path);

} // namespace sm::pipeline
