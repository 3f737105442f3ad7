// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/loss/losses.hpp"
#include "splatmamba/model/camera.hpp"
#include "splatmamba/model/gaussians.hpp"
#include "splatmamba/pipeline/image_io.hpp"
#include "splatmamba/render/splat.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sm::pipeline {

/// Data problems (missing or inconsistent dataset files); maps to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kAnchorRadius = 2.0;

struct DatasetOptions {
    std::size_t objects = 1;
    std::size_t views = 48;
    int resolution = 64;
    std::uint64_t seed = 0;
    int min_splats = 8;
    int max_splats = 64;
};

/// Random splat mixture for one object. Centres lie within 0.45 of the origin so every
/// anchor view sees the whole object.
std::vector<model::Splat> synthetic_object(std::uint64_t seed, std::size_t index, const DatasetOptions& opt = {});

/// Views on a Fibonacci sphere of radius 2 looking at the origin, focal length = resolution.
std::vector<model::Camera> anchor_cameras(std::size_t views, int resolution);

/// Writes manifest.txt and one directory per object holding gaussians.smgs, cameras.txt and, per
/// view, view_XXX.png (over white), view_XXX.smrf (straight RGBA floats) and mask_XXX.png.
void gen_synthetic_dataset(const std::filesystem::path& dir, const DatasetOptions& opt);

DatasetOptions read_manifest(const std::filesystem::path& dir);
std::filesystem::path object_dir(const std::filesystem::path& dir, std::size_t index);
std::filesystem::path view_path(const std::filesystem::path& object, std::size_t view, const char* ext);
std::filesystem::path mask_path(const std::filesystem::path& object, std::size_t view);

/// One object's supervision views, loaded read-only.
struct ObjectData {
    std::size_t index = 0;
    std::vector<model::Camera> cameras;
    std::vector<Image> rgba; // straight colour + alpha
    std::vector<loss::Mask> masks;
    std::vector<model::Splat> ground_truth;
};

ObjectData load_object(const std::filesystem::path& dir, std::size_t index);

/// Largest mask area; ties go to the lowest index. Throws std::invalid_argument when empty.
std::size_t select_reference_view(std::span<const loss::Mask> masks);

/// A render over `background` as the composited RGB image and the straight (un-premultiplied) RGBA image.
struct ViewImages {
    Image rgb;
    Image rgba;
};
ViewImages view_images(const render::RenderedImage& img, const std::array<double, 3>& background);

/// alpha * rgb + (1 - alpha) * bg for a straight RGBA image.
Image composite(const Image& rgba, const std::array<double, 3>& bg);

} // namespace sm::pipeline
