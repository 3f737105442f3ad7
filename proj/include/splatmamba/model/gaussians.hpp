// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/tensor.hpp"
#include "splatmamba/util/binary_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sm::model {

inline constexpr std::size_t kSplatParams = 23;
inline constexpr std::size_t kShCoeffs = 12; // 4 basis functions x 3 channels, index = basis * 3 + channel
inline constexpr double kDefaultScaleMax = 0.5;

/// One splat in the exported field order: position, opacity, SH colour, scale, rotation (w, x, y, z).
struct Splat {
    std::array<double, 3> position{};
    double opacity = 0.0;
    std::array<double, kShCoeffs> sh{};
    std::array<double, 3> scale{};
    std::array<double, 4> rotation{1, 0, 0, 0};
};

/// Differentiable splat parameters, already mapped into their valid ranges.
template <typename T>
struct GaussianSet {
    ad::Tensor<T> positions; // [N x 3] in [-1, 1]
    ad::Tensor<T> opacity;   // [N x 1] in [0, 1]
    ad::Tensor<T> sh;        // [N x 12]
    ad::Tensor<T> scales;    // [N x 3] in (0, s_max]
    ad::Tensor<T> rotations; // [N x 4] unit quaternions

    std::size_t count() const { return positions.defined() ? positions.dim(0) : 0; }
};

template <typename T>
std::vector<Splat> to_splats(const GaussianSet<T>& set);

template <typename T>
GaussianSet<T> from_splats(std::span<const Splat> splats, bool requires_grad = false);

/// Row-major N x 23 float records.
std::vector<float> flatten(std::span<const Splat> splats);
std::vector<Splat> unflatten(std::span<const float> records);

/// Empty when every GaussianSet invariant holds, otherwise a description of the first violation.
std::optional<std::string> check_invariants(std::span<const Splat> splats, double scale_max = kDefaultScaleMax);

using FormatError = util::ParseError;

/// Export file: "SMGS" magic, uint32 version, uint32 N, then N x 23 little-endian float32.
void write_gaussian_file(const std::filesystem::path& path, std::span<const Splat> splats);
std::vector<Splat> read_gaussian_file(const std::filesystem::path& path);

} // namespace sm::model
