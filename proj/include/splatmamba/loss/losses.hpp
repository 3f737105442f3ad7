// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace sm::loss {

class DegenerateInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Binary H x W mask, row-major. Pixel (x, y) covers [x, x+1) x [y, y+1).
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w * h), 0) {}

    bool at(int x, int y) const { return data[static_cast<std::size_t>(y * width + x)] != 0; }
    void set(int x, int y, bool v) { data[static_cast<std::size_t>(y * width + x)] = v ? 1 : 0; }
    /// Nearest-pixel lookup at a continuous point; outside the image counts as background.
    bool contains(double u, double v) const;
    std::size_t area() const;
};

inline constexpr int kDefaultAngles = 360;
inline constexpr int kMinAngles = 8;

/// Contour distances along uniformly spaced rays from the image centre.
struct RadialPolygon {
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
    std::vector<double> angles; // angles[k] = 2 pi k / A
    std::vector<double> radii;  // pixels, >= 0
};

/// Walks every ray outward one pixel cell at a time; the radius is where the ray leaves its
/// outermost foreground cell, so leaving the image counts as a crossing at the border.
/// Rays that never see foreground get radius 0. Throws DegenerateInputError for an empty mask.
RadialPolygon mask_to_radial_polygon(const Mask& mask, int n_angles = kDefaultAngles);

/// Contour radius at any angle by linear interpolation between neighbouring rays (wraps at 2 pi).
double contour_radius(const RadialPolygon& poly, double angle);

/// center + r(angle) (cos angle, sin angle).
Eigen::Vector2d contour_lookup(const RadialPolygon& poly, double angle);

/// Mean over all N splats of |p - q|^2 for visible centres outside the mask, where q is the
/// contour point at the centre's radial angle. q is held constant. centers is [N x 2].
template <typename T>
ad::Tensor<T> dist_loss(const ad::Tensor<T>& centers,
                        const std::vector<bool>& visible,
                        const Mask& mask,
                        const RadialPolygon& poly);

struct LossWeights {
    double mask = 0.01;
    double lpips = 0.1;
    double dist = 1.0;
    long dist_warmup_steps = 1000;

    /// Throws std::invalid_argument if any weight is negative or not finite.
    void validate() const;
};

/// Perceptual distance hook taking (pred_rgb, gt_rgb), both [H x W x 3]. Unset contributes 0.
template <typename T>
using PerceptualFn = std::function<ad::Tensor<T>(const ad::Tensor<T>&, const ad::Tensor<T>&)>;

template <typename T>
struct LossTerms {
    ad::Tensor<T> total;
    double rgb = 0.0;
    double mask = 0.0;
    double lpips = 0.0;
    double dist = 0.0; // unweighted; 0 once warmup has ended
};

/// rgb MSE + w.mask * MSE(alpha, mask) + w.lpips * perceptual + w.dist * dist (while step < warmup).
/// pred_rgba is [H x W x 4], gt_rgb [H x W x 3], gt_mask [H x W x 1]; dist_term may be undefined.
template <typename T>
LossTerms<T> total_loss(const ad::Tensor<T>& pred_rgba,
                        const ad::Tensor<T>& gt_rgb,
                        const ad::Tensor<T>& gt_mask,
                        const ad::Tensor<T>& dist_term,
                        const LossWeights& weights,
                        long step,
                        const PerceptualFn<T>& perceptual = {});

/// Uniform random solid colour in [0, 1]^3.
std::array<double, 3> sample_background(std::mt19937_64& rng);

/// out = alpha * fg + (1 - alpha) * bg per pixel. rgb is H*W*3, alpha H*W.
std::vector<float> composite_over(std::span<const float> rgb, std::span<const float> alpha, const std::array<double, 3>& bg);

struct Composited {
    std::vector<float> rgb;
    std::array<double, 3> background{};
};

/// Draws a background colour and composites the foreground over it.
Composited random_background(std::span<const float> rgb, std::span<const float> alpha, std::mt19937_64& rng);

} // namespace sm::loss
