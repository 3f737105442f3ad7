// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "splatmamba/autodiff/tensor.hpp"
#include "splatmamba/model/camera.hpp"
#include "splatmamba/model/gaussians.hpp"

#include <Eigen/Core>

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace sm::render {

/// Low-pass floor added to every projected covariance, in pixel^2.
inline constexpr double kCovarianceFloor = 0.3;
inline constexpr double kNearPlane = 0.1;
/// Splats contribute only where the Mahalanobis distance is at most this many sigmas.
inline constexpr double kCutoffSigmas = 3.0;
inline constexpr int kTileSize = 16;
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

/// Rotation matrix of quaternion (w, x, y, z); the quaternion is normalized first.
Eigen::Matrix3d quaternion_to_rotation(const Eigen::Vector4d& quat);

/// Sigma = R S S^T R^T with S = diag(scale).
Eigen::Matrix3d build_covariance(const Eigen::Vector3d& scale, const Eigen::Vector4d& quat);

/// exp(-1/2 x^T Sigma^-1 x). Throws ad::NumericalError for a singular Sigma.
double eval_gaussian(const Eigen::Vector3d& offset, const Eigen::Matrix3d& cov);

/// Degree-1 real SH colour along `view_dir` (need not be normalized), offset by 0.5 and clamped to [0, 1].
std::array<double, 3> eval_sh_color(const std::array<double, model::kShCoeffs>& sh, const Eigen::Vector3d& view_dir);

struct Projected2DGaussian {
    std::size_t index = 0;       // position in the source splat list; breaks depth ties
    Eigen::Vector2d center;      // pixels
    Eigen::Matrix2d cov;         // pixel^2, floor included
    double depth = 0.0;          // camera-space z
    std::array<double, 3> color{};
    double opacity = 0.0;
};

/// EWA projection: pinhole centre, cov2d = J W Sigma W^T J^T + floor I, SH colour towards the camera.
/// Returns nullopt for splats at or behind the near plane.
std::optional<Projected2DGaussian> project_gaussian(const model::Splat& splat,
                                                    const model::Camera& cam,
                                                    std::size_t index = 0);

struct RenderedImage {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;   // H x W x 3
    std::vector<double> alpha; // H x W

    std::array<double, 3> color_at(int x, int y) const {
        const auto i = static_cast<std::size_t>(y * width + x) * 3;
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
    double alpha_at(int x, int y) const { return alpha[static_cast<std::size_t>(y * width + x)]; }
};

enum class RasterPath {
    Tiled,       // 16x16 tiles with per-tile depth-ordered lists (the production path)
    PerPixel,    // every pixel walks the full sorted list
    BackToFront, // C = c_i a_i + (1 - a_i) C from the farthest splat
};

/// Sorts by depth (ties by index) and alpha-blends front to back over `background`.
/// Pixel (x, y) samples the point (x + 0.5, y + 0.5).
RenderedImage rasterize(std::vector<Projected2DGaussian> splats,
                        int width,
                        int height,
                        const std::array<double, 3>& background,
                        RasterPath path = RasterPath::Tiled);

/// Project, cull, sort and rasterize (double precision, no gradients).
RenderedImage render(std::span<const model::Splat> splats,
                     const model::Camera& cam,
                     const std::array<double, 3>& background);

/// Differentiable render: returns [H x W x 4] (rgb, alpha) with gradients flowing to
/// every splat parameter tensor and to `background` [3].
template <typename T>
ad::Tensor<T> render(const model::GaussianSet<T>& gaussians,
                     const model::Camera& cam,
                     const ad::Tensor<T>& background);

/// Convenience split of a [H x W x 4] render into rgb [H x W x 3] and alpha [H x W x 1].
template <typename T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> split_rgb_alpha(const ad::Tensor<T>& rgba);

template <typename T>
struct ProjectedCenters {
    ad::Tensor<T> uv;          // [N x 2] pixels; rows of invisible splats hold (0, 0)
    std::vector<bool> visible; // in front of the near plane
};

/// Differentiable pinhole projection of splat centres.
template <typename T>
ProjectedCenters<T> project_centers(const ad::Tensor<T>& positions, const model::Camera& cam);

} // namespace sm::render
