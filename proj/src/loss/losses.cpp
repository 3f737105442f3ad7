// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/loss/losses.hpp"

#include "splatmamba/autodiff/ops.hpp"
#include "splatmamba/render/splat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace sm::loss {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Walks the pixel cells a ray crosses, one cell per step, and returns the distance at which
// it leaves the last foreground cell (0 if it never enters one). Leaving the image ends the walk.
double outermost_exit(const Mask& mask, const Eigen::Vector2d& origin, const Eigen::Vector2d& dir) {
    constexpr double kTie = 1e-12;
    int cell[2];
    int step[2];
    double t_next[2], t_delta[2];
    for (int a = 0; a < 2; ++a) {
        // a start on a grid line belongs to the cell the ray is heading into
        cell[a] = static_cast<int>(std::floor(origin[a] + (dir[a] < 0 ? -kTie : kTie)));
        if (std::abs(dir[a]) < kTie) {
            step[a] = 0;
            t_next[a] = t_delta[a] = std::numeric_limits<double>::infinity();
        } else {
            step[a] = dir[a] > 0 ? 1 : -1;
            const double boundary = dir[a] > 0 ? cell[a] + 1.0 : static_cast<double>(cell[a]);
            t_next[a] = (boundary - origin[a]) / dir[a];
            t_delta[a] = 1.0 / std::abs(dir[a]);
        }
    }
    double radius = 0.0;
    while (cell[0] >= 0 && cell[1] >= 0 && cell[0] < mask.width && cell[1] < mask.height) {
        const double t_leave = std::min(t_next[0], t_next[1]);
        if (mask.at(cell[0], cell[1])) {
            radius = t_leave;
        }
        // passing exactly through a corner skips both side cells, which the ray only touches
        const bool cross_x = t_next[0] <= t_leave + kTie, cross_y = t_next[1] <= t_leave + kTie;
        if (cross_x) {
            cell[0] += step[0];
            t_next[0] += t_delta[0];
        }
        if (cross_y) {
            cell[1] += step[1];
            t_next[1] += t_delta[1];
        }
    }
    return radius;
}

} // namespace

bool Mask::contains(double u, double v) const {
    const double fx = std::floor(u), fy = std::floor(v);
    if (!(fx >= 0.0 && fy >= 0.0 && fx < width && fy < height)) {
        return false;
    }
    return at(static_cast<int>(fx), static_cast<int>(fy));
}

std::size_t Mask::area() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

RadialPolygon mask_to_radial_polygon(const Mask& mask, int n_angles) {
    if (n_angles < kMinAngles) {
        throw std::invalid_argument("mask_to_radial_polygon: need at least 8 angles, got " + std::to_string(n_angles));
    }
    if (mask.width <= 0 || mask.height <= 0 || mask.data.size() != static_cast<std::size_t>(mask.width * mask.height)) {
        throw DegenerateInputError("mask_to_radial_polygon: malformed mask");
    }
    if (mask.area() == 0) {
        throw DegenerateInputError("mask_to_radial_polygon: empty mask");
    }
    RadialPolygon poly;
    poly.center = {0.5 * mask.width, 0.5 * mask.height};
    poly.angles.resize(static_cast<std::size_t>(n_angles));
    poly.radii.assign(static_cast<std::size_t>(n_angles), 0.0);
    for (int k = 0; k < n_angles; ++k) {
        const double theta = kTwoPi * k / n_angles;
        poly.angles[static_cast<std::size_t>(k)] = theta;
        const Eigen::Vector2d dir(std::cos(theta), std::sin(theta));
        poly.radii[static_cast<std::size_t>(k)] = outermost_exit(mask, poly.center, dir);
    }
    return poly;
}

double contour_radius(const RadialPolygon& poly, double angle) {
    const std::size_t n = poly.radii.size();
    if (n == 0) {
        return 0.0;
    }
    double a = std::fmod(angle, kTwoPi);
    if (a < 0.0) {
        a += kTwoPi;
    }
    const double pos = a / kTwoPi * static_cast<double>(n);
    const auto k0 = static_cast<std::size_t>(std::floor(pos)) % n;
    const std::size_t k1 = (k0 + 1) % n;
    const double f = pos - std::floor(pos);
    return (1.0 - f) * poly.radii[k0] + f * poly.radii[k1];
}

Eigen::Vector2d contour_lookup(const RadialPolygon& poly, double angle) {
    return poly.center + contour_radius(poly, angle) * Eigen::Vector2d(std::cos(angle), std::sin(angle));
}

template <typename T>
ad::Tensor<T> dist_loss(const ad::Tensor<T>& centers,
                        const std::vector<bool>& visible,
                        const Mask& mask,
                        const RadialPolygon& poly) {
    if (centers.rank() != 2 || centers.dim(1) != 2) {
        throw ad::DimensionError("dist_loss: expected [N x 2], got " + ad::shape_str(centers.shape()));
    }
    const std::size_t n = centers.dim(0);
    if (visible.size() != n) {
        throw ad::DimensionError("dist_loss: visibility has " + std::to_string(visible.size()) + " entries for " +
                                 std::to_string(n) + " centres");
    }
    if (n == 0) {
        return ad::Tensor<T>::scalar(T(0));
    }
    // residual p - q for outside centres, zero elsewhere
    std::vector<double> diff(n * 2, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = centers.data()[i * 2], v = centers.data()[i * 2 + 1];
        if (!visible[i] || mask.contains(u, v)) {
            continue;
        }
        const double theta = std::atan2(v - poly.center.y(), u - poly.center.x());
        const Eigen::Vector2d q = contour_lookup(poly, theta);
        diff[i * 2] = u - q.x();
        diff[i * 2 + 1] = v - q.y();
        total += diff[i * 2] * diff[i * 2] + diff[i * 2 + 1] * diff[i * 2 + 1];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return ad::make_op<T>("dist_loss", {1}, {static_cast<T>(total * inv_n)}, {centers},
                          [diff = std::move(diff), inv_n](ad::detail::Node<T>& self) {
                              auto& g = self.inputs[0]->grad_buffer();
                              const double up = static_cast<double>(self.grad[0]);
                              for (std::size_t k = 0; k < diff.size(); ++k) {
                                  g[k] += static_cast<T>(2.0 * diff[k] * inv_n * up);
                              }
                          });
}

void LossWeights::validate() const {
    for (double w : {mask, lpips, dist}) {
        if (!std::isfinite(w) || w < 0.0) {
            throw std::invalid_argument("loss weights must be finite and non-negative");
        }
    }
    if (dist_warmup_steps < 0) {
        throw std::invalid_argument("dist_warmup_steps must be non-negative");
    }
}

template <typename T>
LossTerms<T> total_loss(const ad::Tensor<T>& pred_rgba,
                        const ad::Tensor<T>& gt_rgb,
                        const ad::Tensor<T>& gt_mask,
                        const ad::Tensor<T>& dist_term,
                        const LossWeights& weights,
                        long step,
                        const PerceptualFn<T>& perceptual) {
    weights.validate();
    if (pred_rgba.rank() != 3 || pred_rgba.dim(2) != 4) {
        throw ad::DimensionError("total_loss: prediction must be [H x W x 4], got " + ad::shape_str(pred_rgba.shape()));
    }
    const std::size_t h = pred_rgba.dim(0), w = pred_rgba.dim(1);
    if (gt_rgb.shape() != ad::Shape{h, w, 3}) {
        throw ad::DimensionError("total_loss: target rgb " + ad::shape_str(gt_rgb.shape()) + " does not match prediction " +
                                 ad::shape_str(pred_rgba.shape()));
    }
    if (gt_mask.shape() != ad::Shape{h, w, 1}) {
        throw ad::DimensionError("total_loss: target mask " + ad::shape_str(gt_mask.shape()) + " does not match prediction " +
                                 ad::shape_str(pred_rgba.shape()));
    }
    const auto [rgb, alpha] = render::split_rgb_alpha(pred_rgba);
    LossTerms<T> out;
    auto rgb_term = ad::mse(rgb, gt_rgb);
    auto mask_term = ad::mse(alpha, gt_mask);
    out.rgb = static_cast<double>(rgb_term.item());
    out.mask = static_cast<double>(mask_term.item());
    auto total = ad::add(rgb_term, ad::scale(mask_term, static_cast<T>(weights.mask)));
    if (perceptual && weights.lpips > 0.0) {
        auto p = perceptual(rgb, gt_rgb);
        if (p.numel() != 1) {
            throw ad::DimensionError("total_loss: perceptual hook must return a scalar");
        }
        out.lpips = static_cast<double>(p.item());
        total = ad::add(total, ad::scale(ad::reshape(p, {1}), static_cast<T>(weights.lpips)));
    }
    if (dist_term.defined() && step < weights.dist_warmup_steps && weights.dist > 0.0) {
        if (dist_term.numel() != 1) {
            throw ad::DimensionError("total_loss: dist term must be a scalar");
        }
        out.dist = static_cast<double>(dist_term.item());
        total = ad::add(total, ad::scale(ad::reshape(dist_term, {1}), static_cast<T>(weights.dist)));
    }
    out.total = total;
    return out;
}

std::array<double, 3> sample_background(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::array<double, 3> c{};
    for (auto& v : c) {
        v = u(rng);
    }
    return c;
}

std::vector<float> composite_over(std::span<const float> rgb, std::span<const float> alpha, const std::array<double, 3>& bg) {
    if (rgb.size() != alpha.size() * 3) {
        throw ad::DimensionError("composite_over: rgb has " + std::to_string(rgb.size()) + " values for " +
                                 std::to_string(alpha.size()) + " alpha values");
    }
    std::vector<float> out(rgb.size());
    for (std::size_t p = 0; p < alpha.size(); ++p) {
        const double a = alpha[p];
        for (std::size_t ch = 0; ch < 3; ++ch) {
            out[p * 3 + ch] = static_cast<float>(a * rgb[p * 3 + ch] + (1.0 - a) * bg[ch]);
        }
    }
    return out;
}

Composited random_background(std::span<const float> rgb, std::span<const float> alpha, std::mt19937_64& rng) {
    Composited c;
    c.background = sample_background(rng);
    c.rgb = composite_over(rgb, alpha, c.background);
    return c;
}

#define SM_INSTANTIATE_LOSS(T)                                                                                      \
    template ad::Tensor<T> dist_loss(const ad::Tensor<T>&, const std::vector<bool>&, const Mask&,                   \
                                     const RadialPolygon&);                                                         \
    template LossTerms<T> total_loss(const ad::Tensor<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&,              \
                                     const ad::Tensor<T>&, const LossWeights&, long, const PerceptualFn<T>&);

SM_INSTANTIATE_LOSS(float)
SM_INSTANTIATE_LOSS(double)

#undef SM_INSTANTIATE_LOSS

} // namespace sm::loss
