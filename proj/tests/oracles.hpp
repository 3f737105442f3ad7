// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

// Reference implementations used only by tests. Each one is written
// independently of the library path it checks.

#pragma once

#include "splatmamba/loss/losses.hpp"
#include "splatmamba/model/camera.hpp"
#include "splatmamba/model/gaussians.hpp"
#include "splatmamba/ssm/ssm.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace sm::testing {

/// Step-by-step recurrence, discretizing every (channel, step) through the
/// general-matrix discretize(). u, delta: [L x Di]; A: [Di x n]; B, C: [L x n]; D: [Di].
inline std::vector<double> naive_scan(const std::vector<double>& u,
                                      const std::vector<double>& delta,
                                      const std::vector<double>& A,
                                      const std::vector<double>& B,
                                      const std::vector<double>& C,
                                      const std::vector<double>& D,
                                      std::size_t L,
                                      std::size_t Di,
                                      std::size_t n) {
    std::vector<double> y(L * Di, 0.0);
    for (std::size_t d = 0; d < Di; ++d) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t s = 0; s < n; ++s) a(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)) = A[d * n + s];
        Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        for (std::size_t t = 0; t < L; ++t) {
            Eigen::MatrixXd b(static_cast<Eigen::Index>(n), 1);
            Eigen::RowVectorXd c(static_cast<Eigen::Index>(n));
            for (std::size_t s = 0; s < n; ++s) {
                b(static_cast<Eigen::Index>(s), 0) = B[t * n + s];
                c(static_cast<Eigen::Index>(s)) = C[t * n + s];
            }
            const auto disc = ssm::discretize(a, b, delta[t * Di + d]);
            h = disc.A_bar * h + disc.B_bar * u[t * Di + d];
            y[t * Di + d] = c.dot(h) + D[d] * u[t * Di + d];
        }
    }
    return y;
}

/// Outermost exit distance of the ray from `center` along `theta` through any foreground pixel
/// square (slab intersection), or 0 when the ray misses every one.
inline double brute_force_radius(const loss::Mask& mask, const Eigen::Vector2d& center, double theta) {
    const double dx = std::cos(theta), dy = std::sin(theta);
    double best = 0.0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            double t0 = 0.0, t1 = 1e18;
            const double lo[2] = {static_cast<double>(x), static_cast<double>(y)};
            const double o[2] = {center.x(), center.y()}, d[2] = {dx, dy};
            bool hit = true;
            for (int a = 0; a < 2 && hit; ++a) {
                if (std::abs(d[a]) < 1e-12) {
                    hit = o[a] >= lo[a] && o[a] < lo[a] + 1.0;
                } else {
                    double ta = (lo[a] - o[a]) / d[a], tb = (lo[a] + 1.0 - o[a]) / d[a];
                    if (ta > tb) std::swap(ta, tb);
                    t0 = std::max(t0, ta);
                    t1 = std::min(t1, tb);
                    hit = t0 < t1;
                }
            }
            if (hit) best = std::max(best, t1);
        }
    }
    return best;
}

inline loss::Mask disk_mask(int w, int h, double cx, double cy, double r) {
    loss::Mask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.set(x, y, std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r);
    return m;
}

inline loss::Mask square_mask(int w, int h, double half) {
    loss::Mask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            m.set(x, y, std::abs(x + 0.5 - 0.5 * w) <= half && std::abs(y + 0.5 - 0.5 * h) <= half);
    return m;
}

/// Convex blob: intersection of random half-planes around the image centre.
inline loss::Mask convex_blob_mask(int w, int h, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi), dist(0.2 * w, 0.42 * w), off(-2.0, 2.0);
    const double cx = 0.5 * w + off(rng), cy = 0.5 * h + off(rng);
    std::vector<std::array<double, 3>> planes;
    for (int i = 0; i < 7; ++i) {
        const double a = ang(rng);
        planes.push_back({std::cos(a), std::sin(a), dist(rng)});
    }
    loss::Mask m(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            bool in = true;
            for (const auto& p : planes) in = in && p[0] * (x + 0.5 - cx) + p[1] * (y + 0.5 - cy) <= p[2];
            m.set(x, y, in);
        }
    }
    return m;
}

/// Front-to-back blending written out directly: C = sum_i c_i a_i prod_{j<i} (1 - a_j) + T bg.
struct BlendSample {
    double depth;
    std::array<double, 3> color;
    double alpha;
};

inline std::array<double, 4> blend(std::vector<BlendSample> samples, const std::array<double, 3>& bg) {
    std::stable_sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.depth < b.depth; });
    std::array<double, 4> out{0, 0, 0, 0};
    double transmit = 1.0;
    for (const auto& s : samples) {
        for (int c = 0; c < 3; ++c) out[c] += s.color[c] * s.alpha * transmit;
        transmit *= 1.0 - s.alpha;
    }
    for (int c = 0; c < 3; ++c) out[c] += transmit * bg[c];
    out[3] = 1.0 - transmit;
    return out;
}

/// Projected covariance by central-difference Jacobian of the full perspective map,
/// independent of the closed-form J used by the renderer.
inline Eigen::Matrix2d numeric_projected_cov(const model::Camera& cam, const Eigen::Vector3d& mean, const Eigen::Matrix3d& sigma) {
    const auto proj = [&](const Eigen::Vector3d& p) {
        const Eigen::Vector3d c = cam.rotation() * p + cam.translation();
        return Eigen::Vector2d(cam.fx() * c.x() / c.z() + cam.cx(), cam.fy() * c.y() / c.z() + cam.cy());
    };
    Eigen::Matrix<double, 2, 3> J;
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e[k] = h;
        J.col(k) = (proj(mean + e) - proj(mean - e)) / (2 * h);
    }
    return J * sigma * J.transpose();
}

inline model::Splat random_splat(std::mt19937_64& rng, double spread = 0.4) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    model::Splat s;
    for (auto& p : s.position) p = spread * u(rng);
    s.opacity = 0.3 + 0.6 * (0.5 + 0.5 * u(rng));
    for (auto& c : s.sh) c = 0.5 * u(rng);
    for (auto& c : s.scale) c = 0.08 + 0.1 * (0.5 + 0.5 * u(rng));
    Eigen::Vector4d q(u(rng), u(rng), u(rng), u(rng));
    q += Eigen::Vector4d(1.5, 0, 0, 0);
    q.normalize();
    for (int i = 0; i < 4; ++i) s.rotation[static_cast<std::size_t>(i)] = q[i];
    return s;
}

inline model::Camera test_camera(int size, double azimuth = 0.3, double elevation = 0.2) {
    const Eigen::Vector3d eye(2.0 * std::cos(elevation) * std::sin(azimuth), -2.0 * std::sin(elevation),
                              -2.0 * std::cos(elevation) * std::cos(azimuth));
    return model::Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY(), size, size);
}

} // namespace sm::testing
