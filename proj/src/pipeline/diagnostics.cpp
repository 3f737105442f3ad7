// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/pipeline/diagnostics.hpp"

#include "splatmamba/autodiff/gradcheck.hpp"
#include "splatmamba/autodiff/ops.hpp"
#include "splatmamba/render/splat.hpp"
#include "splatmamba/ssm/ssm.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <random>

namespace sm::pipeline {
namespace {

std::vector<double> draw(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

model::Splat scene_splat(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    model::Splat s;
    for (auto& p : s.position) p = 0.4 * u(rng);
    s.opacity = 0.3 + 0.3 * (1.0 + u(rng));
    for (auto& c : s.sh) c = 0.25 * u(rng);
    for (auto& c : s.scale) c = 0.08 + 0.05 * (1.0 + u(rng));
    Eigen::Vector4d q(1.5 + u(rng), u(rng), u(rng), u(rng));
    q.normalize();
    for (int i = 0; i < 4; ++i) s.rotation[static_cast<std::size_t>(i)] = q[i];
    return s;
}

double min_cutoff_margin(const std::vector<model::Splat>& splats, const model::Camera& cam) {
    double margin = 1e9;
    for (const auto& s : splats) {
        const auto p = render::project_gaussian(s, cam);
        if (!p) continue;
        const Eigen::Matrix2d conic = p->cov.inverse();
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Eigen::Vector2d d(x + 0.5 - p->center.x(), y + 0.5 - p->center.y());
                margin = std::min(margin, std::abs(d.dot(conic * d) - render::kCutoffSigmas * render::kCutoffSigmas));
            }
        }
    }
    return margin;
}

} // namespace

GradcheckSummary renderer_gradcheck(int scenes, int max_splats, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> count(1, std::max(1, max_splats));
    std::uniform_real_distribution<double> angle(-3.1, 3.1);
    GradcheckSummary out;
    while (out.scenes < scenes) {
        std::vector<model::Splat> splats(static_cast<std::size_t>(count(rng)));
        for (auto& s : splats) s = scene_splat(rng);
        const double az = angle(rng), el = 0.4 * angle(rng) / 3.1;
        const Eigen::Vector3d eye(2.0 * std::cos(el) * std::sin(az), -2.0 * std::sin(el), -2.0 * std::cos(el) * std::cos(az));
        const auto cam = model::Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY(), size, size);
        if (min_cutoff_margin(splats, cam) < 0.05) continue;
        auto set = model::from_splats<double>(splats, true);
        ad::Tensor<double> bg({3}, draw(3, 0.0, 1.0, rng), true);
        const ad::Tensor<double> weights({static_cast<std::size_t>(size), static_cast<std::size_t>(size), 4},
                                         draw(static_cast<std::size_t>(size * size * 4), -1.0, 1.0, rng));
        ad::GradcheckOptions opt;
        opt.max_entries = 1000;
        const auto r = ad::gradcheck([&] { return ad::sum(ad::mul(render::render(set, cam, bg), weights)); },
                                     {set.positions, set.opacity, set.sh, set.scales, set.rotations, bg}, opt);
        out.max_rel_error = std::max(out.max_rel_error, r.max_rel_error);
        ++out.scenes;
    }
    return out;
}

GradcheckSummary scan_gradcheck(int cases, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> len(1, 9), width(1, 4), state(1, 4);
    GradcheckSummary out;
    for (; out.scenes < cases; ++out.scenes) {
        const std::size_t L = len(rng), Di = width(rng), n = state(rng);
        ad::Tensor<double> u({L, Di}, draw(L * Di, -1, 1, rng), true), dt({L, Di}, draw(L * Di, 0.05, 0.8, rng), true);
        ad::Tensor<double> A({Di, n}, draw(Di * n, -3, -0.2, rng), true), B({L, n}, draw(L * n, -1, 1, rng), true);
        ad::Tensor<double> C({L, n}, draw(L * n, -1, 1, rng), true), D({Di}, draw(Di, -1, 1, rng), true);
        const ad::Tensor<double> w({L, Di}, draw(L * Di, -1, 1, rng));
        const auto r = ad::gradcheck([&] { return ad::sum(ad::mul(ssm::selective_scan(u, dt, A, B, C, D), w)); }, {u, dt, A, B, C, D});
        out.max_rel_error = std::max(out.max_rel_error, r.max_rel_error);
    }
    return out;
}

std::vector<ScanTiming> bench_scan(const std::vector<std::size_t>& lengths, std::size_t d_inner, std::size_t d_state, int runs,
                                   std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto f = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
    std::vector<ScanTiming> out;
    for (const auto L : lengths) {
        const ad::Tensor<float> u({L, d_inner}, f(draw(L * d_inner, -1, 1, rng))), dt({L, d_inner}, f(draw(L * d_inner, 1e-3, 0.1, rng)));
        const ad::Tensor<float> A({d_inner, d_state}, f(draw(d_inner * d_state, -4, -0.5, rng)));
        const ad::Tensor<float> B({L, d_state}, f(draw(L * d_state, -1, 1, rng))), C({L, d_state}, f(draw(L * d_state, -1, 1, rng)));
        const ad::Tensor<float> D({d_inner}, f(draw(d_inner, -1, 1, rng)));
        std::vector<double> times;
        (void)ssm::selective_scan(u, dt, A, B, C, D); // warm-up
        for (int r = 0; r < std::max(1, runs); ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto y = ssm::selective_scan(u, dt, A, B, C, D);
            times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            if (!y.all_finite()) throw ad::NumericalError("bench-scan produced non-finite output");
        }
        std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
        out.push_back({L, times[times.size() / 2]});
    }
    return out;
}

} // namespace sm::pipeline
