// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include "splatmamba/autodiff/gradcheck.hpp"
#include "splatmamba/autodiff/ops.hpp"
#include "splatmamba/render/splat.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace sm {
namespace {

using render::Projected2DGaussian;
using render::RasterPath;

Projected2DGaussian flat_splat(double u, double v, double sigma, double depth, std::array<double, 3> color, double opacity,
                               std::size_t index) {
    Projected2DGaussian g;
    g.index = index;
    g.center = {u, v};
    g.cov = Eigen::Matrix2d::Identity() * sigma * sigma;
    g.depth = depth;
    g.color = color;
    g.opacity = opacity;
    return g;
}

TEST(Blending, OpaqueSplatAtSampleGivesItsColour) {
    const std::array<double, 3> c{0.2, 0.7, 0.4};
    auto img = render::rasterize({flat_splat(8.5, 8.5, 2.0, 1.0, c, 1.0, 0)}, 16, 16, {1, 1, 1});
    const auto got = img.color_at(8, 8);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(got[k], c[k], 1e-12);
    EXPECT_NEAR(img.alpha_at(8, 8), 1.0, 1e-12);
}

TEST(Blending, TwoSplatHalfQuarter) {
    const std::array<double, 3> c1{1, 0, 0}, c2{0, 1, 0}, bg{0, 0, 1};
    auto img = render::rasterize({flat_splat(4.5, 4.5, 1.0, 2.0, c2, 0.25, 0), flat_splat(4.5, 4.5, 1.0, 1.0, c1, 0.5, 1)},
                                 8, 8, bg);
    const auto got = img.color_at(4, 4);
    // 0.5 c1 + 0.5 * 0.25 c2 + 0.5 * 0.75 bg
    EXPECT_NEAR(got[0], 0.5, 1e-12);
    EXPECT_NEAR(got[1], 0.125, 1e-12);
    EXPECT_NEAR(got[2], 0.375, 1e-12);
    EXPECT_NEAR(img.alpha_at(4, 4), 0.625, 1e-12);
}

TEST(Blending, EqualDepthBreaksTiesByIndex) {
    const std::array<double, 3> red{1, 0, 0}, green{0, 1, 0};
    auto img = render::rasterize({flat_splat(2.5, 2.5, 1.0, 1.0, green, 1.0, 7), flat_splat(2.5, 2.5, 1.0, 1.0, red, 1.0, 3)},
                                 4, 4, {0, 0, 0});
    EXPECT_NEAR(img.color_at(2, 2)[0], 1.0, 1e-12);
}

TEST(Blending, EmptySceneIsBackground) {
    auto img = render::rasterize({}, 5, 3, {0.1, 0.2, 0.3});
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 5; ++x) {
            EXPECT_DOUBLE_EQ(img.color_at(x, y)[2], 0.3);
            EXPECT_DOUBLE_EQ(img.alpha_at(x, y), 0.0);
        }
    }
}

TEST(Blending, NoContributionBeyondThreeSigma) {
    // sample sits 3.2 sigma from the centre along x (sigma^2 includes nothing extra here)
    auto img = render::rasterize({flat_splat(0.5 + 3.2, 0.5, 1.0, 1.0, {1, 1, 1}, 1.0, 0)}, 8, 8, {0, 0, 0});
    EXPECT_EQ(img.alpha_at(0, 0), 0.0);
    EXPECT_GT(img.alpha_at(1, 0), 0.0);
}

std::vector<Projected2DGaussian> random_projected_scene(std::mt19937_64& rng, int w, int h, int count) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Projected2DGaussian> out;
    for (int i = 0; i < count; ++i) {
        Projected2DGaussian g;
        g.index = static_cast<std::size_t>(i);
        g.center = {-4.0 + (w + 8.0) * u(rng), -4.0 + (h + 8.0) * u(rng)};
        const double a = 0.5 + 20.0 * u(rng), c = 0.5 + 20.0 * u(rng);
        const double b = (2.0 * u(rng) - 1.0) * 0.9 * std::sqrt(a * c);
        g.cov << a, b, b, c;
        g.depth = 0.5 + 3.0 * u(rng);
        g.color = {u(rng), u(rng), u(rng)};
        g.opacity = u(rng);
        out.push_back(g);
    }
    return out;
}

TEST(Rasterize, PathsAgreeWithDirectBlendOracle) {
    std::mt19937_64 rng(11);
    for (int scene = 0; scene < 10; ++scene) {
        const int w = 37, h = 29;
        const auto splats = random_projected_scene(rng, w, h, 40);
        const std::array<double, 3> bg{0.3, 0.6, 0.9};
        const auto tiled = render::rasterize(splats, w, h, bg, RasterPath::Tiled);
        const auto per_pixel = render::rasterize(splats, w, h, bg, RasterPath::PerPixel);
        const auto back = render::rasterize(splats, w, h, bg, RasterPath::BackToFront);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                std::vector<testing::BlendSample> samples;
                for (const auto& g : splats) {
                    const Eigen::Vector2d d(x + 0.5 - g.center.x(), y + 0.5 - g.center.y());
                    const double m2 = d.dot(g.cov.inverse() * d);
                    if (m2 <= 9.0) samples.push_back({g.depth, g.color, g.opacity * std::exp(-0.5 * m2)});
                }
                const auto want = testing::blend(samples, bg);
                for (int k = 0; k < 3; ++k) {
                    EXPECT_NEAR(tiled.color_at(x, y)[k], want[k], 1e-9);
                    EXPECT_NEAR(per_pixel.color_at(x, y)[k], want[k], 1e-9);
                    EXPECT_NEAR(back.color_at(x, y)[k], want[k], 1e-9);
                }
                EXPECT_NEAR(tiled.alpha_at(x, y), want[3], 1e-9);
                EXPECT_NEAR(back.alpha_at(x, y), want[3], 1e-9);
            }
        }
    }
}

TEST(Projection, CovarianceMatchesNumericJacobian) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
        const auto s = testing::random_splat(rng);
        const auto cam = testing::test_camera(64, 0.2 * i, 0.1 * (i % 5) - 0.2);
        const auto p = render::project_gaussian(s, cam, 0);
        ASSERT_TRUE(p.has_value());
        const Eigen::Vector3d mean(s.position[0], s.position[1], s.position[2]);
        const auto sigma = render::build_covariance({s.scale[0], s.scale[1], s.scale[2]},
                                                    {s.rotation[0], s.rotation[1], s.rotation[2], s.rotation[3]});
        const Eigen::Matrix2d want = testing::numeric_projected_cov(cam, mean, sigma) +
                                     render::kCovarianceFloor * Eigen::Matrix2d::Identity();
        EXPECT_LT((p->cov - want).norm(), 1e-6 * want.norm());
        const Eigen::Vector3d c = cam.rotation() * mean + cam.translation();
        EXPECT_NEAR(p->center.x(), cam.fx() * c.x() / c.z() + cam.cx(), 1e-12);
        EXPECT_NEAR(p->depth, c.z(), 1e-12);
    }
}

TEST(Projection, BehindNearPlaneIsCulled) {
    const auto cam = model::Camera::normalized_reference(16, 16); // eye at z = -2 looking +z
    model::Splat s;
    s.position = {0.0, 0.0, -1.95};
    s.scale = {0.1, 0.1, 0.1};
    s.opacity = 1.0;
    EXPECT_FALSE(render::project_gaussian(s, cam).has_value());
    s.position = {0.0, 0.0, -1.85};
    EXPECT_TRUE(render::project_gaussian(s, cam).has_value());
    const std::vector<model::Splat> behind{model::Splat{{0.0, 0.0, -2.5}, 1.0, {}, {0.3, 0.3, 0.3}, {1, 0, 0, 0}}};
    const auto img = render::render(behind, cam, {0.5, 0.5, 0.5});
    for (double a : img.alpha) EXPECT_EQ(a, 0.0);
}

TEST(Covariance, EigenvaluesAreSquaredScales) {
    const Eigen::Vector4d q = Eigen::Vector4d(0.9, 0.2, -0.3, 0.1).normalized();
    const auto sigma = render::build_covariance({0.1, 0.2, 0.4}, q);
    EXPECT_LT((sigma - sigma.transpose()).norm(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(sigma);
    EXPECT_NEAR(es.eigenvalues()[0], 0.01, 1e-12);
    EXPECT_NEAR(es.eigenvalues()[1], 0.04, 1e-12);
    EXPECT_NEAR(es.eigenvalues()[2], 0.16, 1e-12);
    const auto r = render::quaternion_to_rotation(q);
    EXPECT_LT((r * r.transpose() - Eigen::Matrix3d::Identity()).norm(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
}

TEST(Covariance, GaussianValueAtOneSigma) {
    const auto sigma = render::build_covariance({0.5, 1.0, 2.0}, {1, 0, 0, 0});
    EXPECT_DOUBLE_EQ(render::eval_gaussian({0, 0, 0}, sigma), 1.0);
    EXPECT_NEAR(render::eval_gaussian({0, 0, 2.0}, sigma), std::exp(-0.5), 1e-12);
    EXPECT_THROW(render::eval_gaussian({1, 0, 0}, Eigen::Matrix3d::Zero()), ad::NumericalError);
}

TEST(SphericalHarmonics, DegreeOneSigns) {
    std::array<double, 12> sh{};
    sh[0] = 1.0;
    EXPECT_NEAR(render::eval_sh_color(sh, {0, 0, 1})[0], render::kShC0 + 0.5, 1e-15);
    sh = {};
    sh[3 + 1] = 0.5; // y basis, green
    EXPECT_NEAR(render::eval_sh_color(sh, {0, 2, 0})[1], 0.5 - render::kShC1 * 0.5, 1e-15);
    sh = {};
    sh[6 + 2] = 0.5; // z basis, blue
    EXPECT_NEAR(render::eval_sh_color(sh, {0, 0, 1})[2], 0.5 + render::kShC1 * 0.5, 1e-15);
    sh = {};
    sh[9] = 0.5; // x basis, red
    EXPECT_NEAR(render::eval_sh_color(sh, {1, 0, 0})[0], 0.5 - render::kShC1 * 0.5, 1e-15);
    sh = {};
    sh[0] = 10.0;
    EXPECT_EQ(render::eval_sh_color(sh, {1, 0, 0})[0], 1.0);
}

TEST(Render, DifferentiableMatchesReferencePath) {
    std::mt19937_64 rng(21);
    std::vector<model::Splat> splats;
    for (int i = 0; i < 30; ++i) splats.push_back(testing::random_splat(rng));
    const auto cam = testing::test_camera(40);
    std::vector<Projected2DGaussian> proj;
    for (std::size_t i = 0; i < splats.size(); ++i) {
        if (auto p = render::project_gaussian(splats[i], cam, i)) proj.push_back(*p);
    }
    const std::array<double, 3> bg{0.2, 0.4, 0.1};
    const auto ref = render::rasterize(proj, 40, 40, bg, RasterPath::PerPixel);
    const auto img = render::render(splats, cam, bg);
    for (std::size_t k = 0; k < ref.rgb.size(); ++k) EXPECT_NEAR(img.rgb[k], ref.rgb[k], 1e-12);

    // single precision agrees to float tolerance
    const auto set = model::from_splats<float>(splats);
    const auto rgba = render::render(set, cam, ad::Tensor<float>({3}, {0.2f, 0.4f, 0.1f}));
    for (std::size_t p = 0; p < ref.alpha.size(); ++p) EXPECT_NEAR(rgba.data()[p * 4 + 3], ref.alpha[p], 1e-4);
}

// Distance of every pixel sample from the cutoff ellipse, in units of d^2.
double cutoff_margin(const std::vector<model::Splat>& splats, const model::Camera& cam) {
    double margin = 1e9;
    for (const auto& s : splats) {
        const auto p = render::project_gaussian(s, cam);
        if (!p) continue;
        const Eigen::Matrix2d conic = p->cov.inverse();
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Eigen::Vector2d d(x + 0.5 - p->center.x(), y + 0.5 - p->center.y());
                margin = std::min(margin, std::abs(d.dot(conic * d) - 9.0));
            }
        }
    }
    return margin;
}

TEST(Render, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(99);
    int checked = 0;
    while (checked < 6) {
        std::vector<model::Splat> splats;
        for (int i = 0; i < 5; ++i) {
            auto s = testing::random_splat(rng);
            for (auto& c : s.sh) c *= 0.5; // colours stay inside the clamp
            splats.push_back(s);
        }
        const auto cam = testing::test_camera(16, 0.4 * checked, 0.1);
        if (cutoff_margin(splats, cam) < 0.05) continue;
        auto set = model::from_splats<double>(splats, true);
        ad::Tensor<double> bg({3}, {0.3, 0.5, 0.7}, true);
        std::vector<double> w(16 * 16 * 4);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (auto& v : w) v = u(rng);
        const ad::Tensor<double> weights({16, 16, 4}, w);
        const auto loss = [&] { return ad::sum(ad::mul(render::render(set, cam, bg), weights)); };
        ad::GradcheckOptions opt;
        opt.max_entries = 1000;
        const auto r = ad::gradcheck(loss, {set.positions, set.opacity, set.sh, set.scales, set.rotations, bg}, opt);
        EXPECT_LT(r.max_rel_error, 1e-4) << "param " << r.worst_param << " index " << r.worst_index << " analytic "
                                          << r.worst_analytic << " numeric " << r.worst_numeric;
        ++checked;
    }
}

TEST(Render, RejectsMalformedInputs) {
    auto set = model::from_splats<double>(std::vector<model::Splat>(2));
    set.sh = ad::Tensor<double>({2, 3});
    EXPECT_THROW(render::render(set, testing::test_camera(8), ad::Tensor<double>({3})), ad::DimensionError);
}

TEST(ProjectCenters, GradientsAndVisibility) {
    std::mt19937_64 rng(3);
    std::vector<double> pos;
    std::uniform_real_distribution<double> u(-0.6, 0.6);
    for (int i = 0; i < 18; ++i) pos.push_back(u(rng));
    pos.insert(pos.end(), {0.0, 0.0, -2.5}); // behind the reference camera
    ad::Tensor<double> p({7, 3}, pos, true);
    const auto cam = model::Camera::normalized_reference(32, 32);
    const auto pc = render::project_centers(p, cam);
    EXPECT_FALSE(pc.visible[6]);
    EXPECT_TRUE(pc.visible[0]);
    const ad::Tensor<double> w({7, 2}, {1, -2, 0.5, 3, -1, 1, 2, 2, 0.3, -0.7, 1.1, 0.9, 4, 4});
    const auto r = ad::gradcheck([&] { return ad::sum(ad::mul(render::project_centers(p, cam).uv, w)); }, {p});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

} // namespace
} // namespace sm
