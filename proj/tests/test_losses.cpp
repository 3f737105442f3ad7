// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include "splatmamba/autodiff/gradcheck.hpp"
#include "splatmamba/autodiff/ops.hpp"
#include "splatmamba/loss/losses.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace sm::loss {
namespace {

constexpr double kPi = std::numbers::pi;

double worst_oracle_gap(const Mask& mask, const RadialPolygon& poly) {
    double worst = 0;
    for (std::size_t k = 0; k < poly.angles.size(); ++k) {
        worst = std::max(worst, std::abs(poly.radii[k] - testing::brute_force_radius(mask, poly.center, poly.angles[k])));
    }
    return worst;
}

TEST(RadialPolygon, DiskRadiiMatchRadius) {
    const auto mask = testing::disk_mask(64, 64, 32, 32, 20);
    const auto poly = mask_to_radial_polygon(mask);
    ASSERT_EQ(poly.radii.size(), 360u);
    for (double r : poly.radii) EXPECT_NEAR(r, 20.0, 1.0);
    EXPECT_LT(worst_oracle_gap(mask, poly), 1.5);
}

TEST(RadialPolygon, SquareCornerIsRootTwoFurther) {
    const auto mask = testing::square_mask(64, 64, 15);
    const auto poly = mask_to_radial_polygon(mask);
    EXPECT_NEAR(poly.radii[0], 15.0, 1.5);
    EXPECT_NEAR(poly.radii[45], 15.0 * std::sqrt(2.0), 1.5);
    EXPECT_LT(worst_oracle_gap(mask, poly), 1.5);
}

TEST(RadialPolygon, ConvexBlobsMatchOracle) {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 8; ++i) {
        const auto mask = testing::convex_blob_mask(48, 48, rng);
        ASSERT_GT(mask.area(), 0u);
        EXPECT_LT(worst_oracle_gap(mask, mask_to_radial_polygon(mask)), 1.5);
    }
}

TEST(RadialPolygon, FullFrameReachesBorder) {
    Mask mask(40, 30);
    std::fill(mask.data.begin(), mask.data.end(), 1);
    const auto poly = mask_to_radial_polygon(mask, 8);
    EXPECT_NEAR(poly.radii[0], 20.0, 1e-6);
    EXPECT_NEAR(poly.radii[2], 15.0, 1e-6);
    EXPECT_NEAR(poly.radii[1], 15.0 * std::sqrt(2.0), 1e-6);
}

TEST(RadialPolygon, EmptyRaysAndEmptyMask) {
    Mask mask(32, 32);
    EXPECT_THROW(mask_to_radial_polygon(mask), DegenerateInputError);
    mask.set(28, 16, true); // only the ray at angle 0 sees foreground
    const auto poly = mask_to_radial_polygon(mask, 8);
    EXPECT_NEAR(poly.radii[0], 13.0, 1e-6);
    EXPECT_EQ(poly.radii[4], 0.0);
    EXPECT_THROW(mask_to_radial_polygon(mask, 4), std::invalid_argument);
}

TEST(ContourLookup, InterpolatesAndWraps) {
    RadialPolygon poly;
    poly.center = {10, 10};
    for (int k = 0; k < 8; ++k) {
        poly.angles.push_back(2 * kPi * k / 8);
        poly.radii.push_back(k + 1.0);
    }
    const auto on = contour_lookup(poly, kPi / 2);
    EXPECT_NEAR(on.x(), 10.0, 1e-12);
    EXPECT_NEAR(on.y(), 13.0, 1e-12);
    EXPECT_NEAR(contour_radius(poly, kPi / 8), 1.5, 1e-12);
    EXPECT_NEAR(contour_radius(poly, -kPi / 8), 4.5, 1e-12); // between the last ray and the first
    const auto a = contour_lookup(poly, 0.3), b = contour_lookup(poly, 0.3 + 2 * kPi);
    EXPECT_NEAR((a - b).norm(), 0.0, 1e-12);

    const auto disk = mask_to_radial_polygon(testing::disk_mask(64, 64, 32, 32, 18));
    for (double t = 0.0; t < 2 * kPi; t += 0.173) EXPECT_NEAR((contour_lookup(disk, t) - disk.center).norm(), 18.0, 1.0);
}

TEST(DistLoss, InsideCentresGiveZero) {
    const auto mask = testing::disk_mask(32, 32, 16, 16, 10);
    const auto poly = mask_to_radial_polygon(mask);
    ad::Tensor<double> c({3, 2}, {16, 16, 20, 14, 12, 19});
    EXPECT_EQ(dist_loss(c, {true, true, true}, mask, poly).item(), 0.0);
    Mask full(32, 32);
    std::fill(full.data.begin(), full.data.end(), 1);
    ad::Tensor<double> any({2, 2}, {1, 1, 31, 2});
    EXPECT_EQ(dist_loss(any, {true, true}, full, mask_to_radial_polygon(full)).item(), 0.0);
}

TEST(DistLoss, SingleOutsideCentreIsSquaredOvershoot) {
    RadialPolygon poly;
    poly.center = {16, 16};
    for (int k = 0; k < 16; ++k) {
        poly.angles.push_back(2 * kPi * k / 16);
        poly.radii.push_back(10.0);
    }
    const Mask mask = testing::disk_mask(32, 32, 16, 16, 10);
    // along angle 0, 3.5 px beyond the contour; the second centre is inside and only counts in the mean
    ad::Tensor<double> c({2, 2}, {29.5, 16.0, 16.0, 16.0}, true);
    const auto l = dist_loss(c, {true, true}, mask, poly);
    EXPECT_NEAR(l.item(), 3.5 * 3.5 / 2.0, 1e-12);
    // invisible centres are ignored
    EXPECT_EQ(dist_loss(c, {false, true}, mask, poly).item(), 0.0);

    // one explicit gradient step moves the outside centre closer
    ad::backward(l);
    const double step = 0.1;
    const double nx = 29.5 - step * c.grad()[0], ny = 16.0 - step * c.grad()[1];
    EXPECT_LT(std::hypot(nx - 26.0, ny - 16.0), 3.5);
    EXPECT_EQ(c.grad()[2], 0.0);
}

TEST(DistLoss, ZeroIffAllInside) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 48.0);
    for (int trial = 0; trial < 30; ++trial) {
        const auto mask = testing::convex_blob_mask(48, 48, rng);
        const auto poly = mask_to_radial_polygon(mask);
        std::vector<double> pts;
        bool any_outside = false;
        for (int i = 0; i < 5; ++i) {
            const double x = u(rng), y = u(rng);
            pts.insert(pts.end(), {x, y});
            any_outside = any_outside || !mask.contains(x, y);
        }
        const double l = dist_loss(ad::Tensor<double>({5, 2}, pts), std::vector<bool>(5, true), mask, poly).item();
        EXPECT_EQ(l > 0.0, any_outside);
    }
}

ad::Tensor<double> filled(ad::Shape shape, double v) {
    return ad::Tensor<double>(shape, std::vector<double>(ad::shape_numel(shape), v));
}

TEST(TotalLoss, HandEvaluatedCombination) {
    // rgb error 0.2 everywhere -> MSE 0.04; alpha error 0.5 -> MSE 0.25
    std::vector<double> pred(4 * 4 * 4);
    for (std::size_t p = 0; p < 16; ++p) {
        pred[p * 4] = pred[p * 4 + 1] = pred[p * 4 + 2] = 0.7;
        pred[p * 4 + 3] = 0.5;
    }
    const ad::Tensor<double> rgba({4, 4, 4}, pred);
    const auto gt = filled({4, 4, 3}, 0.5), mask = filled({4, 4, 1}, 1.0);
    LossWeights w;
    const auto early = total_loss(rgba, gt, mask, ad::Tensor<double>::scalar(1.0), w, 10);
    EXPECT_NEAR(early.total.item(), 0.04 + 0.01 * 0.25 + 1.0, 1e-12);
    const auto late = total_loss(rgba, gt, mask, ad::Tensor<double>::scalar(1.0), w, 1000);
    EXPECT_NEAR(late.total.item(), 0.04 + 0.01 * 0.25, 1e-12);

    LossWeights zero{0, 0, 0, 1000};
    EXPECT_NEAR(total_loss(rgba, gt, mask, ad::Tensor<double>::scalar(5.0), zero, 0).total.item(), 0.04, 1e-12);

    const PerceptualFn<double> hook = [](const ad::Tensor<double>&, const ad::Tensor<double>&) {
        return ad::Tensor<double>::scalar(2.0);
    };
    EXPECT_NEAR(total_loss(rgba, gt, mask, {}, w, 5000, hook).total.item(), 0.04 + 0.0025 + 0.2, 1e-12);
}

TEST(TotalLoss, PerfectPredictionAndShapeErrors) {
    std::vector<double> pred(2 * 2 * 4, 1.0);
    const ad::Tensor<double> rgba({2, 2, 4}, pred);
    EXPECT_EQ(total_loss(rgba, filled({2, 2, 3}, 1.0), filled({2, 2, 1}, 1.0), {}, LossWeights{}, 0).total.item(), 0.0);
    EXPECT_THROW(total_loss(rgba, filled({2, 3, 3}, 1.0), filled({2, 2, 1}, 1.0), {}, LossWeights{}, 0),
                 ad::DimensionError);
    EXPECT_THROW(total_loss(rgba, filled({2, 2, 3}, 1.0), filled({2, 2, 1}, 1.0), {}, LossWeights{-1, 0, 0, 0}, 0),
                 std::invalid_argument);
}

TEST(TotalLoss, GradientFlowsToPrediction) {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> p(3 * 3 * 4), g(3 * 3 * 3), m(9);
    for (auto& v : p) v = u(rng);
    for (auto& v : g) v = u(rng);
    for (auto& v : m) v = u(rng) > 0.5 ? 1.0 : 0.0;
    ad::Tensor<double> rgba({3, 3, 4}, p, true);
    const ad::Tensor<double> gt({3, 3, 3}, g), mask({3, 3, 1}, m);
    const auto r = ad::gradcheck([&] { return total_loss(rgba, gt, mask, {}, LossWeights{}, 0).total; }, {rgba});
    EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(Background, CompositingLimitsAndDeterminism) {
    const std::vector<float> rgb{0.1f, 0.2f, 0.3f, 0.9f, 0.8f, 0.7f};
    const std::vector<float> opaque{1, 1}, clear{0, 0};
    std::mt19937_64 a(5), b(5);
    const auto ca = random_background(rgb, opaque, a);
    for (std::size_t i = 0; i < rgb.size(); ++i) EXPECT_FLOAT_EQ(ca.rgb[i], rgb[i]);
    const auto cb = random_background(rgb, clear, b);
    EXPECT_EQ(ca.background, cb.background);
    for (std::size_t i = 0; i < rgb.size(); ++i) EXPECT_FLOAT_EQ(cb.rgb[i], static_cast<float>(cb.background[i % 3]));
    EXPECT_NE(sample_background(a), sample_background(a));
}

} // namespace
} // namespace sm::loss
