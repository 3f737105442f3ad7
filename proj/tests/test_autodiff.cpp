// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/autodiff/gradcheck.hpp"
#include "splatmamba/autodiff/ops.hpp"
#include "splatmamba/autodiff/optim.hpp"
#include "splatmamba/autodiff/params.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace sm::ad {
namespace {

Tensor<double> rand_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    return uniform_param<double>(std::move(shape), scale, rng);
}

// Weighted sum with fixed random weights gives a scalar loss that touches every output entry.
Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w(y.numel());
    for (auto& v : w) v = u(rng);
    return sum(mul(y, Tensor<double>(y.shape(), w)));
}

TEST(Tensor, ShapeAndLeafState) {
    Tensor<float> t({2, 3}, true);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_TRUE(t.requires_grad());
    EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Backward, RequiresScalarLoss) {
    Tensor<double> x({2}, {1, 2}, true);
    EXPECT_THROW(backward(scale(x, 2.0)), UsageError);
}

TEST(Backward, TwiceDoublesLeafGrads) {
    std::mt19937_64 rng(1);
    auto x = rand_tensor({3, 4}, rng);
    auto w = rand_tensor({5, 4}, rng);
    auto loss = probe(silu(linear(x, w)));
    backward(loss);
    const std::vector<double> once(x.grad().begin(), x.grad().end());
    backward(loss);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(x.grad()[i], 2.0 * once[i]);
}

TEST(Backward, ConstantsDoNotRecord) {
    Tensor<double> a({2}, {1, 2}), b({2}, {3, 4});
    EXPECT_FALSE(add(a, b).requires_grad());
}

TEST(Ops, MatmulValues) {
    Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6}), b({3, 2}, {7, 8, 9, 10, 11, 12});
    const auto c = matmul(a, b);
    EXPECT_EQ(c.shape(), (Shape{2, 2}));
    EXPECT_DOUBLE_EQ(c.data()[0], 58);
    EXPECT_DOUBLE_EQ(c.data()[3], 154);
    EXPECT_THROW(matmul(a, a), DimensionError);
}

TEST(Ops, SoftmaxRowsSumToOne) {
    Tensor<double> x({2, 3}, {1, 2, 3, 1000, 1000, 1000});
    const auto s = softmax(x, 1);
    EXPECT_NEAR(s.data()[0] + s.data()[1] + s.data()[2], 1.0, 1e-15);
    EXPECT_NEAR(s.data()[4], 1.0 / 3.0, 1e-15);
}

TEST(Ops, LayerNormStatistics) {
    std::mt19937_64 rng(2);
    auto x = rand_tensor({4, 16}, rng, 3.0);
    const auto y = layer_norm(x, Tensor<double>{}, Tensor<double>{});
    for (std::size_t r = 0; r < 4; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 16; ++c) m += y.data()[r * 16 + c];
        m /= 16;
        for (std::size_t c = 0; c < 16; ++c) v += std::pow(y.data()[r * 16 + c] - m, 2);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v / 16, 1.0, 1e-3);
    }
}

TEST(Ops, CausalConvIgnoresFuture) {
    Tensor<double> x({4, 1}, {1, 0, 0, 0}), k({2, 1}, {0.5, 0.25});
    const auto y = depthwise_conv1d(x, k, true);
    EXPECT_DOUBLE_EQ(y.data()[0], 0.5);
    EXPECT_DOUBLE_EQ(y.data()[1], 0.25);
    EXPECT_DOUBLE_EQ(y.data()[2], 0.0);
}

TEST(Ops, NormalizeRowsFallsBackOnZero) {
    Tensor<double> q({2, 4}, {0, 0, 0, 0, 0, 3, 0, 4});
    const auto n = normalize_rows(q, std::vector<double>{1, 0, 0, 0});
    EXPECT_DOUBLE_EQ(n.data()[0], 1.0);
    EXPECT_DOUBLE_EQ(n.data()[5], 0.6);
    EXPECT_DOUBLE_EQ(n.data()[7], 0.8);
}

TEST(Gradcheck, ElementwiseAndShapeOps) {
    std::mt19937_64 rng(3);
    auto x = rand_tensor({3, 5}, rng);
    auto y = rand_tensor({5}, rng);
    const auto f = [&] {
        auto h = add(mul(sigmoid(x), y), softplus(x));
        h = sub(exp(scale(h, 0.5)), silu(add_scalar(x, 0.2)));
        h = concat_rows<double>({slice_rows(h, 1, 3), slice_rows(h, 0, 1)});
        return probe(clamp_max(reshape(slice_cols(h, 1, 5), {6, 2}), 1.5));
    };
    const auto r = gradcheck(f, {x, y});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Gradcheck, LinearAlgebraAndReductions) {
    std::mt19937_64 rng(4);
    auto x = rand_tensor({4, 6}, rng);
    auto w = rand_tensor({3, 6}, rng);
    auto b = rand_tensor({3}, rng);
    auto g = rand_tensor({3}, rng);
    auto be = rand_tensor({3}, rng);
    auto t = rand_tensor({4, 3}, rng);
    const auto f = [&] {
        auto h = layer_norm(linear(x, w, b), g, be);
        h = softmax(h, 1);
        return add(mse(h, t), mean(matmul(h, reshape(b, {3, 1}))));
    };
    EXPECT_LT(gradcheck(f, {x, w, b, g, be}).max_rel_error, 1e-6);
}

TEST(Gradcheck, ConvAndNormalize) {
    std::mt19937_64 rng(5);
    auto x = rand_tensor({7, 3}, rng);
    auto k = rand_tensor({4, 3}, rng);
    auto q = rand_tensor({5, 4}, rng);
    const auto f = [&] {
        return add(probe(depthwise_conv1d(x, k, true)),
                   add(probe(depthwise_conv1d(x, k, false), 2), probe(normalize_rows(q, std::vector<double>{1, 0, 0, 0}), 3)));
    };
    EXPECT_LT(gradcheck(f, {x, k, q}).max_rel_error, 1e-6);
}

TEST(AdamW, HandComputedFirstStep) {
    Tensor<double> p({1}, {1.0}, true);
    p.mutable_grad()[0] = 0.5;
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    AdamW<double> opt({p}, cfg);
    opt.step();
    // decoupled decay then m_hat / (sqrt(v_hat) + eps) = 0.5 / (0.5 + 1e-8)
    EXPECT_NEAR(p.data()[0], 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_EQ(opt.state().step, 1);
}

TEST(AdamW, RejectsNonFiniteGradient) {
    Tensor<double> p({2}, {1.0, 2.0}, true);
    p.mutable_grad()[1] = std::nan("");
    AdamW<double> opt({p}, AdamWConfig{});
    EXPECT_THROW(opt.step(), NumericalError);
    EXPECT_EQ(p.data()[0], 1.0);
}

TEST(ClipGradNorm, ScalesToMaximum) {
    Tensor<double> a({2}, {0, 0}, true), b({1}, {0}, true);
    a.mutable_grad()[0] = 3.0;
    a.mutable_grad()[1] = 0.0;
    b.mutable_grad()[0] = 4.0;
    EXPECT_DOUBLE_EQ(clip_grad_norm<double>({a, b}, 1.0), 5.0);
    EXPECT_NEAR(grad_norm<double>({a, b}), 1.0, 1e-15);
    EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
}

} // namespace
} // namespace sm::ad
