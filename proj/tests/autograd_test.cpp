#include <gtest/gtest.h>

#include <cmath>

#include "agpi/autograd.hpp"
#include "agpi/error.hpp"
#include "test_util.hpp"

namespace {

using namespace agpi;
using agpi::test_util::gradient_error;
using agpi::test_util::random_leaf;
using agpi::test_util::random_tensor;

constexpr double kTol = 1e-3;

TEST(Tensor, ShapeAndReshape) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.dim(-1), 3);
  EXPECT_EQ(shape_string(t.shape()), "[2,3]");
  const Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.dim(0), 3);
  EXPECT_THROW(t.reshaped({4, 2}), ArgumentError);
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_THROW(t.item(), ArgumentError);
  t[2] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Autograd, ElementwiseGradients) {
  Rng rng(1);
  for (int probe = 0; probe < 5; ++probe) {
    auto a = random_leaf({3, 4}, rng);
    auto b = random_leaf({3, 4}, rng);
    EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::add(a, b), ag::sub(a, b))); }, {a, b}), kTol);
    EXPECT_LT(gradient_error([&] { return ag::mean(ag::sigmoid(ag::scale(a, 2.0))); }, {a}), kTol);
    EXPECT_LT(gradient_error([&] { return ag::sum(ag::softplus(ag::add_scalar(a, 0.3))); }, {a}), kTol);
    EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::leaky_relu(a, 0.2), b)); }, {a, b}), kTol);
    EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::relu(a), b)); }, {a, b}), kTol);
    EXPECT_LT(gradient_error([&] { return ag::mean(ag::abs(a)); }, {a}), kTol);
  }
}

TEST(Autograd, SoftplusIsStableForLargeInputs) {
  const ag::Var x(Tensor({3}, std::vector<double>{-800.0, 0.0, 800.0}));
  const ag::Var y = ag::softplus(x);
  EXPECT_NEAR(y.value()[0], 0.0, 1e-300);
  EXPECT_NEAR(y.value()[1], std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(y.value()[2], 800.0);
}

TEST(Autograd, MatmulGradientsAllLayouts) {
  Rng rng(2);
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      auto a = random_leaf(ta ? Shape{4, 3} : Shape{3, 4}, rng);
      auto b = random_leaf(tb ? Shape{5, 4} : Shape{4, 5}, rng);
      auto w = ag::Var(random_tensor({3, 5}, rng));
      EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::matmul(a, b, ta, tb), w)); }, {a, b}), kTol);
      auto ba = random_leaf(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, rng);
      auto bb = random_leaf(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, rng);
      auto bw = ag::Var(random_tensor({2, 3, 5}, rng));
      EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::matmul(ba, bb, ta, tb), bw)); }, {ba, bb}), kTol);
    }
  }
}

TEST(Autograd, LinearAndShapeOps) {
  Rng rng(3);
  auto x = random_leaf({4, 3}, rng);
  auto w = random_leaf({2, 3}, rng);
  auto bias = random_leaf({2}, rng);
  auto probe = ag::Var(random_tensor({4, 2}, rng));
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::linear(x, w, bias), probe)); }, {x, w, bias}), kTol);
  const std::vector<int> rows = {3, 0, 3, 1};
  auto probe2 = ag::Var(random_tensor({4, 3}, rng));
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::gather_rows(x, rows), probe2)); }, {x}), kTol);
  auto y = random_leaf({2, 3}, rng);
  auto probe3 = ag::Var(random_tensor({6, 3}, rng));
  EXPECT_LT(gradient_error(
                [&] {
                  const ag::Var parts[] = {x, y};
                  return ag::sum(ag::mul(ag::concat_rows(parts), probe3));
                },
                {x, y}),
            kTol);
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::reshape(x, {3, 4}), ag::reshape(probe2, {3, 4}))); },
                           {x}),
            kTol);
}

TEST(Autograd, ConvolutionGradients) {
  Rng rng(4);
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      auto x = random_leaf({2, 3, 5, 4}, rng);
      auto w = random_leaf({2, 3, k, k}, rng);
      auto b = random_leaf({2}, rng);
      ag::Conv2dOptions opt{stride, k / 2};
      const ag::Var out = ag::conv2d(x, w, b, opt);
      auto probe = ag::Var(random_tensor(out.shape(), rng));
      EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::conv2d(x, w, b, opt), probe)); }, {x, w, b}), kTol)
          << "stride " << stride << " kernel " << k;
    }
  }
}

TEST(Autograd, ConvolutionMatchesDirectSum) {
  Rng rng(5);
  const Tensor x = random_tensor({1, 2, 4, 3}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const ag::Var out = ag::conv2d(ag::Var(x), ag::Var(w), ag::Var(), {2, 1});
  ASSERT_EQ(out.shape(), (Shape{1, 3, 2, 2}));
  for (int co = 0; co < 3; ++co) {
    for (int oy = 0; oy < 2; ++oy) {
      for (int ox = 0; ox < 2; ++ox) {
        double s = 0;
        for (int ci = 0; ci < 2; ++ci) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 4 || ix < 0 || ix >= 3) continue;
              s += x[static_cast<std::size_t>((ci * 4 + iy) * 3 + ix)] *
                   w[static_cast<std::size_t>(((co * 2 + ci) * 3 + ky) * 3 + kx)];
            }
          }
        }
        EXPECT_NEAR(out.value()[static_cast<std::size_t>((co * 2 + oy) * 2 + ox)], s, 1e-12);
      }
    }
  }
}

TEST(Autograd, PoolingAndResampling) {
  Rng rng(6);
  auto x = random_leaf({2, 3, 2, 3}, rng);
  auto p1 = ag::Var(random_tensor({2, 3, 4, 6}, rng));
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::upsample_nearest2x(x), p1)); }, {x}), kTol);
  auto p2 = ag::Var(random_tensor({2, 3, 5, 2}, rng));
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::resample_nearest(x, 5, 2), p2)); }, {x}), kTol);
  auto p3 = ag::Var(random_tensor({2, 3}, rng));
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::global_avg_pool(x), p3)); }, {x}), kTol);
}

TEST(Autograd, SoftmaxCrossEntropyAndNorms) {
  Rng rng(7);
  auto x = random_leaf({3, 5}, rng, -2, 2);
  auto probe = ag::Var(random_tensor({3, 5}, rng));
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::softmax_lastdim(x), probe)); }, {x}), kTol);
  const std::vector<int> labels = {4, 0, 2};
  EXPECT_LT(gradient_error([&] { return ag::cross_entropy(x, labels); }, {x}), kTol);
  auto p1 = ag::Var(random_tensor({3}, rng));
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::row_norms(x), p1)); }, {x}), kTol);
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::l2_normalize_rows(x), probe)); }, {x}), kTol);

  const ag::Var unit = ag::l2_normalize_rows(x);
  for (int r = 0; r < 3; ++r) {
    double n = 0;
    for (int c = 0; c < 5; ++c) n += unit.value()[static_cast<std::size_t>(r * 5 + c)] * unit.value()[static_cast<std::size_t>(r * 5 + c)];
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
  }
  const ag::Var zero = ag::l2_normalize_rows(ag::Var(Tensor({1, 3})));
  for (double v : zero.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Autograd, NormalizationGradients) {
  Rng rng(12);
  auto x = random_leaf({2, 4, 3, 2}, rng);
  auto gamma = random_leaf({4}, rng, 0.5, 1.5);
  auto beta = random_leaf({4}, rng);
  auto probe = ag::Var(random_tensor({2, 4, 3, 2}, rng));
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::group_norm(x, gamma, beta, 2), probe)); },
                           {x, gamma, beta}),
            kTol);

  auto rows = random_leaf({5, 3}, rng);
  auto scale = random_leaf({3}, rng, 0.5, 1.5);
  auto p = ag::Var(random_tensor({5, 3}, rng));
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::batch_norm(rows, scale, nullptr, nullptr), p)); },
                           {rows, scale}),
            kTol);
  const Tensor mean({3}, 0.2), var({3}, 2.0);
  EXPECT_LT(gradient_error([&] { return ag::sum(ag::mul(ag::batch_norm(rows, scale, &mean, &var), p)); },
                           {rows, scale}),
            kTol);
}

TEST(Autograd, BatchNormStatistics) {
  const ag::Var x(Tensor({2, 2}, {1, 10, 3, 30}));
  const ag::Var ones(Tensor({2}, 1.0));
  Tensor mean, var;
  const ag::Var y = ag::batch_norm(x, ones, nullptr, nullptr, 0.0, &mean, &var);
  EXPECT_DOUBLE_EQ(mean[0], 2.0);
  EXPECT_DOUBLE_EQ(mean[1], 20.0);
  EXPECT_DOUBLE_EQ(var[0], 1.0);
  EXPECT_DOUBLE_EQ(var[1], 100.0);
  EXPECT_DOUBLE_EQ(y.value()[0], -1.0);
  EXPECT_DOUBLE_EQ(y.value()[3], 1.0);
}

TEST(Autograd, CrossEntropyRejectsOutOfRangeLabels) {
  const ag::Var logits(Tensor({2, 3}));
  const std::vector<int> bad = {0, 3};
  EXPECT_THROW(ag::cross_entropy(logits, bad), ArgumentError);
  const std::vector<int> short_labels = {0};
  EXPECT_THROW(ag::cross_entropy(logits, short_labels), ArgumentError);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Rng rng(8);
  auto x = random_leaf({2, 2}, rng);
  {
    ag::NoGradGuard guard;
    EXPECT_FALSE(ag::grad_enabled());
    const ag::Var y = ag::sum(ag::mul(x, x));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ag::grad_enabled());
}

TEST(Autograd, DetachCutsTheGraph) {
  Rng rng(9);
  auto x = random_leaf({2, 2}, rng);
  const ag::Var d = ag::scale(x, 3.0).detach();
  EXPECT_FALSE(d.requires_grad());
  ag::backward(ag::sum(ag::mul(d, x)));
  // Only the direct path contributes: d/dx sum(d * x) = d.
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 3.0 * x.value()[i]);
}

TEST(Autograd, FrozenLeavesReceiveNoGradient) {
  Rng rng(10);
  auto w = random_leaf({2, 2}, rng);
  auto x = random_leaf({2, 2}, rng);
  w.set_requires_grad(false);
  ag::backward(ag::sum(ag::mul(w, x)));
  EXPECT_FALSE(w.has_grad());
  EXPECT_TRUE(x.has_grad());
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
  auto x = ag::Var(Tensor({1}, std::vector<double>{2.0}), true);
  ag::backward(ag::sum(ag::add(ag::mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
}

}  // namespace
