#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "agpi/discriminator.hpp"
#include "agpi/error.hpp"
#include "agpi/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace {

using namespace agpi;
using agpi::test_util::gradient_error;
using agpi::test_util::random_leaf;
using agpi::test_util::random_tensor;

constexpr double kOracle = 1e-6;

ag::Var mat(int rows, int cols, std::vector<double> values) {
  return ag::Var(Tensor({rows, cols}, std::move(values)));
}

ag::Var scalar(double v) { return ag::Var(Tensor::scalar(v)); }

using agpi::oracle::softplus;

// ---- identity / discriminator cross-entropy ---------------------------------

TEST(CrossEntropy, Examples) {
  const std::vector<int> y0 = {0};
  EXPECT_NEAR(losses::cross_entropy_id(mat(1, 4, {0, 0, 0, 0}), std::vector<int>{2}).item(), std::log(4.0), kOracle);
  EXPECT_NEAR(losses::cross_entropy_id(mat(1, 3, {1000, 0, 0}), y0).item(), 0.0, kOracle);
  EXPECT_NEAR(losses::cross_entropy_id(mat(1, 2, {1.0, 0.0}), y0).item(), 0.3133, 1e-4);
  EXPECT_NEAR(losses::cross_entropy_id(mat(1, 2, {1.0, 0.0}), y0).item(), std::log1p(std::exp(-1.0)), 1e-12);
}

TEST(DiscriminatorLoss, Examples) {
  EXPECT_NEAR(losses::discriminator_loss(ag::Var(Tensor({1, 16})), std::vector<int>{7}).item(), std::log(16.0),
              kOracle);
  std::vector<double> saturated(16, 0.0);
  saturated[9] = 1000.0;
  EXPECT_NEAR(losses::discriminator_loss(mat(1, 16, saturated), std::vector<int>{9}).item(), 0.0, kOracle);

  Rng rng(1);
  const Tensor logits = random_tensor({4, 6}, rng, -2, 2);
  const std::vector<int> labels = {0, 5, 2, 3};
  double mean = 0.0;
  for (int r = 0; r < 4; ++r) {
    const Tensor one({1, 6}, std::vector<double>(logits.data() + r * 6, logits.data() + r * 6 + 6));
    mean += losses::discriminator_loss(ag::Var(one), std::vector<int>{labels[static_cast<std::size_t>(r)]}).item() / 4;
  }
  EXPECT_NEAR(losses::discriminator_loss(ag::Var(logits), labels).item(), mean, 1e-12);
}

// ---- centers and the adversarial objective ----------------------------------

TEST(Centers, Examples) {
  auto c = losses::batch_centers(mat(2, 2, {0.3, 0.7, 0.3, 0.7}), std::vector<int>{4, 4});
  ASSERT_EQ(c.identities, std::vector<int>{4});
  EXPECT_NEAR(c.centers.value()[0], 0.3, 1e-15);
  EXPECT_NEAR(c.centers.value()[1], 0.7, 1e-15);

  c = losses::batch_centers(mat(3, 2, {1, 0, 5, 5, 0, 1}), std::vector<int>{2, 0, 2});
  EXPECT_EQ(c.identities, (std::vector<int>{0, 2}));
  EXPECT_EQ(c.row_of(2), 1);
  EXPECT_NEAR(c.centers.value()[2], 0.5, 1e-15);
  EXPECT_NEAR(c.centers.value()[3], 0.5, 1e-15);
  EXPECT_NEAR(c.centers.value()[0], 5.0, 1e-15);
  EXPECT_THROW(c.row_of(1), ArgumentError);

  EXPECT_THROW(losses::batch_centers(mat(2, 2, {1, 2, 3, 4}), std::vector<int>{0}), ArgumentError);
  EXPECT_THROW(losses::batch_centers(ag::Var(Tensor({0, 2})), std::vector<int>{}), ArgumentError);
}

// Centers placed on a line so the two distances are exactly the given values.
double hinge_at(double d_zi, double d_zv, double m1) {
  const ag::Var cz = mat(1, 2, {0, 0});
  const ag::Var ci = mat(1, 2, {d_zi, 0});
  const ag::Var cv = mat(1, 2, {0, d_zv});
  return losses::center_hinge(cz, ci, cv, m1).value()[0];
}

TEST(AdversarialHinge, Examples) {
  EXPECT_NEAR(hinge_at(0.2, 0.5, 0.1), 0.0, kOracle);
  EXPECT_NEAR(hinge_at(0.5, 0.2, 0.1), 0.4, kOracle);
  EXPECT_NEAR(hinge_at(0.0, 0.0, 0.1), 0.1, kOracle);
}

TEST(AdversarialHinge, NeverIncreasesAsZApproachesInfrared) {
  Rng rng(2);
  for (int probe = 0; probe < 200; ++probe) {
    const double d_zv = rng.uniform(0, 2);
    const double m1 = rng.uniform(0, 0.5);
    double previous = std::numeric_limits<double>::infinity();
    for (double d_zi = 2.0; d_zi >= 0.0; d_zi -= 0.05) {
      const double h = hinge_at(d_zi, d_zv, m1);
      EXPECT_LE(h, previous + 1e-15);
      previous = h;
    }
  }
}

losses::FamilyCenters centers_for(const ag::Var& z, const ag::Var& i, const ag::Var& v, std::span<const int> y) {
  return {losses::batch_centers(z, y), losses::batch_centers(i, y), losses::batch_centers(v, y)};
}

TEST(AdversarialLoss, CombinesCrossEntropyTowardInfraredSlotAndHinge) {
  const int n = 3;
  const std::vector<int> y = {0, 2};
  const ag::Var z = mat(2, 2, {0, 0, 1, 1});
  const ag::Var i = mat(2, 2, {0.5, 0, 1, 1});
  const ag::Var v = mat(2, 2, {0, 0.2, 1, 1});
  const auto centers = centers_for(z, i, v, y);
  const ag::Var uniform(Tensor({2, 2 * n}));
  // uniform logits: CE = ln(2N) per sample; hinge rows 0.4 and 0.1
  EXPECT_NEAR(losses::adversarial_loss(uniform, y, centers, 0.1, n).item(), std::log(6.0) + 0.25, kOracle);

  std::vector<double> sat(12, 0.0);
  sat[1] = 1000.0;  // 2*0+1
  sat[6 + 5] = 1000.0;  // 2*2+1
  EXPECT_NEAR(losses::adversarial_loss(mat(2, 6, sat), y, centers, 0.1, n).item(), 0.25, kOracle);
  // binary head: target is the modality bit 1
  EXPECT_NEAR(losses::adversarial_loss(mat(2, 2, {-500, 500, -500, 500}), y, centers, 0.1, n, true).item(), 0.25,
              kOracle);
  EXPECT_THROW(losses::adversarial_loss(uniform, std::vector<int>{0, 1}, centers, 0.1, n), ArgumentError);
}

// ---- generator-side losses ----------------------------------------------------

TEST(Reconstruction, Examples) {
  Rng rng(3);
  const ag::Var a(random_tensor({2, 3, 4, 4}, rng, 0, 1));
  EXPECT_EQ(losses::reconstruction_loss(a, a).item(), 0.0);
  EXPECT_NEAR(losses::reconstruction_loss(ag::Var(Tensor({1, 3, 2, 2}, 0.0)), ag::Var(Tensor({1, 3, 2, 2}, 1.0))).item(),
              1.0, kOracle);
  EXPECT_NEAR(losses::reconstruction_loss(ag::Var(Tensor({1, 3, 2, 2}, 0.25)), ag::Var(Tensor({1, 3, 2, 2}, 0.75))).item(),
              0.5, kOracle);
  EXPECT_THROW(losses::reconstruction_loss(a, ag::Var(Tensor({2, 3, 4, 5}))), ArgumentError);
}

TEST(GeneratorTotal, Examples) {
  losses::LossWeights w;
  EXPECT_NEAR(losses::generator_total(scalar(1.0), scalar(2.0), scalar(3.0), w).item(), 3.3, kOracle);
  EXPECT_EQ(losses::generator_total(scalar(0), scalar(0), scalar(0), w).item(), 0.0);
  w.lambda_adv = 0.0;
  EXPECT_EQ(losses::generator_total(scalar(1.25), scalar(2.5), scalar(7.0), w).item(), 3.75);
}

// ---- embedding-side losses ----------------------------------------------------

TEST(ColorFree, Examples) {
  Rng rng(4);
  const ag::Var f(random_tensor({3, 5}, rng));
  EXPECT_EQ(losses::color_free_loss(f, f).item(), 0.0);
  EXPECT_NEAR(losses::color_free_loss(mat(1, 2, {1, 0}), mat(1, 2, {0, 0})).item(), 1.0, kOracle);
  EXPECT_NEAR(losses::color_free_loss(mat(2, 2, {1, 0, 0, 3}), mat(2, 2, {0, 0, 0, 0})).item(), 2.0, kOracle);
  EXPECT_THROW(losses::color_free_loss(mat(2, 2, {1, 0, 0, 3}), mat(1, 2, {0, 0})), ArgumentError);
}

TEST(Triplet, Examples) {
  // D(a,p) = 0, D(a,n) = 10
  EXPECT_NEAR(losses::triplet_loss(mat(1, 2, {0, 0}), mat(1, 2, {0, 0}), mat(1, 2, {10, 0}), 0.3).item(),
              softplus(-9.7), 1e-12);
  EXPECT_NEAR(losses::triplet_loss(mat(1, 2, {0, 0}), mat(1, 2, {0, 0}), mat(1, 2, {10, 0}), 0.3).item(), 6.1e-5,
              1e-6);
  EXPECT_NEAR(losses::triplet_loss(mat(1, 2, {0, 0}), mat(1, 2, {1, 0}), mat(1, 2, {0, 1}), 0.3).item(), 0.8544,
              1e-4);
  const ag::Var a = mat(1, 2, {0.6, 0.8});
  EXPECT_NEAR(losses::triplet_loss(a, a, a, 0.0).item(), std::log(2.0), kOracle);
  // hinge variant
  EXPECT_NEAR(losses::triplet_loss(mat(1, 2, {0, 0}), mat(1, 2, {1, 0}), mat(1, 2, {0, 1}), 0.3, false).item(), 0.3,
              kOracle);
  EXPECT_EQ(losses::triplet_loss(mat(1, 2, {0, 0}), mat(1, 2, {0, 0}), mat(1, 2, {10, 0}), 0.3, false).item(), 0.0);
}

TEST(DualTriplet, HandPlacedTwoIdentities) {
  // identity 0 near (1, 0), identity 1 near (0, 1)
  const std::vector<int> y = {0, 1};
  const ag::Var v = mat(2, 2, {1.0, 0.1, 0.1, 1.0});
  const ag::Var z = mat(2, 2, {0.8, 0.0, 0.5, 0.9});
  const ag::Var i = mat(2, 2, {0.9, -0.2, -0.1, 0.7});
  const losses::BatchFeatures batch{{v, y}, {z, y}, {i, y}};
  const double expected = oracle::directed_triplet(v.value(), y, i.value(), y, z.value(), y, 0.3) +
                          oracle::directed_triplet(i.value(), y, z.value(), y, v.value(), y, 0.3);
  EXPECT_NEAR(losses::dual_triplet_loss(batch, 0.3).item(), expected, 1e-12);
  // by hand: anchor v0, p=i0 at 0.3162, n=z1 at 0.9434
  const double t00 = softplus(0.3 + std::sqrt(0.01 + 0.09) - std::sqrt(0.25 + 0.64));
  EXPECT_NEAR(oracle::directed_triplet(v.value(), y, i.value(), y, z.value(), y, 0.3),
              (t00 + softplus(0.3 + std::sqrt(0.04 + 0.09) - std::sqrt(0.49 + 1.0))) / 2, 1e-12);
}

TEST(DualTriplet, AlignedWellSeparatedIdentitiesGiveTwiceSoftplus) {
  const std::vector<int> y = {0, 1};
  const double gap = 20.0;
  const ag::Var f = mat(2, 2, {0, 0, gap, 0});
  const losses::BatchFeatures batch{{f, y}, {f, y}, {f, y}};
  EXPECT_NEAR(losses::dual_triplet_loss(batch, 0.3).item(), 2 * softplus(0.3 - gap), 1e-15);
  EXPECT_LT(losses::dual_triplet_loss(batch, 0.3).item(), 1e-8);
}

TEST(DualTriplet, SwappingVisibleAndInfraredRolesIsSymmetric) {
  Rng rng(5);
  const std::vector<int> y = {0, 0, 1, 1, 2, 2};
  const ag::Var v(random_tensor({6, 3}, rng));
  const ag::Var z(random_tensor({6, 3}, rng));
  const ag::Var i(random_tensor({6, 3}, rng));
  const double total = losses::dual_triplet_loss({{v, y}, {z, y}, {i, y}}, 0.3).item();
  const double swapped = losses::directed_triplet_loss({i, y}, {z, y}, {v, y}, 0.3).item() +
                         losses::directed_triplet_loss({v, y}, {i, y}, {z, y}, 0.3).item();
  EXPECT_NEAR(total, swapped, 1e-14);
}

TEST(DualTriplet, MatchesExhaustiveOracleOnRandomSmallBatches) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const int b = rng.uniform_int(2, 3);
    const int p = rng.uniform_int(1, 2);
    const int dim = rng.uniform_int(2, 4);
    std::vector<int> y;
    for (int k = 0; k < b; ++k) {
      for (int j = 0; j < p; ++j) y.push_back(k);
    }
    const Tensor v = random_tensor({b * p, dim}, rng);
    const Tensor z = random_tensor({b * p, dim}, rng);
    const Tensor i = random_tensor({b * p, dim}, rng);
    const double m2 = rng.uniform(0, 0.5);
    const double got = losses::dual_triplet_loss({{ag::Var(v), y}, {ag::Var(z), y}, {ag::Var(i), y}}, m2).item();
    const double want = oracle::directed_triplet(v, y, i, y, z, y, m2) + oracle::directed_triplet(i, y, z, y, v, y, m2);
    ASSERT_NEAR(got, want, 1e-12) << "trial " << trial;
  }
}

TEST(DualTriplet, MissingRolesAreRejected) {
  const std::vector<int> y = {0, 1};
  const ag::Var f = mat(2, 2, {0, 0, 1, 0});
  EXPECT_THROW(losses::dual_triplet_loss({{f, y}, {ag::Var(), {}}, {f, y}}, 0.3), ArgumentError);
  // no negative identity anywhere
  const std::vector<int> same = {0, 0};
  EXPECT_THROW(losses::dual_triplet_loss({{f, same}, {f, same}, {f, same}}, 0.3), ArgumentError);
}

TEST(BatchHardTriplet, AnchorIsNotItsOwnPositive) {
  // Two identities with two samples each on a line.
  const std::vector<int> y = {0, 0, 1, 1};
  const ag::Var f = mat(4, 1, {0.0, 1.0, 3.0, 3.5});
  // anchor 0: p=1 (1.0), n=2 (3.0); anchor 1: p=0 (1.0), n=2 (2.0)
  // anchor 2: p=3 (0.5), n=1 (2.0); anchor 3: p=2 (0.5), n=1 (2.5)
  const double want = (softplus(0.3 + 1 - 3) + softplus(0.3 + 1 - 2) + softplus(0.3 + 0.5 - 2) +
                       softplus(0.3 + 0.5 - 2.5)) / 4;
  EXPECT_NEAR(losses::batch_hard_triplet_loss({f, y}, 0.3).item(), want, 1e-12);
}

TEST(EmbeddingTotal, Examples) {
  losses::LossWeights w;
  EXPECT_NEAR(losses::embedding_total(scalar(1.0), scalar(1.0), scalar(0.1), w).item(), 3.0, kOracle);
  EXPECT_EQ(losses::embedding_total(scalar(0), scalar(0), scalar(0), w).item(), 0.0);
  w.lambda_cf = 0.0;
  EXPECT_EQ(losses::embedding_total(scalar(1.5), scalar(0.25), scalar(9.0), w).item(), 1.75);
}

TEST(LossWeights, Validation) {
  losses::LossWeights w;
  EXPECT_NO_THROW(w.check());
  w.margin_m1 = -0.1;
  EXPECT_THROW(w.check(), ArgumentError);
  w = {};
  w.lambda_cf = -1;
  EXPECT_THROW(w.check(), ArgumentError);
}

TEST(Losses, NonnegativeOnRandomInputs) {
  Rng rng(7);
  const std::vector<int> y = {0, 0, 1, 1, 2};
  for (int trial = 0; trial < 50; ++trial) {
    const ag::Var a(random_tensor({5, 4}, rng, -3, 3));
    const ag::Var b(random_tensor({5, 4}, rng, -3, 3));
    const ag::Var c(random_tensor({5, 4}, rng, -3, 3));
    EXPECT_GE(losses::cross_entropy_id(a, y).item(), 0.0);
    EXPECT_GE(losses::color_free_loss(a, b).item(), 0.0);
    EXPECT_GE(losses::triplet_loss(a, b, c, 0.3).item(), 0.0);
    EXPECT_GE(losses::triplet_loss(a, b, c, 0.3, false).item(), 0.0);
    EXPECT_GE(losses::dual_triplet_loss({{a, y}, {b, y}, {c, y}}, 0.3).item(), 0.0);
    EXPECT_GE(losses::reconstruction_loss(a, b).item(), 0.0);
    EXPECT_GE(losses::adversarial_loss(ag::Var(random_tensor({5, 6}, rng)), y, centers_for(a, b, c, y), 0.1, 3).item(),
              0.0);
  }
}

// ---- gradients ------------------------------------------------------------------

TEST(LossGradients, MatchFiniteDifferences) {
  const std::vector<int> y = {0, 1, 1, 2, 0};
  for (int probe = 0; probe < 5; ++probe) {
    Rng rng(300 + probe);
    const ag::Var logits = random_leaf({5, 3}, rng, -2, 2);
    const ag::Var dlogits = random_leaf({5, 6}, rng, -2, 2);
    const ag::Var a = random_leaf({5, 4}, rng);
    const ag::Var b = random_leaf({5, 4}, rng);
    const ag::Var c = random_leaf({5, 4}, rng);
    const ag::Var img = random_leaf({5, 1, 2, 2}, rng, 0, 1);
    // targets kept 0.05 away from the inputs so |x - t| has no kink within the step
    Tensor t = img.value();
    for (std::size_t k = 0; k < t.size(); ++k) t[k] += (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.05, 0.5);
    const ag::Var target(t);
    const std::vector<int> expanded = {0, 3, 2, 5, 1};
    const double tol = 1e-3;
    EXPECT_LT(gradient_error([&] { return losses::cross_entropy_id(logits, y); }, {logits}), tol);
    EXPECT_LT(gradient_error([&] { return losses::discriminator_loss(dlogits, expanded); }, {dlogits}), tol);
    EXPECT_LT(gradient_error(
                  [&] {
                    return losses::adversarial_loss(dlogits, y, centers_for(a, b, c, y), 0.5, 3);
                  },
                  {dlogits, a, b, c}),
              tol);
    EXPECT_LT(gradient_error([&] { return losses::reconstruction_loss(img, target); }, {img}), tol);
    EXPECT_LT(gradient_error([&] { return losses::color_free_loss(a, b); }, {a, b}), tol);
    EXPECT_LT(gradient_error([&] { return losses::triplet_loss(a, b, c, 0.3); }, {a, b, c}), tol);
    EXPECT_LT(gradient_error([&] { return losses::dual_triplet_loss({{a, y}, {b, y}, {c, y}}, 0.3); }, {a, b, c}), tol);
    const std::vector<int> paired = {0, 1, 1, 0, 1};
    EXPECT_LT(gradient_error([&] { return losses::batch_hard_triplet_loss({a, paired}, 0.3); }, {a}), tol);
    // through normalization, as the trainer uses them
    EXPECT_LT(gradient_error(
                  [&] {
                    return losses::color_free_loss(ag::l2_normalize_rows(a), ag::l2_normalize_rows(b));
                  },
                  {a, b}),
              tol);
    const ag::Var s1 = random_leaf({}, rng), s2 = random_leaf({}, rng), s3 = random_leaf({}, rng);
    EXPECT_LT(gradient_error([&] { return losses::generator_total(s1, s2, s3, {}); }, {s1, s2, s3}), tol);
    EXPECT_LT(gradient_error([&] { return losses::embedding_total(s1, s2, s3, {}); }, {s1, s2, s3}), tol);
  }
}

}  // namespace
