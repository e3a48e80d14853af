#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "agpi/data.hpp"
#include "agpi/error.hpp"
#include "agpi/evaluation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace agpi {
namespace {

using eval::DistanceMatrix;

DistanceMatrix matrix(int rows, int cols, std::vector<double> values) {
  DistanceMatrix dm;
  dm.rows = rows;
  dm.cols = cols;
  dm.values = std::move(values);
  return dm;
}

TEST(PairwiseDistances, Examples) {
  const Tensor q({3, 2}, {1, 0, 0, 1, -1, 0});
  const Tensor g({1, 2}, {1, 0});
  const DistanceMatrix dm = eval::pairwise_distances(q, g);
  ASSERT_EQ(dm.rows, 3);
  ASSERT_EQ(dm.cols, 1);
  EXPECT_NEAR(dm.at(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(dm.at(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(dm.at(2, 0), 2.0, 1e-15);
}

TEST(PairwiseDistances, ScaleInvariantAndBounded) {
  Rng rng(4);
  const Tensor q = test_util::random_tensor({5, 7}, rng);
  const Tensor g = test_util::random_tensor({6, 7}, rng);
  Tensor q3 = q;
  for (std::size_t i = 0; i < q3.size(); ++i) q3[i] *= 3.0;
  const DistanceMatrix a = eval::pairwise_distances(q, g);
  const DistanceMatrix b = eval::pairwise_distances(q3, g);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
    EXPECT_GE(a.values[i], 0.0);
    EXPECT_LE(a.values[i], 2.0);
  }
}

TEST(PairwiseDistances, Errors) {
  EXPECT_THROW(eval::pairwise_distances(Tensor({1, 2}, {0, 0}), Tensor({1, 2}, {1, 0})), ArgumentError);
  EXPECT_THROW(eval::pairwise_distances(Tensor({1, 2}, {1, 0}), Tensor({1, 3}, {1, 0, 0})),
               ArgumentError);
}

TEST(Cmc, PerfectRetrieval) {
  const std::vector<int> q{0}, g{0, 1};
  const auto curve = eval::cmc(matrix(1, 2, {0.1, 0.5}), q, g, 2);
  EXPECT_DOUBLE_EQ(curve[0], 1.0);
}

TEST(Cmc, RankOneAndRankThree) {
  const std::vector<int> q{0, 1}, g{0, 1, 2, 3};
  // query 0 matches at rank 1; query 1's match is third nearest.
  const auto curve = eval::cmc(matrix(2, 4, {0.1, 0.4, 0.5, 0.6, 0.2, 0.15, 0.1, 0.0}), q, g, 4);
  EXPECT_DOUBLE_EQ(curve[0], 0.5);
  EXPECT_DOUBLE_EQ(curve[1], 0.5);
  EXPECT_DOUBLE_EQ(curve[2], 1.0);
  EXPECT_DOUBLE_EQ(curve[3], 1.0);
}

TEST(Cmc, ReversedOrdering) {
  const std::vector<int> q{0}, g{1, 2, 0};
  const auto curve = eval::cmc(matrix(1, 3, {0.0, 0.1, 2.0}), q, g, 3);
  EXPECT_DOUBLE_EQ(curve[0], 0.0);
  EXPECT_DOUBLE_EQ(curve[2], 1.0);
}

TEST(Cmc, MissingIdentityNamesIt) {
  const std::vector<int> q{7}, g{0, 1};
  try {
    eval::cmc(matrix(1, 2, {0.1, 0.2}), q, g, 2);
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find('7'), std::string::npos);
  }
  EXPECT_THROW(eval::mean_average_precision(matrix(1, 2, {0.1, 0.2}), q, g), ProtocolError);
}

TEST(Map, Examples) {
  const std::vector<int> q{0}, g{0, 1, 0, 1};
  EXPECT_NEAR(eval::mean_average_precision(matrix(1, 4, {0.1, 0.2, 0.3, 0.4}), q, g), 5.0 / 6.0, 1e-15);
  const std::vector<int> g_last{1, 1, 1, 0};
  EXPECT_NEAR(eval::mean_average_precision(matrix(1, 4, {0.1, 0.2, 0.3, 0.4}), q, g_last), 0.25, 1e-15);
  const std::vector<int> q2{0, 1}, g2{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(
      eval::mean_average_precision(matrix(2, 4, {0.1, 0.2, 0.5, 0.6, 0.9, 0.8, 0.1, 0.2}), q2, g2), 1.0);
}

TEST(Cameras, SameIdentitySameCameraIsDropped) {
  const std::vector<int> q{0}, g{0, 0, 1};
  const std::vector<int> qc{1}, gc{1, 2, 2};
  const DistanceMatrix dm = matrix(1, 3, {0.0, 0.5, 0.2});
  const eval::Cameras cams{qc, gc};
  // Without filtering the same-camera match is at rank 1.
  EXPECT_DOUBLE_EQ(eval::cmc(dm, q, g, 1)[0], 1.0);
  EXPECT_DOUBLE_EQ(eval::cmc(dm, q, g, 1, cams)[0], 0.0);
  EXPECT_DOUBLE_EQ(eval::mean_average_precision(dm, q, g, cams), 0.5);
}

TEST(RetrievalProperties, MatchBruteForceOnSmallProtocols) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int nq = rng.uniform_int(1, 4);
    const int ng = rng.uniform_int(1, 6);
    const int ids = rng.uniform_int(1, 3);
    std::vector<int> g(static_cast<std::size_t>(ng));
    for (int& v : g) v = rng.uniform_int(0, ids - 1);
    std::vector<int> q(static_cast<std::size_t>(nq));
    for (int& v : q) v = g[static_cast<std::size_t>(rng.below(g.size()))];
    std::vector<double> d(static_cast<std::size_t>(nq * ng));
    // Coarse values so that ties are common.
    for (double& v : d) v = 0.25 * rng.uniform_int(0, 8);
    const DistanceMatrix dm = matrix(nq, ng, d);
    const oracle::Retrieval o = oracle::retrieval(dm, q, g);
    const auto curve = eval::cmc(dm, q, g, ng);
    const double map = eval::mean_average_precision(dm, q, g);
    for (int k = 0; k < ng; ++k) {
      EXPECT_NEAR(curve[static_cast<std::size_t>(k)], o.cmc[static_cast<std::size_t>(k)], 1e-12);
      if (k > 0) EXPECT_GE(curve[static_cast<std::size_t>(k)], curve[static_cast<std::size_t>(k - 1)]);
    }
    EXPECT_DOUBLE_EQ(curve.back(), 1.0);
    EXPECT_NEAR(map, o.map, 1e-12);
    EXPECT_GE(map, 0.0);
    EXPECT_LE(map, 1.0);
  }
}

TEST(RetrievalProperties, GalleryPermutationInvariance) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const int nq = rng.uniform_int(1, 4), ng = rng.uniform_int(2, 8);
    std::vector<int> g(static_cast<std::size_t>(ng));
    for (int& v : g) v = rng.uniform_int(0, 2);
    std::vector<int> q(static_cast<std::size_t>(nq));
    for (int& v : q) v = g[static_cast<std::size_t>(rng.below(g.size()))];
    // Distinct distances: with ties the stable index order makes the ranking
    // depend on gallery order by design.
    std::vector<double> d(static_cast<std::size_t>(nq * ng));
    for (double& v : d) v = rng.uniform(0.0, 2.0);
    std::vector<int> perm(static_cast<std::size_t>(ng));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    std::vector<int> gp(g.size());
    std::vector<double> dp(d.size());
    for (int j = 0; j < ng; ++j) {
      gp[static_cast<std::size_t>(j)] = g[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])];
      for (int i = 0; i < nq; ++i) {
        dp[static_cast<std::size_t>(i * ng + j)] = d[static_cast<std::size_t>(i * ng + perm[static_cast<std::size_t>(j)])];
      }
    }
    const DistanceMatrix a = matrix(nq, ng, d), b = matrix(nq, ng, dp);
    EXPECT_EQ(eval::cmc(a, q, g, ng), eval::cmc(b, q, gp, ng));
    EXPECT_NEAR(eval::mean_average_precision(a, q, g), eval::mean_average_precision(b, q, gp), 1e-14);
  }
}

TEST(RetrievalProperties, TiesBreakByGalleryIndex) {
  const std::vector<int> q{0}, g{1, 0};
  EXPECT_DOUBLE_EQ(eval::cmc(matrix(1, 2, {0.5, 0.5}), q, g, 1)[0], 0.0);
  const std::vector<int> g2{0, 1};
  EXPECT_DOUBLE_EQ(eval::cmc(matrix(1, 2, {0.5, 0.5}), q, g2, 1)[0], 1.0);
}

class ProtocolTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data::ToySpec spec;
    spec.train_ids = 2;
    spec.test_ids = 8;
    spec.per_id = 10;
    spec.height = 16;
    spec.width = 8;
    splits_ = new data::ToySplits(data::synthesize_toy_splits(spec));
  }
  static void TearDownTestSuite() { delete splits_; }
  static data::ToySplits* splits_;
};
data::ToySplits* ProtocolTest::splits_ = nullptr;

TEST_F(ProtocolTest, Sizes) {
  const auto single = eval::build_protocol(splits_->query, splits_->gallery, eval::Shot::kSingle, 3);
  EXPECT_EQ(single.gallery.size(), 8u);
  EXPECT_EQ(std::set<int>(single.gallery_labels.begin(), single.gallery_labels.end()).size(), 8u);
  EXPECT_EQ(single.query.size(), splits_->query.samples.size());
  EXPECT_EQ(single.query_modality, data::Modality::kInfrared);
  EXPECT_EQ(single.gallery_modality, data::Modality::kVisible);
  const auto multi = eval::build_protocol(splits_->query, splits_->gallery, eval::Shot::kMulti, 3);
  EXPECT_EQ(multi.gallery.size(), 80u);
}

TEST_F(ProtocolTest, Deterministic) {
  const auto a = eval::build_protocol(splits_->query, splits_->gallery, eval::Shot::kSingle, 5);
  const auto b = eval::build_protocol(splits_->query, splits_->gallery, eval::Shot::kSingle, 5);
  EXPECT_EQ(a.gallery, b.gallery);
  EXPECT_EQ(a.query, b.query);
  EXPECT_EQ(a.gallery_labels, b.gallery_labels);
  bool differs = false;
  for (std::uint64_t s = 6; s < 12 && !differs; ++s) {
    differs = eval::build_protocol(splits_->query, splits_->gallery, eval::Shot::kSingle, s).gallery != a.gallery;
  }
  EXPECT_TRUE(differs);
}

TEST_F(ProtocolTest, MissingIdentityIsProtocolError) {
  data::Dataset gallery = splits_->gallery;
  std::erase_if(gallery.samples, [](const data::ImageSample& s) { return s.identity == 2; });
  EXPECT_THROW(eval::build_protocol(splits_->query, gallery, eval::Shot::kSingle, 1), ProtocolError);
  EXPECT_THROW(eval::build_protocol(splits_->gallery, splits_->gallery, eval::Shot::kSingle, 1),
               ProtocolError);
}

TEST(Mmd, IdenticalSetsAreZero) {
  Rng rng(1);
  const Tensor a = test_util::random_tensor({9, 4}, rng);
  EXPECT_NEAR(eval::mmd(a, a, 1.0), 0.0, 1e-9);
  EXPECT_NEAR(eval::mmd(a, a, eval::Bandwidth::median_heuristic()).value, 0.0, 1e-9);
}

TEST(Mmd, ThreePointSetsMatchDoubleLoop) {
  const Tensor a({3, 1}, {0.0, 0.5, 1.5});
  const Tensor b({3, 1}, {1.0, 2.0, -0.5});
  EXPECT_NEAR(eval::mmd(a, b, 1.0), oracle::mmd(a, b, 1.0), 1e-15);
}

TEST(Mmd, MatchesDoubleLoopUpToTwentyRows) {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const int m = rng.uniform_int(2, 20), n = trial % 3 == 0 ? m : rng.uniform_int(2, 20);
    const int d = rng.uniform_int(1, 5);
    const Tensor a = test_util::random_tensor({m, d}, rng);
    const Tensor b = test_util::random_tensor({n, d}, rng, -0.5, 1.5);
    const double sigma = rng.uniform(0.3, 2.0);
    EXPECT_NEAR(eval::mmd(a, b, sigma), oracle::mmd(a, b, sigma), 1e-13);
  }
}

TEST(Mmd, SymmetricBitForBit) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = rng.uniform_int(2, 12), n = rng.uniform_int(2, 12);
    const Tensor a = test_util::random_tensor({m, 3}, rng);
    const Tensor b = test_util::random_tensor({n, 3}, rng);
    EXPECT_EQ(eval::mmd(a, b, 0.8), eval::mmd(b, a, 0.8));
    EXPECT_EQ(eval::mmd(a, b, eval::Bandwidth::median_heuristic()).value,
              eval::mmd(b, a, eval::Bandwidth::median_heuristic()).value);
  }
}

TEST(Mmd, FarSeparatedClusters) {
  Rng rng(5);
  Tensor a({40, 1}), b({40, 1});
  for (int i = 0; i < 40; ++i) {
    a[static_cast<std::size_t>(i)] = -10.0 + 0.01 * rng.normal();
    b[static_cast<std::size_t>(i)] = 10.0 + 0.01 * rng.normal();
  }
  EXPECT_NEAR(eval::mmd(a, b, 1.0), 2.0, 1e-3);
}

TEST(Mmd, Errors) {
  const Tensor one({1, 2}, {0, 1});
  const Tensor two({2, 2}, {0, 1, 1, 0});
  EXPECT_THROW(eval::mmd(one, two, 1.0), ArgumentError);
  EXPECT_THROW(eval::mmd(two, Tensor({2, 3}), 1.0), ArgumentError);
  EXPECT_THROW(eval::mmd(two, two, 0.0), ArgumentError);
}

TEST(Mmd, MedianBandwidth) {
  const Tensor a({2, 1}, {0.0, 1.0});
  const Tensor b({2, 1}, {3.0, 7.0});
  const Tensor* sets[] = {&a, &b};
  // pairwise distances 1, 3, 7, 2, 6, 4 -> median of six is (3 + 4) / 2
  EXPECT_DOUBLE_EQ(eval::median_pairwise_distance(sets), 3.5);
  EXPECT_DOUBLE_EQ(eval::mmd(a, b, eval::Bandwidth::median_heuristic()).sigma, 3.5);
  const Tensor same({3, 1}, {2.0, 2.0, 2.0});
  const Tensor* flat[] = {&same};
  EXPECT_DOUBLE_EQ(eval::median_pairwise_distance(flat), 1.0);
}

TEST(Bridging, CopiedVisibleFeatures) {
  Rng rng(6);
  const Tensor v = test_util::random_tensor({12, 5}, rng);
  const Tensor i = test_util::random_tensor({12, 5}, rng, 0.5, 1.5);
  const std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
  const auto r = eval::bridging_from_features(v, i, v, labels, labels, labels,
                                              eval::Bandwidth::median_heuristic());
  EXPECT_NEAR(r.mmd_vz, 0.0, 1e-12);
  EXPECT_TRUE(r.bridges_v);
  EXPECT_GT(r.mmd_vi, 0.0);
  EXPECT_NEAR(r.mmd_iz, r.mmd_vi, 1e-12);
  EXPECT_NEAR(r.center_mmd_vz, 0.0, 1e-12);
  EXPECT_EQ(r.samples_per_family, 12);
  EXPECT_GT(r.sigma, 0.0);
}

TEST(Bridging, ReportFromUntrainedModels) {
  const data::Dataset ds = data::synthesize_toy_dataset(4, 3, 64, 32, 2);
  Rng rng(7);
  EmbeddingConfig ec;
  ec.num_identities = 4;
  Embedder embedder(ec, rng);
  Generator generator(GeneratorConfig{}, rng);
  for (auto space : {eval::FeatureSpace::kEmbedding, eval::FeatureSpace::kPixels}) {
    eval::BridgingOptions opt;
    opt.space = space;
    const auto r = eval::bridging_report(embedder, generator, ds, opt);
    EXPECT_EQ(r.samples_per_family, 12);
    EXPECT_TRUE(std::isfinite(r.mmd_vi) && std::isfinite(r.mmd_vz) && std::isfinite(r.mmd_iz));
    EXPECT_EQ(r.bridges_v, r.mmd_vz <= r.mmd_vi);
    EXPECT_EQ(r.bridges_i, r.mmd_iz <= r.mmd_vi);
    EXPECT_EQ(r.features, space == eval::FeatureSpace::kEmbedding ? "embedding" : "pixels");
  }
}

TEST(GenerateForVisible, StyleComesFromSameIdentity) {
  const data::Dataset ds = data::synthesize_toy_dataset(3, 4, 64, 32, 4);
  Rng rng(8);
  Generator generator(GeneratorConfig{}, rng);
  std::vector<std::size_t> vis, sty;
  const Tensor z = eval::generate_for_visible(generator, ds, 9, &vis, &sty, 5);
  ASSERT_EQ(vis.size(), 12u);
  EXPECT_EQ(z.dim(0), 12);
  for (std::size_t k = 0; k < vis.size(); ++k) {
    EXPECT_EQ(ds.samples[vis[k]].modality, data::Modality::kVisible);
    EXPECT_EQ(ds.samples[sty[k]].modality, data::Modality::kInfrared);
    EXPECT_EQ(ds.samples[vis[k]].identity, ds.samples[sty[k]].identity);
  }
  // Batching does not change the result.
  EXPECT_EQ(z, eval::generate_for_visible(generator, ds, 9, nullptr, nullptr, 32));
}

TEST(Spearman, Examples) {
  const std::vector<double> x{1, 2, 3, 4}, y{10, 20, 30, 40}, r{4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(eval::spearman(x, y), 1.0);
  EXPECT_DOUBLE_EQ(eval::spearman(x, r), -1.0);
  // Ties take average ranks: ranks of y2 are 1.5, 1.5, 3, 4.
  const std::vector<double> y2{5, 5, 6, 7};
  EXPECT_NEAR(eval::spearman(x, y2), 4.5 / std::sqrt(5.0 * 4.5), 1e-12);
  EXPECT_THROW(eval::spearman(std::vector<double>{1}, std::vector<double>{1}), ArgumentError);
}

}  // namespace
}  // namespace agpi
