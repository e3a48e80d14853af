#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "agpi/checkpoint.hpp"
#include "agpi/error.hpp"
#include "agpi/nn.hpp"
#include "agpi/optim.hpp"
#include "test_util.hpp"

namespace {

using namespace agpi;
namespace fs = std::filesystem;

TEST(ParameterSet, NamesSnapshotRestore) {
  Rng rng(1);
  nn::ParameterSet params("module");
  params.add("w", nn::he_normal({3, 2}, 2, rng));
  params.add("b", Tensor({3}));
  EXPECT_EQ(params.scalar_count(), 9u);
  EXPECT_TRUE(params.at("module.w").requires_grad());
  auto snap = params.snapshot();
  ASSERT_TRUE(snap.contains("module.w"));
  snap["module.w"].fill(0.5);
  params.restore(snap);
  EXPECT_DOUBLE_EQ(params.at("module.w").value()[4], 0.5);
  snap["module.b"] = Tensor({4});
  EXPECT_THROW(params.restore(snap), CheckpointError);
  snap.erase("module.b");
  EXPECT_THROW(params.restore(snap), CheckpointError);
  params.set_trainable(false);
  EXPECT_FALSE(params.at("module.b").requires_grad());
}

TEST(SpatialAttention, RowsSumToOne) {
  Rng rng(2);
  const ag::Var q(test_util::random_tensor({2, 3, 5}, rng));
  const ag::Var k(test_util::random_tensor({2, 3, 4}, rng));
  const ag::Var v(test_util::random_tensor({2, 6, 4}, rng));
  const auto out = nn::spatial_attention(q, k, v);
  ASSERT_EQ(out.aggregated.shape(), (Shape{2, 6, 5}));
  ASSERT_EQ(out.weights.shape(), (Shape{2, 5, 4}));
  for (int r = 0; r < 10; ++r) {
    double s = 0;
    for (int c = 0; c < 4; ++c) {
      const double w = out.weights.value()[static_cast<std::size_t>(r * 4 + c)];
      EXPECT_GE(w, 0.0);
      s += w;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Sgd, MomentumAndWeightDecayByHand) {
  nn::ParameterSet params("p");
  auto w = params.add("w", Tensor({1}, std::vector<double>{1.0}));
  optim::Sgd sgd(params, {0.1, 0.9, 0.01});
  w.node()->grad = Tensor({1}, std::vector<double>{0.5});
  sgd.step();
  // v = 0.5 + 0.01 * 1 = 0.51; w = 1 - 0.051
  EXPECT_NEAR(w.value()[0], 0.949, 1e-15);
  sgd.step();
  // v = 0.9 * 0.51 + 0.5 + 0.01 * 0.949 = 0.96849
  EXPECT_NEAR(w.value()[0], 0.949 - 0.096849, 1e-15);
  EXPECT_TRUE(sgd.state().contains("velocity.p.w"));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  nn::ParameterSet params("p");
  auto w = params.add("w", Tensor({2}, std::vector<double>{1.0, -1.0}));
  optim::Adam adam(params, {0.01, 0.9, 0.999, 1e-8});
  w.node()->grad = Tensor({2}, std::vector<double>{3.0, -0.2});
  adam.step();
  EXPECT_NEAR(w.value()[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(w.value()[1], -1.0 + 0.01, 1e-9);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Optimizers, SkipParametersWithoutGradient) {
  nn::ParameterSet params("p");
  auto w = params.add("w", Tensor({1}, std::vector<double>{2.0}));
  optim::Sgd sgd(params, {});
  optim::Adam adam(params, {});
  sgd.step();
  adam.step();
  EXPECT_EQ(w.value()[0], 2.0);
}

TEST(Optimizers, StateRoundTrip) {
  nn::ParameterSet params("p");
  auto w = params.add("w", Tensor({2}, std::vector<double>{1.0, 2.0}));
  optim::Adam a(params, {});
  w.node()->grad = Tensor({2}, std::vector<double>{0.1, 0.2});
  a.step();
  a.step();
  optim::Adam b(params, {});
  b.load_state(a.state());
  EXPECT_EQ(b.steps(), 2);
  EXPECT_EQ(a.state(), b.state());
  std::map<std::string, Tensor> bad = {{"junk", Tensor::scalar(1)}};
  EXPECT_THROW(b.load_state(bad), CheckpointError);
}

CheckpointFile sample_file() {
  CheckpointFile f;
  f.tensors["a.w"] = Tensor({2, 2}, std::vector<double>{1, 2, 3, 4});
  f.tensors["a.b"] = Tensor::scalar(-0.5);
  f.texts["config"] = "b=8\np=2\n";
  return f;
}

TEST(Checkpoint, SerializeParseRoundTripIsByteStable) {
  const CheckpointFile f = sample_file();
  const std::string bytes = serialize_checkpoint(f);
  const CheckpointFile g = parse_checkpoint(bytes);
  EXPECT_EQ(g.tensors, f.tensors);
  EXPECT_EQ(g.texts, f.texts);
  EXPECT_EQ(serialize_checkpoint(g), bytes);
  EXPECT_EQ(bytes.substr(0, 8), "AGPICKPT");
}

TEST(Checkpoint, TruncationAndCorruptionAreDetected) {
  const std::string bytes = serialize_checkpoint(sample_file());
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() - 1}) {
    EXPECT_THROW(parse_checkpoint(bytes.substr(0, cut)), CheckpointError) << cut;
  }
  std::string flipped = bytes;
  flipped[30] ^= 0x10;
  try {
    parse_checkpoint(flipped);
    FAIL() << "corruption not detected";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt"), std::string::npos);
  }
}

TEST(Checkpoint, VersionMismatchIsExplicit) {
  CheckpointFile f = sample_file();
  f.version = 99;
  const std::string bytes = serialize_checkpoint(f);
  try {
    parse_checkpoint(bytes);
    FAIL() << "version mismatch accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, FileRoundTripAndPrefixes) {
  const fs::path dir = fs::temp_directory_path() / "agpi_ckpt_test";
  fs::create_directories(dir);
  CheckpointFile f = sample_file();
  f.put_tensors("opt", {{"m.x", Tensor::scalar(2)}});
  write_checkpoint(dir / "c.ckpt", f);
  const CheckpointFile g = read_checkpoint(dir / "c.ckpt");
  EXPECT_EQ(g.tensors_under("opt").at("m.x").item(), 2.0);
  EXPECT_EQ(g.tensors_under("a").size(), 2u);
  EXPECT_THROW(read_checkpoint(dir / "missing.ckpt"), LoadError);
  fs::remove_all(dir);
}

}  // namespace
