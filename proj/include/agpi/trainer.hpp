#pragma once

// Joint training of the embedder F, the generator G and the discriminator D.
//
// Every step runs four phases on one batch:
//   generate       z = G(v, style(i)) and i* = G(i, style(i)), styles detached
//   embedder       update F on v, detached z and i (SGD with momentum)
//   discriminator  update D on detached features of v, z and i (Adam)
//   generator      update G with F and D frozen (Adam)
// Only the named module's parameters change in each update phase.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agpi/checkpoint.hpp"
#include "agpi/data.hpp"
#include "agpi/discriminator.hpp"
#include "agpi/embedding.hpp"
#include "agpi/generator.hpp"
#include "agpi/losses.hpp"
#include "agpi/optim.hpp"
#include "agpi/rng.hpp"

namespace agpi {

enum class TrainMode { kFull, kVisibleInfrared };
enum class TripletMode { kDual, kPlain };

struct TrainConfig {
  int b = 8;
  int p = 4;
  long steps = 0;
  std::uint64_t seed = 0;

  TrainMode mode = TrainMode::kFull;
  TripletMode triplet = TripletMode::kDual;
  // Identity loss over v, z and i; only v and i when unset.
  bool id_on_intermediate = true;
  // The discriminator also learns from intermediate features (label 2y).
  bool dis_on_intermediate = true;
  bool binary_discriminator = false;
  bool augment = true;

  optim::SgdOptions sgd;
  optim::AdamOptions adam_g;
  optim::AdamOptions adam_d;
  losses::LossWeights weights;
  data::EraseSchedule erase;  // total_steps follows `steps`

  EmbeddingConfig embedding;
  GeneratorConfig generator;

  long checkpoint_every = 500;

  void check() const;
  // Canonical key=value text, one key per line in a fixed order.
  std::string serialize() const;
  // FNV-1a of serialize(), as 16 hex digits.
  std::string hash() const;
};

// Parses key=value lines; '#' starts a comment. b, p, steps and seed are
// required. Errors carry the line number or the missing key.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

struct StepMetrics {
  long step = 0;
  double l_id = 0, l_dual = 0, l_cf = 0, l_f = 0;
  double l_dis = 0;
  double l_dis_z = 0;  // D's loss on intermediate features alone (label 2y)
  double l_adv = 0, l_rec = 0, l_idz = 0, l_gan = 0;

  std::string to_json() const;
};

// Preprocessed tensors of one batch. style[j] is an infrared image of the
// same identity as visible[j].
struct PreparedBatch {
  Tensor visible;           // G content input
  Tensor infrared;          // G reconstruction input and target
  Tensor style;             // G style input
  Tensor visible_erased;    // F inputs
  Tensor infrared_erased;
  Tensor visible_erase_mask;  // 1 inside the rectangle erased from visible_erased
  std::vector<int> labels;  // shared by all five tensors row by row
};

enum class Phase { kGenerate, kEmbedder, kDiscriminator, kGenerator };
std::string_view phase_name(Phase p);

// Everything that evolves during training.
class ModelState {
 public:
  ModelState(const TrainConfig& config, int num_identities);
  ModelState(const ModelState&) = delete;
  ModelState& operator=(const ModelState&) = delete;

  const TrainConfig& config() const { return config_; }
  Embedder& embedder() { return *embedder_; }
  const Embedder& embedder() const { return *embedder_; }
  Generator& generator() { return *generator_; }
  const Generator& generator() const { return *generator_; }
  Discriminator& discriminator() { return *discriminator_; }
  const Discriminator& discriminator() const { return *discriminator_; }
  optim::Sgd& embedder_optimizer() { return *opt_f_; }
  optim::Adam& generator_optimizer() { return *opt_g_; }
  optim::Adam& discriminator_optimizer() { return *opt_d_; }

  long step = 0;
  Rng data_rng;  // batch sampling, augmentation, style pairing
  Tensor last_intermediate;  // z from the latest generate phase

  CheckpointFile to_checkpoint() const;
  // Restores parameters, optimizer state, step and data RNG.
  void load(const CheckpointFile& file);

 private:
  TrainConfig config_;
  std::unique_ptr<Embedder> embedder_;
  std::unique_ptr<Generator> generator_;
  std::unique_ptr<Discriminator> discriminator_;
  std::unique_ptr<optim::Sgd> opt_f_;
  std::unique_ptr<optim::Adam> opt_g_;
  std::unique_ptr<optim::Adam> opt_d_;
};

PreparedBatch prepare_batch(const data::Dataset& dataset, const data::Batch& batch,
                            const TrainConfig& config, long step, Rng& rng);

using PhaseObserver = std::function<void(Phase, const ModelState&)>;

// One joint update; `observer` runs after every phase. Throws NumericalError
// naming the loss that became non-finite.
StepMetrics train_step(ModelState& state, const PreparedBatch& batch,
                       const PhaseObserver& observer = nullptr);

void save_checkpoint(const std::filesystem::path& path, const ModelState& state,
                     const std::vector<int>& sampler_order = {}, std::size_t sampler_cursor = 0);
// Rebuilds the model from the config stored in the checkpoint.
std::unique_ptr<ModelState> load_checkpoint(const std::filesystem::path& path,
                                            std::vector<int>* sampler_order = nullptr,
                                            std::size_t* sampler_cursor = nullptr);

struct TrainOptions {
  bool resume = false;
  // Called after each step with its metrics; may be empty.
  std::function<void(const StepMetrics&)> on_step;
  // Extra checkpoint steps on top of checkpoint_every and the final step.
  std::vector<long> checkpoint_steps;
};

// Run directory layout:
//   config.txt, metrics.jsonl, checkpoints/step_<n>.ckpt, reports/
// Returns the final checkpoint path.
std::filesystem::path train(const TrainConfig& config, const data::Dataset& dataset,
                            const std::filesystem::path& run_dir, const TrainOptions& options = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, long step);
// Highest-step checkpoint in run_dir, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

}  // namespace agpi
