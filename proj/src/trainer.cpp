#include "agpi/trainer.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <regex>
#include <sstream>

#include "agpi/error.hpp"

namespace agpi {

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kGenerate: return "generate";
    case Phase::kEmbedder: return "embedder";
    case Phase::kDiscriminator: return "discriminator";
    case Phase::kGenerator: return "generator";
  }
  return "?";
}

std::string StepMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["l_id"] = l_id;
  j["l_dual"] = l_dual;
  j["l_cf"] = l_cf;
  j["l_f"] = l_f;
  j["l_dis"] = l_dis;
  j["l_adv"] = l_adv;
  j["l_rec"] = l_rec;
  j["l_gan"] = l_gan;
  j["l_idz"] = l_idz;
  j["l_dis_z"] = l_dis_z;
  return j.dump();
}

// ---- model state -----------------------------------------------------------

namespace {

constexpr std::uint64_t kDataStream = 0xD1B54A32D192ED03ULL;

EmbeddingConfig embedding_for(const TrainConfig& config, int num_identities) {
  EmbeddingConfig e = config.embedding;
  e.num_identities = num_identities;
  return e;
}

}  // namespace

ModelState::ModelState(const TrainConfig& config, int num_identities)
    : data_rng(config.seed ^ kDataStream), config_(config) {
  config_.check();
  if (num_identities < 2) throw ArgumentError("training needs at least 2 identities");
  Rng init(config.seed);
  embedder_ = std::make_unique<Embedder>(embedding_for(config_, num_identities), init);
  generator_ = std::make_unique<Generator>(config_.generator, init);
  DiscriminatorConfig dc;
  dc.feature_dim = config_.embedding.feature_dim;
  dc.num_identities = num_identities;
  dc.binary = config_.binary_discriminator;
  discriminator_ = std::make_unique<Discriminator>(dc, init);
  opt_f_ = std::make_unique<optim::Sgd>(embedder_->params(), config_.sgd);
  opt_g_ = std::make_unique<optim::Adam>(generator_->params(), config_.adam_g);
  opt_d_ = std::make_unique<optim::Adam>(discriminator_->params(), config_.adam_d);
}

CheckpointFile ModelState::to_checkpoint() const {
  CheckpointFile f;
  f.put_tensors("param", embedder_->params().snapshot());
  f.put_tensors("param", generator_->params().snapshot());
  f.put_tensors("param", discriminator_->params().snapshot());
  f.put_tensors("buffer", embedder_->buffers());
  f.put_tensors("opt_f", opt_f_->state());
  f.put_tensors("opt_g", opt_g_->state());
  f.put_tensors("opt_d", opt_d_->state());
  f.texts["config"] = config_.serialize();
  f.texts["num_identities"] = std::to_string(embedder_->config().num_identities);
  f.texts["step"] = std::to_string(step);
  f.texts["data_rng"] = data_rng.serialize();
  return f;
}

void ModelState::load(const CheckpointFile& file) {
  const auto params = file.tensors_under("param");
  embedder_->params().restore(params);
  generator_->params().restore(params);
  discriminator_->params().restore(params);
  embedder_->restore_buffers(file.tensors_under("buffer"));
  opt_f_->load_state(file.tensors_under("opt_f"));
  opt_g_->load_state(file.tensors_under("opt_g"));
  opt_d_->load_state(file.tensors_under("opt_d"));
  try {
    step = std::stol(file.texts.at("step"));
    data_rng.deserialize(file.texts.at("data_rng"));
  } catch (const std::out_of_range&) {
    throw CheckpointError("checkpoint lacks training progress entries");
  } catch (const std::invalid_argument&) {
    throw CheckpointError("checkpoint has a malformed step entry");
  }
}

// ---- batches -----------------------------------------------------------------

PreparedBatch prepare_batch(const data::Dataset& dataset, const data::Batch& batch,
                            const TrainConfig& config, long step, Rng& rng) {
  const int h = config.embedding.image_h, w = config.embedding.image_w;
  data::EraseSchedule erase = config.erase;
  erase.total_steps = config.steps;
  std::vector<data::Image> vis, ir, vis_e, ir_e, style, mask;
  const std::size_t n = batch.visible.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto v = data::preprocess(dataset.samples.at(batch.visible[k]), h, w, rng, config.augment);
    const auto i = data::preprocess(dataset.samples.at(batch.infrared[k]), h, w, rng, config.augment);
    vis.push_back(v.image);
    ir.push_back(i.image);
    data::EraseRegion region;
    vis_e.push_back(config.augment ? data::random_erase(v.image, erase, step, rng, &region) : v.image);
    data::Image& m = mask.emplace_back(h, w, v.image.channels);
    for (int y = region.y0; y < region.y0 + region.h; ++y) {
      for (int x = region.x0; x < region.x0 + region.w; ++x) {
        for (int c = 0; c < m.channels; ++c) m.at(y, x, c) = 1.0;
      }
    }
    ir_e.push_back(config.augment ? data::random_erase(i.image, erase, step, rng) : i.image);
  }
  const std::size_t p = static_cast<std::size_t>(batch.per_identity);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t block = k / p * p;
    style.push_back(ir[block + static_cast<std::size_t>(rng.below(p))]);
  }
  const auto stack = [](const std::vector<data::Image>& images) {
    std::vector<const data::Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    return data::to_tensor(ptrs);
  };
  PreparedBatch out;
  out.visible = stack(vis);
  out.infrared = stack(ir);
  out.style = stack(style);
  out.visible_erased = stack(vis_e);
  out.infrared_erased = stack(ir_e);
  out.visible_erase_mask = stack(mask);
  out.labels = batch.labels(dataset, data::Modality::kVisible);
  return out;
}

// ---- one step ----------------------------------------------------------------

namespace {

double finite_value(const ag::Var& loss, const char* name, long step) {
  const double v = loss.item();
  if (!std::isfinite(v)) {
    throw NumericalError(name, "non-finite " + std::string(name) + " at step " + std::to_string(step + 1));
  }
  return v;
}

// Clears requires_grad on a module for the current scope.
class FreezeScope {
 public:
  explicit FreezeScope(nn::ParameterSet& params) : params_(params) { params_.set_trainable(false); }
  ~FreezeScope() { params_.set_trainable(true); }
  FreezeScope(const FreezeScope&) = delete;
  FreezeScope& operator=(const FreezeScope&) = delete;

 private:
  nn::ParameterSet& params_;
};

std::vector<int> repeat(const std::vector<int>& labels, int times) {
  std::vector<int> out;
  for (int t = 0; t < times; ++t) out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

}  // namespace

StepMetrics train_step(ModelState& state, const PreparedBatch& batch, const PhaseObserver& observer) {
  const TrainConfig& cfg = state.config();
  Embedder& F = state.embedder();
  Generator& G = state.generator();
  Discriminator& D = state.discriminator();
  const bool full = cfg.mode == TrainMode::kFull;
  const std::vector<int>& y = batch.labels;
  const int num_ids = F.config().num_identities;
  StepMetrics m;
  m.step = state.step + 1;
  const auto notify = [&](Phase p) {
    if (observer) observer(p, state);
  };

  // Generate. The graph through G is kept for the generator update; F and D
  // updates in between leave G's parameters untouched.
  ag::Var z, reconstructed;
  if (full) {
    G.params().zero_grad();
    ag::Var style;
    {
      ag::NoGradGuard no_grad;
      style = G.encode_style(ag::Var(batch.style)).detach();
    }
    z = G.generate_intermediate(ag::Var(batch.visible), style);
    reconstructed = G.reconstruct_infrared(ag::Var(batch.infrared));
    state.last_intermediate = z.value();
    notify(Phase::kGenerate);
  }

  // Embedder update.
  ag::Var dv, di, dz;  // normalized, detached
  ag::Var rv, ri, rz;  // raw, detached; what D sees
  {
    F.params().zero_grad();
    std::vector<ag::Var> inputs = {ag::Var(batch.visible_erased), ag::Var(batch.infrared_erased)};
    std::vector<ImageFamily> families = {ImageFamily::kVisible, ImageFamily::kInfrared};
    if (full) {
      // z carries the same erased patch as its visible source, so paired
      // features see the same occlusion.
      Tensor z_erased = z.value();
      for (std::size_t k = 0; k < z_erased.size(); ++k) {
        if (batch.visible_erase_mask[k] != 0.0) z_erased[k] = batch.visible_erased[k];
      }
      inputs.push_back(ag::Var(z_erased));
      families.push_back(ImageFamily::kIntermediate);
    }
    const std::vector<ag::Var> feats = F.embed_batch(inputs, families, /*update_statistics=*/true);
    const ag::Var& fv = feats[0];
    const ag::Var& fi = feats[1];
    const ag::Var nv = ag::l2_normalize_rows(fv);
    const ag::Var ni = ag::l2_normalize_rows(fi);
    ag::Var id, tri, cf;
    if (full) {
      const ag::Var& fz = feats[2];
      const ag::Var nz = ag::l2_normalize_rows(fz);
      const ag::Var pooled_id[] = {fv, fz, fi};
      const ag::Var pair_id[] = {fv, fi};
      id = cfg.id_on_intermediate ? losses::cross_entropy_id(F.classify(ag::concat_rows(pooled_id)), repeat(y, 3))
                                  : losses::cross_entropy_id(F.classify(ag::concat_rows(pair_id)), repeat(y, 2));
      if (cfg.triplet == TripletMode::kDual) {
        losses::BatchFeatures bf{{nv, y}, {nz, y}, {ni, y}};
        tri = losses::dual_triplet_loss(bf, cfg.weights.margin_m2, cfg.weights.soft_margin);
      } else {
        const ag::Var parts[] = {nv, ni, nz};
        tri = losses::batch_hard_triplet_loss({ag::concat_rows(parts), repeat(y, 3)}, cfg.weights.margin_m2,
                                              cfg.weights.soft_margin);
      }
      cf = losses::color_free_loss(nv, nz);
      dz = nz.detach();
      rz = fz.detach();
    } else {
      const ag::Var pair_id[] = {fv, fi};
      id = losses::cross_entropy_id(F.classify(ag::concat_rows(pair_id)), repeat(y, 2));
      const ag::Var parts[] = {nv, ni};
      tri = losses::batch_hard_triplet_loss({ag::concat_rows(parts), repeat(y, 2)}, cfg.weights.margin_m2,
                                            cfg.weights.soft_margin);
      cf = ag::Var(Tensor::scalar(0.0));
    }
    const ag::Var total = losses::embedding_total(id, tri, cf, cfg.weights);
    m.l_id = finite_value(id, "l_id", state.step);
    m.l_dual = finite_value(tri, "l_dual", state.step);
    m.l_cf = finite_value(cf, "l_cf", state.step);
    m.l_f = finite_value(total, "l_f", state.step);
    ag::backward(total);
    state.embedder_optimizer().step();
    dv = nv.detach();
    di = ni.detach();
    rv = fv.detach();
    ri = fi.detach();
    notify(Phase::kEmbedder);
  }

  if (!full) {
    ++state.step;
    return m;
  }

  // Discriminator update on features that carry no path back into F.
  {
    D.params().zero_grad();
    std::vector<ag::Var> parts = {rv};
    std::vector<int> targets;
    for (int label : y) {
      targets.push_back(D.config().target(expand_label(label, LabelModality::kVisibleOrIntermediate, num_ids)));
    }
    if (cfg.dis_on_intermediate) {
      parts.push_back(rz);
      for (int label : y) {
        targets.push_back(D.config().target(expand_label(label, LabelModality::kVisibleOrIntermediate, num_ids)));
      }
    }
    parts.push_back(ri);
    for (int label : y) {
      targets.push_back(D.config().target(expand_label(label, LabelModality::kInfrared, num_ids)));
    }
    const ag::Var logits = D.discriminate(ag::concat_rows(parts));
    const ag::Var loss = losses::discriminator_loss(logits, targets);
    m.l_dis = finite_value(loss, "l_dis", state.step);
    {
      ag::NoGradGuard no_grad;
      std::vector<int> z_targets;
      for (int label : y) {
        z_targets.push_back(D.config().target(expand_label(label, LabelModality::kVisibleOrIntermediate, num_ids)));
      }
      m.l_dis_z = losses::discriminator_loss(D.discriminate(rz), z_targets).item();
    }
    ag::backward(loss);
    state.discriminator_optimizer().step();
    notify(Phase::kDiscriminator);
  }

  // Generator update with F and D frozen.
  {
    FreezeScope freeze_f(F.params());
    FreezeScope freeze_d(D.params());
    const ag::Var fz = F.embed(z, ImageFamily::kIntermediate);
    const ag::Var nz = ag::l2_normalize_rows(fz);
    const ag::Var idz = losses::cross_entropy_id(F.classify(fz), y);
    losses::FamilyCenters centers{losses::batch_centers(nz, y), losses::batch_centers(di, y),
                                  losses::batch_centers(dv, y)};
    const ag::Var adv = losses::adversarial_loss(D.discriminate(fz), y, centers, cfg.weights.margin_m1, num_ids,
                                                 cfg.binary_discriminator);
    const ag::Var rec = losses::reconstruction_loss(reconstructed, ag::Var(batch.infrared));
    const ag::Var total = losses::generator_total(rec, idz, adv, cfg.weights);
    m.l_idz = finite_value(idz, "l_idz", state.step);
    m.l_adv = finite_value(adv, "l_adv", state.step);
    m.l_rec = finite_value(rec, "l_rec", state.step);
    m.l_gan = finite_value(total, "l_gan", state.step);
    ag::backward(total);
    state.generator_optimizer().step();
  }
  notify(Phase::kGenerator);
  ++state.step;
  return m;
}

// ---- checkpoints ---------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const ModelState& state,
                     const std::vector<int>& sampler_order, std::size_t sampler_cursor) {
  CheckpointFile f = state.to_checkpoint();
  std::ostringstream order;
  for (std::size_t i = 0; i < sampler_order.size(); ++i) order << (i ? "," : "") << sampler_order[i];
  f.texts["sampler_order"] = order.str();
  f.texts["sampler_cursor"] = std::to_string(sampler_cursor);
  write_checkpoint(path, f);
}

std::unique_ptr<ModelState> load_checkpoint(const std::filesystem::path& path, std::vector<int>* sampler_order,
                                            std::size_t* sampler_cursor) {
  const CheckpointFile f = read_checkpoint(path);
  const auto text = [&](const char* key) -> const std::string& {
    auto it = f.texts.find(key);
    if (it == f.texts.end()) throw CheckpointError(path.string() + " lacks the '" + key + "' entry");
    return it->second;
  };
  TrainConfig config;
  try {
    config = parse_config(text("config"));
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": stored config is invalid: " + e.what());
  }
  int num_ids = 0;
  try {
    num_ids = std::stoi(text("num_identities"));
  } catch (const std::logic_error&) {
    throw CheckpointError(path.string() + ": malformed num_identities entry");
  }
  auto state = std::make_unique<ModelState>(config, num_ids);
  state->load(f);
  if (sampler_order) {
    sampler_order->clear();
    std::istringstream in(text("sampler_order"));
    std::string item;
    while (std::getline(in, item, ',')) sampler_order->push_back(std::stoi(item));
  }
  if (sampler_cursor) *sampler_cursor = std::stoul(text("sampler_cursor"));
  return state;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, long step) {
  char name[64];
  std::snprintf(name, sizeof name, "step_%08ld.ckpt", step);
  return run_dir / "checkpoints" / name;
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir) {
  const auto dir = run_dir / "checkpoints";
  if (!std::filesystem::is_directory(dir)) return std::nullopt;
  static const std::regex pattern(R"(step_(\d+)\.ckpt)");
  std::optional<std::filesystem::path> best;
  long best_step = -1;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch match;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, match, pattern)) continue;
    const long s = std::stol(match[1].str());
    if (s > best_step) {
      best_step = s;
      best = entry.path();
    }
  }
  return best;
}

// ---- training loop -------------------------------------------------------------

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Keeps the metrics records of steps <= last_step.
void truncate_metrics(const std::filesystem::path& path, long last_step) {
  std::ifstream in(path);
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) continue;
    if (j["step"].get<long>() <= last_step) kept += line + "\n";
  }
  in.close();
  write_text(path, kept);
}

}  // namespace

std::filesystem::path train(const TrainConfig& config, const data::Dataset& dataset,
                            const std::filesystem::path& run_dir, const TrainOptions& options) {
  config.check();
  if (dataset.split != data::Split::kTrain) throw ValidationError("training needs the TRAIN split");
  data::BatchSampler sampler(dataset, config.b, config.p);
  std::filesystem::create_directories(run_dir / "checkpoints");
  std::filesystem::create_directories(run_dir / "reports");
  const auto metrics_path = run_dir / "metrics.jsonl";

  std::unique_ptr<ModelState> state;
  const auto latest = options.resume ? latest_checkpoint(run_dir) : std::nullopt;
  if (latest) {
    std::vector<int> order;
    std::size_t cursor = 0;
    state = load_checkpoint(*latest, &order, &cursor);
    if (state->config().hash() != config.hash()) {
      throw ConfigError("config differs from the one stored in " + latest->string() + "; refusing to resume");
    }
    if (state->embedder().config().num_identities != dataset.num_identities) {
      throw ValidationError("dataset has " + std::to_string(dataset.num_identities) +
                            " identities but the checkpoint was trained on " +
                            std::to_string(state->embedder().config().num_identities));
    }
    sampler.restore(std::move(order), cursor);
    truncate_metrics(metrics_path, state->step);
  } else {
    state = std::make_unique<ModelState>(config, dataset.num_identities);
    write_text(metrics_path, "");
  }
  write_text(run_dir / "config.txt", config.serialize());

  std::ofstream metrics(metrics_path, std::ios::app);
  std::filesystem::path last;
  if (latest && state->step >= config.steps) return *latest;
  while (state->step < config.steps) {
    const data::Batch batch = sampler.next(state->data_rng);
    const PreparedBatch prepared = prepare_batch(dataset, batch, config, state->step, state->data_rng);
    const StepMetrics m = train_step(*state, prepared);
    metrics << m.to_json() << "\n" << std::flush;
    if (options.on_step) options.on_step(m);
    const bool extra = std::find(options.checkpoint_steps.begin(), options.checkpoint_steps.end(), state->step) !=
                       options.checkpoint_steps.end();
    if (state->step % config.checkpoint_every == 0 || state->step == config.steps || extra) {
      last = checkpoint_path(run_dir, state->step);
      save_checkpoint(last, *state, sampler.order(), sampler.cursor());
    }
  }
  return last;
}

}  // namespace agpi
