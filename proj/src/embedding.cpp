#include "agpi/embedding.hpp"

#include "agpi/error.hpp"

namespace agpi {

std::string_view family_name(ImageFamily f) {
  switch (f) {
    case ImageFamily::kVisible:
      return "visible";
    case ImageFamily::kIntermediate:
      return "intermediate";
    case ImageFamily::kInfrared:
      return "infrared";
  }
  return "?";
}

void EmbeddingConfig::check() const {
  if (feature_dim < 8) throw ArgumentError("feature_dim must be >= 8");
  if (num_identities < 2) throw ArgumentError("num_identities must be >= 2");
  if (stem_channels < 1 || trunk_channels < 1) throw ArgumentError("channel widths must be positive");
  if (image_h < 8 || image_w < 8) throw ArgumentError("embedder input must be at least 8x8");
  if (norm_groups < 1 || stem_channels % norm_groups != 0 || trunk_channels % norm_groups != 0 ||
      feature_dim % norm_groups != 0) {
    throw ArgumentError("stem, trunk and feature widths must be multiples of norm_groups");
  }
}

NonLocalBlock::NonLocalBlock(nn::ParameterSet& params, const std::string& name, int channels,
                             Rng& rng)
    : inner_(std::max(1, channels / 2)) {
  theta_ = nn::make_pointwise(params, name + ".theta", channels, inner_, rng);
  phi_ = nn::make_pointwise(params, name + ".phi", channels, inner_, rng);
  value_ = nn::make_pointwise(params, name + ".value", channels, inner_, rng);
  out_ = nn::make_pointwise(params, name + ".out", inner_, channels, rng, /*zero=*/true);
}

NonLocalBlock::Output NonLocalBlock::forward(const ag::Var& x) const {
  const int b = x.dim(0), h = x.dim(2), w = x.dim(3);
  const Shape flat{b, inner_, h * w};
  auto att = nn::spatial_attention(ag::reshape(theta_(x), flat), ag::reshape(phi_(x), flat),
                                   ag::reshape(value_(x), flat));
  ag::Var y = out_(ag::reshape(att.aggregated, {b, inner_, h, w}));
  return {ag::add(x, y), att.weights};
}

Embedder::Embedder(const EmbeddingConfig& config, Rng& rng)
    : config_(config), params_("embedding") {
  config_.check();
  const int sc = config_.stem_channels, tc = config_.trunk_channels;
  stem_visible_ = make_block("stem.visible", config_.channels, sc, 1, rng);
  if (!config_.tie_stems) {
    stem_intermediate_ = make_block("stem.intermediate", config_.channels, sc, 1, rng);
  }
  stem_infrared_ = make_block("stem.infrared", config_.channels, sc, 1, rng);
  stage1_ = make_block("trunk.stage1", sc, tc, 2, rng);
  stage2_ = make_block("trunk.stage2", tc, 2 * tc, 2, rng);
  stage3_ = make_block("trunk.stage3", 2 * tc, 2 * tc, 1, rng);
  if (config_.attention_enabled) attention_ = NonLocalBlock(params_, "trunk.attention", 2 * tc, rng);
  stage4_ = make_block("trunk.stage4", 2 * tc, config_.feature_dim, 2, rng);
  neck_gamma_ = params_.add("neck.gamma", Tensor({config_.feature_dim}, 1.0));
  for (int k = 0; k < 3; ++k) {
    running_mean_[k] = Tensor({config_.feature_dim});
    running_var_[k] = Tensor({config_.feature_dim}, 1.0);
  }
  classifier_ = params_.add("classifier.weight",
                            nn::scaled_normal({config_.num_identities, config_.feature_dim}, 1.0 / std::sqrt(static_cast<double>(config_.feature_dim)), rng));
}

std::string Embedder::stem_prefix(ImageFamily family) const {
  if (family == ImageFamily::kInfrared) return "embedding.stem.infrared";
  if (family == ImageFamily::kIntermediate && !config_.tie_stems) return "embedding.stem.intermediate";
  return "embedding.stem.visible";
}

Embedder::Block Embedder::make_block(const std::string& name, int in, int out, int stride, Rng& rng) {
  Block b;
  b.conv = nn::make_conv(params_, name, in, out, 3, stride, rng, /*with_bias=*/false);
  b.norm = nn::make_group_norm(params_, name + ".norm", out, config_.norm_groups);
  return b;
}

const Embedder::Block& Embedder::stem(ImageFamily family) const {
  if (family == ImageFamily::kInfrared) return stem_infrared_;
  if (family == ImageFamily::kIntermediate && !config_.tie_stems) return stem_intermediate_;
  return stem_visible_;
}

ag::Var Embedder::pooled(const ag::Var& images, ImageFamily family) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != config_.channels || s[2] != config_.image_h || s[3] != config_.image_w) {
    throw ArgumentError("embed: expected [B," + std::to_string(config_.channels) + "," +
                        std::to_string(config_.image_h) + "," + std::to_string(config_.image_w) +
                        "] images, got " + shape_string(s));
  }
  ag::Var x = stem(family)(images);
  x = stage1_(x);
  x = stage2_(x);
  x = stage3_(x);
  if (config_.attention_enabled) x = attention_.forward(x).features;
  x = stage4_(x);
  return ag::global_avg_pool(x);
}

ag::Var Embedder::embed(const ag::Var& images, ImageFamily family) const {
  const auto k = static_cast<std::size_t>(family);
  return ag::batch_norm(pooled(images, family), neck_gamma_, &running_mean_[k], &running_var_[k]);
}

std::vector<ag::Var> Embedder::embed_batch(std::span<const ag::Var> images,
                                           std::span<const ImageFamily> families, bool update_statistics) {
  if (images.size() != families.size() || images.empty()) {
    throw ArgumentError("embed_batch: need one family per image batch");
  }
  const auto fold = [&](std::size_t k, const Tensor& mean, const Tensor& var, double n) {
    for (std::size_t d = 0; d < mean.size(); ++d) {
      running_mean_[k][d] = (1 - kNeckMomentum) * running_mean_[k][d] + kNeckMomentum * mean[d];
      // unbiased variance for the running estimate
      running_var_[k][d] = (1 - kNeckMomentum) * running_var_[k][d] + kNeckMomentum * var[d] * n / (n - 1);
    }
  };
  std::vector<ag::Var> out;
  if (config_.family_neck) {
    for (std::size_t b = 0; b < images.size(); ++b) {
      Tensor mean, var;
      out.push_back(ag::batch_norm(pooled(images[b], families[b]), neck_gamma_, nullptr, nullptr, 1e-5, &mean, &var));
      if (update_statistics) fold(static_cast<std::size_t>(families[b]), mean, var, images[b].dim(0));
    }
    return out;
  }
  std::vector<ag::Var> parts;
  std::vector<int> sizes;
  for (std::size_t b = 0; b < images.size(); ++b) {
    parts.push_back(pooled(images[b], families[b]));
    sizes.push_back(parts.back().dim(0));
  }
  Tensor mean, var;
  const ag::Var all = ag::batch_norm(ag::concat_rows(parts), neck_gamma_, nullptr, nullptr, 1e-5, &mean, &var);
  if (update_statistics) {
    for (std::size_t k = 0; k < 3; ++k) fold(k, mean, var, all.dim(0));
  }
  int first = 0;
  for (int n : sizes) {
    std::vector<int> rows(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) rows[static_cast<std::size_t>(r)] = first + r;
    out.push_back(ag::gather_rows(all, rows));
    first += n;
  }
  return out;
}

std::map<std::string, Tensor> Embedder::buffers() const {
  std::map<std::string, Tensor> out;
  for (auto f : {ImageFamily::kVisible, ImageFamily::kIntermediate, ImageFamily::kInfrared}) {
    const std::string base = params_.prefix() + ".neck." + std::string(family_name(f));
    out[base + ".running_mean"] = running_mean_[static_cast<std::size_t>(f)];
    out[base + ".running_var"] = running_var_[static_cast<std::size_t>(f)];
  }
  return out;
}

void Embedder::restore_buffers(const std::map<std::string, Tensor>& values) {
  for (auto f : {ImageFamily::kVisible, ImageFamily::kIntermediate, ImageFamily::kInfrared}) {
    const std::string base = params_.prefix() + ".neck." + std::string(family_name(f));
    for (auto [suffix, target] : {std::pair{".running_mean", &running_mean_[static_cast<std::size_t>(f)]},
                                  std::pair{".running_var", &running_var_[static_cast<std::size_t>(f)]}}) {
      const auto it = values.find(base + suffix);
      if (it == values.end()) throw CheckpointError("checkpoint lacks buffer " + base + suffix);
      if (it->second.shape() != target->shape()) throw CheckpointError("shape mismatch for buffer " + base + suffix);
      *target = it->second;
    }
  }
}

ag::Var Embedder::classify(const ag::Var& features) const {
  if (features.value().rank() != 2 || features.dim(1) != config_.feature_dim) {
    throw ArgumentError("classify: expected [B," + std::to_string(config_.feature_dim) +
                        "] features, got " + shape_string(features.shape()));
  }
  return ag::linear(features, classifier_);
}

}  // namespace agpi
