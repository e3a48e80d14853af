#pragma once

// Feature embedding network: one input stem per image family feeding a shared
// four-stage convolutional trunk with a non-local attention block after the
// third stage. Global average pooling followed by a batch-normalization neck
// gives the raw feature; a bias-free linear
// classifier maps features to identity logits.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "agpi/autograd.hpp"
#include "agpi/nn.hpp"
#include "agpi/rng.hpp"

namespace agpi {

enum class ImageFamily { kVisible, kIntermediate, kInfrared };

std::string_view family_name(ImageFamily f);

struct EmbeddingConfig {
  int image_h = 32;
  int image_w = 16;
  int channels = 3;
  int feature_dim = 64;
  int stem_channels = 8;
  int trunk_channels = 16;
  // Group normalization after every convolution; widths must divide evenly.
  int norm_groups = 4;
  bool attention_enabled = true;
  // Neck statistics kept per image family; pooled over families otherwise.
  bool family_neck = false;
  // Visible and intermediate images share one stem when set.
  bool tie_stems = true;
  int num_identities = 16;

  void check() const;
};

// Residual non-local block: x + W_out * attend(theta x, phi x, g x).
class NonLocalBlock {
 public:
  NonLocalBlock() = default;
  NonLocalBlock(nn::ParameterSet& params, const std::string& name, int channels, Rng& rng);

  struct Output {
    ag::Var features;
    ag::Var attention;  // [B, hw, hw], rows sum to one
  };
  Output forward(const ag::Var& x) const;

  const nn::Conv& output_projection() const { return out_; }

 private:
  int inner_ = 0;
  nn::Conv theta_, phi_, value_, out_;
};

class Embedder {
 public:
  Embedder(const EmbeddingConfig& config, Rng& rng);
  Embedder(const Embedder&) = delete;
  Embedder& operator=(const Embedder&) = delete;

  const EmbeddingConfig& config() const { return config_; }

  // images [B, C, H, W] -> raw features [B, d]. The neck uses the family's
  // running statistics, so rows are independent of each other.
  ag::Var embed(const ag::Var& images, ImageFamily family) const;
  // Training forward over several single-family batches: each block is
  // normalized with its own batch statistics, folded into that family's
  // running statistics when `update_statistics` is set.
  std::vector<ag::Var> embed_batch(std::span<const ag::Var> images, std::span<const ImageFamily> families,
                                   bool update_statistics);
  // Pooled trunk output before the neck, [B, d].
  ag::Var pooled(const ag::Var& images, ImageFamily family) const;
  // features [B, d] -> logits [B, N].
  ag::Var classify(const ag::Var& features) const;

  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  const NonLocalBlock& attention() const { return attention_; }

  // Running neck statistics, keyed like parameters.
  std::map<std::string, Tensor> buffers() const;
  void restore_buffers(const std::map<std::string, Tensor>& values);
  static constexpr double kNeckMomentum = 0.1;

  // Parameter names of the stem used by a family.
  std::string stem_prefix(ImageFamily family) const;

 private:
  // conv -> group norm -> ReLU
  struct Block {
    nn::Conv conv;
    nn::GroupNorm norm;
    ag::Var operator()(const ag::Var& x) const { return ag::relu(norm(conv(x))); }
  };
  Block make_block(const std::string& name, int in, int out, int stride, Rng& rng);
  const Block& stem(ImageFamily family) const;

  EmbeddingConfig config_;
  nn::ParameterSet params_;
  Block stem_visible_, stem_intermediate_, stem_infrared_;
  Block stage1_, stage2_, stage3_, stage4_;
  NonLocalBlock attention_;
  ag::Var neck_gamma_;
  // indexed by ImageFamily
  Tensor running_mean_[3], running_var_[3];
  ag::Var classifier_;
};

}  // namespace agpi
