#pragma once

// ID-modality discriminator. Its label space has two slots per identity:
// 2y for visible and intermediate images, 2y + 1 for infrared images. The
// binary variant collapses that space to the modality bit (label mod 2).

#include "agpi/autograd.hpp"
#include "agpi/nn.hpp"
#include "agpi/rng.hpp"

namespace agpi {

enum class LabelModality { kVisibleOrIntermediate, kInfrared };

int expand_label(int y, LabelModality modality, int num_identities);
// The infrared slot of the same identity; what the generator asks the
// discriminator to believe about intermediate features.
int adversarial_label(int y, int num_identities);
inline int modality_bit(int expanded) { return expanded % 2; }

struct DiscriminatorConfig {
  int feature_dim = 64;
  int num_identities = 16;
  bool binary = false;

  int num_classes() const { return binary ? 2 : 2 * num_identities; }
  // Maps an expanded label into this head's label space.
  int target(int expanded) const { return binary ? modality_bit(expanded) : expanded; }
};

class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, Rng& rng);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  const DiscriminatorConfig& config() const { return config_; }
  // features [B, d] -> logits [B, num_classes].
  ag::Var discriminate(const ag::Var& features) const;

  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  const nn::Linear& output_layer() const { return fc2_; }

 private:
  DiscriminatorConfig config_;
  nn::ParameterSet params_;
  nn::Linear fc1_, fc2_;
};

}  // namespace agpi
