#include "agpi/discriminator.hpp"

#include "agpi/error.hpp"

namespace agpi {
namespace {
void check_label(int y, int n) {
  if (n < 1 || y < 0 || y >= n) {
    throw ArgumentError("identity label " + std::to_string(y) + " outside [0, " + std::to_string(n) + ")");
  }
}
}  // namespace

int expand_label(int y, LabelModality modality, int num_identities) {
  check_label(y, num_identities);
  return modality == LabelModality::kInfrared ? 2 * y + 1 : 2 * y;
}

int adversarial_label(int y, int num_identities) {
  check_label(y, num_identities);
  return 2 * y + 1;
}

Discriminator::Discriminator(const DiscriminatorConfig& config, Rng& rng)
    : config_(config), params_("discriminator") {
  if (config_.feature_dim < 2) throw ArgumentError("discriminator feature_dim must be >= 2");
  if (config_.num_identities < 1) throw ArgumentError("discriminator needs identities");
  const int hidden = std::max(1, config_.feature_dim / 2);
  fc1_ = nn::make_linear(params_, "fc1", config_.feature_dim, hidden, rng);
  fc2_ = nn::make_linear(params_, "fc2", hidden, config_.num_classes(), rng, true, 0.01);
}

ag::Var Discriminator::discriminate(const ag::Var& features) const {
  if (features.value().rank() != 2 || features.dim(1) != config_.feature_dim) {
    throw ArgumentError("discriminate: expected [B," + std::to_string(config_.feature_dim) +
                        "] features, got " + shape_string(features.shape()));
  }
  return fc2_(ag::leaky_relu(fc1_(features), 0.2));
}

}  // namespace agpi
