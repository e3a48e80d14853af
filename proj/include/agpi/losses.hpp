#pragma once

// Scalar training objectives. Distance-based losses take the vectors they
// are given; the trainer feeds L2-normalized features.

#include <span>
#include <vector>

#include "agpi/autograd.hpp"

namespace agpi::losses {

struct LossWeights {
  double lambda_adv = 0.1;
  double lambda_cf = 10.0;
  double margin_m1 = 0.1;
  double margin_m2 = 0.3;
  // softplus(m + d) when set, max(0, m + d) otherwise.
  bool soft_margin = true;

  void check() const;
};

ag::Var cross_entropy_id(const ag::Var& logits, std::span<const int> labels);
ag::Var discriminator_loss(const ag::Var& logits, std::span<const int> expanded_labels);

// Per-identity means of feature rows. Row k of `centers` belongs to
// identities[k] (ascending).
struct Centers {
  std::vector<int> identities;
  ag::Var centers;

  int row_of(int identity) const;
};
Centers batch_centers(const ag::Var& features, std::span<const int> labels);

struct FamilyCenters {
  Centers intermediate;
  Centers infrared;
  Centers visible;
};

// max(0, m1 + ||c_z - c_i|| - ||c_z - c_v||) for each identity row -> [K].
ag::Var center_hinge(const ag::Var& cz, const ag::Var& ci, const ag::Var& cv, double m1);

// Mean over the batch of CE(disc_logits_z, 2y+1) + hinge(y). The three
// center sets must cover the same identities.
ag::Var adversarial_loss(const ag::Var& disc_logits_z, std::span<const int> labels,
                         const FamilyCenters& centers, double m1, int num_identities,
                         bool binary_discriminator = false);

ag::Var reconstruction_loss(const ag::Var& reconstructed, const ag::Var& target);

ag::Var generator_total(const ag::Var& rec, const ag::Var& idz, const ag::Var& adv,
                        const LossWeights& weights);

// Mean Euclidean norm of paired row differences.
ag::Var color_free_loss(const ag::Var& f_v, const ag::Var& f_z);

// Mean over rows of softplus(m2 + ||a - p|| - ||a - n||) (or the hinge form).
ag::Var triplet_loss(const ag::Var& anchors, const ag::Var& positives, const ag::Var& negatives,
                     double m2, bool soft_margin = true);

struct LabeledFeatures {
  ag::Var features;
  std::vector<int> labels;
};

// Batch-hard directed triplet: anchors from one family, the farthest
// same-identity row of the positive family, the closest other-identity row
// of the negative family. Ties resolve to the lowest row index.
ag::Var directed_triplet_loss(const LabeledFeatures& anchors, const LabeledFeatures& positives,
                              const LabeledFeatures& negatives, double m2, bool soft_margin = true);

struct BatchFeatures {
  LabeledFeatures visible;
  LabeledFeatures intermediate;
  LabeledFeatures infrared;
};

// tri(a in V, p in I, n in Z) + tri(a in I, p in Z, n in V)
ag::Var dual_triplet_loss(const BatchFeatures& batch, double m2, bool soft_margin = true);

// Batch-hard triplet over one pooled set; positives exclude the anchor row.
ag::Var batch_hard_triplet_loss(const LabeledFeatures& pooled, double m2, bool soft_margin = true);

ag::Var embedding_total(const ag::Var& id, const ag::Var& dual, const ag::Var& cf,
                        const LossWeights& weights);

}  // namespace agpi::losses
