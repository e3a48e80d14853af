#include "agpi/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "agpi/discriminator.hpp"
#include "agpi/error.hpp"
#include "agpi/simd/kernels.hpp"

namespace agpi::losses {

void LossWeights::check() const {
  if (lambda_adv < 0 || lambda_cf < 0) throw ArgumentError("loss weights must be >= 0");
  if (margin_m1 < 0 || margin_m2 < 0) throw ArgumentError("margins must be >= 0");
}

ag::Var cross_entropy_id(const ag::Var& logits, std::span<const int> labels) {
  return ag::cross_entropy(logits, labels);
}

ag::Var discriminator_loss(const ag::Var& logits, std::span<const int> expanded_labels) {
  return ag::cross_entropy(logits, expanded_labels);
}

int Centers::row_of(int identity) const {
  auto it = std::lower_bound(identities.begin(), identities.end(), identity);
  if (it == identities.end() || *it != identity) {
    throw ArgumentError("no center for identity " + std::to_string(identity));
  }
  return static_cast<int>(it - identities.begin());
}

Centers batch_centers(const ag::Var& features, std::span<const int> labels) {
  if (features.value().rank() != 2 || static_cast<std::size_t>(features.dim(0)) != labels.size()) {
    throw ArgumentError("batch_centers: need one label per feature row");
  }
  if (labels.empty()) throw ArgumentError("batch_centers: empty identity group");
  Centers out;
  out.identities.assign(labels.begin(), labels.end());
  std::sort(out.identities.begin(), out.identities.end());
  out.identities.erase(std::unique(out.identities.begin(), out.identities.end()), out.identities.end());
  const int k = static_cast<int>(out.identities.size());
  const int n = features.dim(0);
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(out.row_of(y))];
  // Averaging matrix [K, n].
  Tensor avg({k, n});
  for (int j = 0; j < n; ++j) {
    const int r = out.row_of(labels[static_cast<std::size_t>(j)]);
    avg[static_cast<std::size_t>(r) * n + j] = 1.0 / counts[static_cast<std::size_t>(r)];
  }
  out.centers = ag::matmul(ag::Var(std::move(avg)), features);
  return out;
}

ag::Var center_hinge(const ag::Var& cz, const ag::Var& ci, const ag::Var& cv, double m1) {
  const ag::Var d_zi = ag::row_norms(ag::sub(cz, ci));
  const ag::Var d_zv = ag::row_norms(ag::sub(cz, cv));
  return ag::relu(ag::add_scalar(ag::sub(d_zi, d_zv), m1));
}

ag::Var adversarial_loss(const ag::Var& disc_logits_z, std::span<const int> labels,
                         const FamilyCenters& centers, double m1, int num_identities,
                         bool binary_discriminator) {
  if (centers.intermediate.identities != centers.infrared.identities ||
      centers.intermediate.identities != centers.visible.identities) {
    throw ArgumentError("adversarial_loss: center sets cover different identities");
  }
  std::vector<int> targets;
  std::vector<int> rows;
  targets.reserve(labels.size());
  for (int y : labels) {
    const int t = adversarial_label(y, num_identities);
    targets.push_back(binary_discriminator ? modality_bit(t) : t);
    rows.push_back(centers.intermediate.row_of(y));
  }
  const ag::Var ce = ag::cross_entropy(disc_logits_z, targets);
  const ag::Var hinge = center_hinge(centers.intermediate.centers, centers.infrared.centers,
                                     centers.visible.centers, m1);
  const int k = hinge.dim(0);
  const ag::Var per_sample = ag::gather_rows(ag::reshape(hinge, {k, 1}), rows);
  return ag::add(ce, ag::mean(per_sample));
}

ag::Var reconstruction_loss(const ag::Var& reconstructed, const ag::Var& target) {
  if (reconstructed.shape() != target.shape()) {
    throw ArgumentError("reconstruction_loss: shape mismatch " + shape_string(reconstructed.shape()) +
                        " vs " + shape_string(target.shape()));
  }
  return ag::mean(ag::abs(ag::sub(reconstructed, target)));
}

ag::Var generator_total(const ag::Var& rec, const ag::Var& idz, const ag::Var& adv,
                        const LossWeights& weights) {
  const ag::Var parts[] = {rec, idz, adv};
  const double w[] = {1.0, 1.0, weights.lambda_adv};
  return ag::weighted_sum(parts, w);
}

ag::Var color_free_loss(const ag::Var& f_v, const ag::Var& f_z) {
  if (f_v.shape() != f_z.shape()) {
    throw ArgumentError("color_free_loss: " + std::to_string(f_v.shape().empty() ? 0 : f_v.dim(0)) +
                        " visible vs " + std::to_string(f_z.shape().empty() ? 0 : f_z.dim(0)) +
                        " intermediate features");
  }
  return ag::mean(ag::row_norms(ag::sub(f_v, f_z)));
}

namespace {
ag::Var margin_term(const ag::Var& x, bool soft_margin) {
  return soft_margin ? ag::softplus(x) : ag::relu(x);
}
}  // namespace

ag::Var triplet_loss(const ag::Var& anchors, const ag::Var& positives, const ag::Var& negatives,
                     double m2, bool soft_margin) {
  if (anchors.shape() != positives.shape() || anchors.shape() != negatives.shape()) {
    throw ArgumentError("triplet_loss: anchor/positive/negative shapes differ");
  }
  const ag::Var d_ap = ag::row_norms(ag::sub(anchors, positives));
  const ag::Var d_an = ag::row_norms(ag::sub(anchors, negatives));
  return ag::mean(margin_term(ag::add_scalar(ag::sub(d_ap, d_an), m2), soft_margin));
}

namespace {

void check_labeled(const LabeledFeatures& f, const char* what) {
  if (!f.features.defined()) throw ArgumentError(std::string("missing ") + what + " features");
  if (f.features.value().rank() != 2 || static_cast<std::size_t>(f.features.dim(0)) != f.labels.size()) {
    throw ArgumentError(std::string(what) + ": need one label per feature row");
  }
}

struct Mined {
  std::vector<int> positive;
  std::vector<int> negative;
};

// Selection only; the returned indices are differentiated through gather.
Mined mine_hardest(const LabeledFeatures& anchors, const LabeledFeatures& positives,
                   const LabeledFeatures& negatives, bool exclude_self) {
  const int na = anchors.features.dim(0);
  const int d = anchors.features.dim(1);
  const double* A = anchors.features.value().data();
  const double* P = positives.features.value().data();
  const double* N = negatives.features.value().data();
  Mined m;
  for (int a = 0; a < na; ++a) {
    const int y = anchors.labels[static_cast<std::size_t>(a)];
    int best_p = -1, best_n = -1;
    double far = -1.0, near = std::numeric_limits<double>::infinity();
    for (int p = 0; p < positives.features.dim(0); ++p) {
      if (positives.labels[static_cast<std::size_t>(p)] != y || (exclude_self && p == a)) continue;
      const double dist = simd::squared_distance(A + a * d, P + p * d, d);
      if (best_p < 0 || dist > far) {
        far = dist;
        best_p = p;
      }
    }
    for (int n = 0; n < negatives.features.dim(0); ++n) {
      if (negatives.labels[static_cast<std::size_t>(n)] == y) continue;
      const double dist = simd::squared_distance(A + a * d, N + n * d, d);
      if (best_n < 0 || dist < near) {
        near = dist;
        best_n = n;
      }
    }
    if (best_p < 0 || best_n < 0) {
      throw ArgumentError("triplet mining: anchor with identity " + std::to_string(y) +
                          " has no valid positive or negative");
    }
    m.positive.push_back(best_p);
    m.negative.push_back(best_n);
  }
  return m;
}

}  // namespace

ag::Var directed_triplet_loss(const LabeledFeatures& anchors, const LabeledFeatures& positives,
                              const LabeledFeatures& negatives, double m2, bool soft_margin) {
  check_labeled(anchors, "anchor");
  check_labeled(positives, "positive");
  check_labeled(negatives, "negative");
  const Mined m = mine_hardest(anchors, positives, negatives, false);
  return triplet_loss(anchors.features, ag::gather_rows(positives.features, m.positive),
                      ag::gather_rows(negatives.features, m.negative), m2, soft_margin);
}

ag::Var dual_triplet_loss(const BatchFeatures& batch, double m2, bool soft_margin) {
  check_labeled(batch.visible, "visible");
  check_labeled(batch.intermediate, "intermediate");
  check_labeled(batch.infrared, "infrared");
  const ag::Var vis_anchor =
      directed_triplet_loss(batch.visible, batch.infrared, batch.intermediate, m2, soft_margin);
  const ag::Var ir_anchor =
      directed_triplet_loss(batch.infrared, batch.intermediate, batch.visible, m2, soft_margin);
  return ag::add(vis_anchor, ir_anchor);
}

ag::Var batch_hard_triplet_loss(const LabeledFeatures& pooled, double m2, bool soft_margin) {
  check_labeled(pooled, "pooled");
  const Mined m = mine_hardest(pooled, pooled, pooled, true);
  return triplet_loss(pooled.features, ag::gather_rows(pooled.features, m.positive),
                      ag::gather_rows(pooled.features, m.negative), m2, soft_margin);
}

ag::Var embedding_total(const ag::Var& id, const ag::Var& dual, const ag::Var& cf,
                        const LossWeights& weights) {
  const ag::Var parts[] = {id, dual, cf};
  const double w[] = {1.0, 1.0, weights.lambda_cf};
  return ag::weighted_sum(parts, w);
}

}  // namespace agpi::losses
