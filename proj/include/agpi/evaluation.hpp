#pragma once

// Cross-modal retrieval metrics and kernel two-sample statistics.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "agpi/data.hpp"
#include "agpi/embedding.hpp"
#include "agpi/generator.hpp"
#include "agpi/tensor.hpp"

namespace agpi::eval {

// |Q| x |G| cosine distances 1 - <q/|q|, g/|g|>, clamped to [0, 2].
struct DistanceMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  double at(int q, int g) const { return values[static_cast<std::size_t>(q) * cols + g]; }
};

// query [Q, d], gallery [G, d].
DistanceMatrix pairwise_distances(const Tensor& query, const Tensor& gallery);

// Optional camera labels; when both are given, gallery entries with the
// query's identity and camera are dropped from that query's ranking.
struct Cameras {
  std::span<const int> query;
  std::span<const int> gallery;
};

// curve[k - 1] is the rank-k hit rate for k = 1..max_rank.
std::vector<double> cmc(const DistanceMatrix& distances, std::span<const int> query_ids,
                        std::span<const int> gallery_ids, int max_rank, Cameras cameras = {});

double mean_average_precision(const DistanceMatrix& distances, std::span<const int> query_ids,
                              std::span<const int> gallery_ids, Cameras cameras = {});

enum class Shot { kSingle, kMulti };
std::string_view shot_name(Shot s);
Shot parse_shot(std::string_view name);

inline constexpr int kMultiShotPerIdentity = 10;

// Indices refer to the query and gallery datasets; labels are shared across
// both and derived from identity names.
struct RetrievalProtocol {
  std::vector<std::size_t> query;
  std::vector<int> query_labels;
  std::vector<int> query_cameras;
  data::Modality query_modality = data::Modality::kInfrared;
  std::vector<std::size_t> gallery;
  std::vector<int> gallery_labels;
  std::vector<int> gallery_cameras;
  data::Modality gallery_modality = data::Modality::kVisible;
  Shot shot = Shot::kSingle;
  std::uint64_t seed = 0;
};

// Every query image (infrared) against a seeded draw of visible gallery
// images: one per identity for SINGLE, up to ten for MULTI.
RetrievalProtocol build_protocol(const data::Dataset& query, const data::Dataset& gallery, Shot shot,
                                 std::uint64_t seed);

// Raw embedding features [n, d] of the given images, resized without
// augmentation. Runs without recording gradients.
Tensor embed_images(const Embedder& embedder, const std::vector<const data::Image*>& images,
                    ImageFamily family, int batch_size = 64);

struct RetrievalResult {
  std::vector<double> cmc;  // ranks 1..20
  double map = 0.0;
  int num_queries = 0;
  int gallery_size = 0;
};

RetrievalResult evaluate_retrieval(const Embedder& embedder, const data::Dataset& query,
                                   const data::Dataset& gallery, const RetrievalProtocol& protocol);

// Gaussian kernel bandwidth: a fixed sigma, or the median pairwise distance
// of the pooled samples.
struct Bandwidth {
  bool median = true;
  double sigma = 1.0;

  static Bandwidth fixed(double s) { return {false, s}; }
  static Bandwidth median_heuristic() { return {true, 0.0}; }
};

// Median Euclidean distance over all unordered pairs of rows of the given
// sets taken together. Falls back to 1 when every row coincides.
double median_pairwise_distance(std::span<const Tensor* const> sets);

// Unbiased estimate of squared MMD between the rows of a and b with
// k(x, y) = exp(-|x - y|^2 / (2 sigma^2)). Symmetric in its arguments.
double mmd(const Tensor& a, const Tensor& b, double sigma);
struct MmdEstimate {
  double value = 0.0;
  double sigma = 0.0;
};
MmdEstimate mmd(const Tensor& a, const Tensor& b, Bandwidth bandwidth);

struct BridgingReport {
  double mmd_vi = 0.0;
  double mmd_vz = 0.0;
  double mmd_iz = 0.0;
  bool bridges_v = false;  // mmd_vz <= mmd_vi
  bool bridges_i = false;  // mmd_iz <= mmd_vi
  double center_mmd_vi = 0.0;
  double center_mmd_vz = 0.0;
  double center_mmd_iz = 0.0;
  double sigma = 0.0;
  double center_sigma = 0.0;
  int samples_per_family = 0;
  std::string features;  // "embedding" or "pixels"
};

// Features of the three families with one label per row. One bandwidth,
// chosen over the union of all three sets, serves every pair.
BridgingReport bridging_from_features(const Tensor& visible, const Tensor& infrared,
                                      const Tensor& intermediate, std::span<const int> labels_v,
                                      std::span<const int> labels_i, std::span<const int> labels_z,
                                      Bandwidth bandwidth);

enum class FeatureSpace { kEmbedding, kPixels };

struct BridgingOptions {
  Bandwidth bandwidth = Bandwidth::median_heuristic();
  FeatureSpace space = FeatureSpace::kEmbedding;
  std::uint64_t seed = 0;  // style pairing
  int pixel_stride = 4;    // downsampling for kPixels
};

// Generates one intermediate image per visible image, styled by a random
// infrared image of the same identity, and compares L2-normalized features.
BridgingReport bridging_report(const Embedder& embedder, const Generator& generator,
                               const data::Dataset& dataset, const BridgingOptions& options);

// Plug-in estimate log N - CE of the identity classifier on intermediate
// features. Identities of `dataset` must be the classifier's identities.
double identity_information(const Embedder& embedder, const Generator& generator,
                            const data::Dataset& dataset, std::uint64_t seed);

// Intermediate images for each visible sample of `dataset`, in sample order.
// style_of[k] receives the infrared sample index used as style.
Tensor generate_for_visible(const Generator& generator, const data::Dataset& dataset,
                            std::uint64_t seed, std::vector<std::size_t>* visible_of = nullptr,
                            std::vector<std::size_t>* style_of = nullptr, int batch_size = 32);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace agpi::eval
