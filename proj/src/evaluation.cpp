#include "agpi/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "agpi/autograd.hpp"
#include "agpi/error.hpp"
#include "agpi/rng.hpp"
#include "agpi/simd/kernels.hpp"

namespace agpi::eval {

namespace {

void check_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ArgumentError(std::string(what) + " must be [n, d]");
}

std::vector<double> unit_rows(const Tensor& t, const char* what) {
  const int n = t.dim(0), d = t.dim(1);
  std::vector<double> out(t.values().begin(), t.values().end());
  for (int i = 0; i < n; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * d;
    const double norm = std::sqrt(simd::dot(row, row, static_cast<std::size_t>(d)));
    if (norm == 0.0) {
      throw ArgumentError(std::string(what) + " row " + std::to_string(i) +
                          " is a zero vector; cosine distance is undefined");
    }
    for (int k = 0; k < d; ++k) row[k] /= norm;
  }
  return out;
}

// Gallery columns ranked for one query, nearest first, ties by index; the
// same-identity same-camera columns are removed when cameras are known.
std::vector<int> ranking(const DistanceMatrix& dm, int q, std::span<const int> query_ids,
                         std::span<const int> gallery_ids, const Cameras& cams) {
  const bool filter = !cams.query.empty() && !cams.gallery.empty();
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(dm.cols));
  for (int g = 0; g < dm.cols; ++g) {
    if (filter && gallery_ids[static_cast<std::size_t>(g)] == query_ids[static_cast<std::size_t>(q)] &&
        cams.gallery[static_cast<std::size_t>(g)] == cams.query[static_cast<std::size_t>(q)]) {
      continue;
    }
    order.push_back(g);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dm.at(q, a) < dm.at(q, b); });
  return order;
}

void check_protocol(const DistanceMatrix& dm, std::span<const int> query_ids,
                    std::span<const int> gallery_ids, const Cameras& cams) {
  if (query_ids.size() != static_cast<std::size_t>(dm.rows) ||
      gallery_ids.size() != static_cast<std::size_t>(dm.cols)) {
    throw ArgumentError("identity lists do not match the distance matrix");
  }
  if ((!cams.query.empty() && cams.query.size() != query_ids.size()) ||
      (!cams.gallery.empty() && cams.gallery.size() != gallery_ids.size())) {
    throw ArgumentError("camera lists do not match the distance matrix");
  }
}

// 1-based ranks of the relevant gallery entries for query q.
std::vector<int> relevant_ranks(const DistanceMatrix& dm, int q, std::span<const int> query_ids,
                                std::span<const int> gallery_ids, const Cameras& cams) {
  const std::vector<int> order = ranking(dm, q, query_ids, gallery_ids, cams);
  const int y = query_ids[static_cast<std::size_t>(q)];
  std::vector<int> ranks;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (gallery_ids[static_cast<std::size_t>(order[r])] == y) ranks.push_back(static_cast<int>(r) + 1);
  }
  if (ranks.empty()) {
    throw ProtocolError("query identity " + std::to_string(y) + " has no match in the gallery");
  }
  return ranks;
}

}  // namespace

DistanceMatrix pairwise_distances(const Tensor& query, const Tensor& gallery) {
  check_matrix(query, "query features");
  check_matrix(gallery, "gallery features");
  if (query.dim(1) != gallery.dim(1)) {
    throw ArgumentError("query and gallery features differ in dimension (" +
                        std::to_string(query.dim(1)) + " vs " + std::to_string(gallery.dim(1)) + ")");
  }
  const int d = query.dim(1);
  const std::vector<double> q = unit_rows(query, "query");
  const std::vector<double> g = unit_rows(gallery, "gallery");
  DistanceMatrix dm;
  dm.rows = query.dim(0);
  dm.cols = gallery.dim(0);
  dm.values.resize(static_cast<std::size_t>(dm.rows) * dm.cols);
  if (dm.values.empty()) return dm;
  simd::gemm(false, true, dm.rows, dm.cols, d, 1.0, q.data(), d, g.data(), d, 0.0,
             dm.values.data(), dm.cols);
  for (double& v : dm.values) v = std::clamp(1.0 - v, 0.0, 2.0);
  return dm;
}

std::vector<double> cmc(const DistanceMatrix& distances, std::span<const int> query_ids,
                        std::span<const int> gallery_ids, int max_rank, Cameras cameras) {
  check_protocol(distances, query_ids, gallery_ids, cameras);
  if (max_rank < 1) throw ArgumentError("cmc: max_rank must be >= 1");
  if (distances.rows == 0) throw ArgumentError("cmc: no queries");
  std::vector<double> curve(static_cast<std::size_t>(max_rank), 0.0);
  for (int q = 0; q < distances.rows; ++q) {
    const int first = relevant_ranks(distances, q, query_ids, gallery_ids, cameras).front();
    for (int k = first; k <= max_rank; ++k) curve[static_cast<std::size_t>(k - 1)] += 1.0;
  }
  for (double& c : curve) c /= distances.rows;
  return curve;
}

double mean_average_precision(const DistanceMatrix& distances, std::span<const int> query_ids,
                              std::span<const int> gallery_ids, Cameras cameras) {
  check_protocol(distances, query_ids, gallery_ids, cameras);
  if (distances.rows == 0) throw ArgumentError("mean_average_precision: no queries");
  double total = 0.0;
  for (int q = 0; q < distances.rows; ++q) {
    const std::vector<int> ranks = relevant_ranks(distances, q, query_ids, gallery_ids, cameras);
    double ap = 0.0;
    for (std::size_t j = 0; j < ranks.size(); ++j) ap += static_cast<double>(j + 1) / ranks[j];
    total += ap / static_cast<double>(ranks.size());
  }
  return total / distances.rows;
}

std::string_view shot_name(Shot s) { return s == Shot::kSingle ? "single" : "multi"; }

Shot parse_shot(std::string_view name) {
  if (name == "single") return Shot::kSingle;
  if (name == "multi") return Shot::kMulti;
  throw ArgumentError("unknown shot mode '" + std::string(name) + "' (single|multi)");
}

namespace {

data::Modality only_modality(const data::Dataset& ds, const char* what) {
  if (ds.samples.empty()) throw ValidationError(std::string(what) + " split is empty");
  const data::Modality m = ds.samples.front().modality;
  for (const auto& s : ds.samples) {
    if (s.modality != m) throw ValidationError(std::string(what) + " split mixes modalities");
  }
  return m;
}

}  // namespace

RetrievalProtocol build_protocol(const data::Dataset& query, const data::Dataset& gallery, Shot shot,
                                 std::uint64_t seed) {
  RetrievalProtocol p;
  p.shot = shot;
  p.seed = seed;
  p.query_modality = only_modality(query, "query");
  p.gallery_modality = only_modality(gallery, "gallery");
  if (p.query_modality == p.gallery_modality) {
    throw ProtocolError("cross-modal protocol needs different query and gallery modalities");
  }
  std::map<std::string, int> label_of;
  for (const auto& n : query.identity_names) label_of.emplace(n, 0);
  for (const auto& n : gallery.identity_names) label_of.emplace(n, 0);
  int next = 0;
  for (auto& [name, label] : label_of) label = next++;

  Rng rng(seed);
  const auto by_id = gallery.index_by_identity(p.gallery_modality);
  std::map<int, int> drawn;  // shared label -> gallery count
  for (std::size_t id = 0; id < by_id.size(); ++id) {
    std::vector<std::size_t> pool = by_id[id];
    if (pool.empty()) continue;
    rng.shuffle(pool.begin(), pool.end());
    const std::size_t take =
        shot == Shot::kSingle ? 1 : std::min<std::size_t>(kMultiShotPerIdentity, pool.size());
    pool.resize(take);
    std::sort(pool.begin(), pool.end());
    const int label = label_of.at(gallery.identity_names.at(id));
    for (std::size_t idx : pool) {
      p.gallery.push_back(idx);
      p.gallery_labels.push_back(label);
      p.gallery_cameras.push_back(gallery.samples[idx].camera);
    }
    drawn[label] += static_cast<int>(take);
  }
  for (std::size_t i = 0; i < query.samples.size(); ++i) {
    const auto& s = query.samples[i];
    const std::string& name = query.identity_names.at(static_cast<std::size_t>(s.identity));
    const int label = label_of.at(name);
    if (!drawn.contains(label)) {
      throw ProtocolError("query identity " + name + " is missing from the gallery pool");
    }
    p.query.push_back(i);
    p.query_labels.push_back(label);
    p.query_cameras.push_back(s.camera);
  }
  return p;
}

namespace {

Tensor embed_tensor(const Embedder& embedder, const Tensor& images, ImageFamily family,
                    int batch_size) {
  ag::NoGradGuard no_grad;
  const int n = images.dim(0);
  const int per = static_cast<int>(images.size() / static_cast<std::size_t>(std::max(n, 1)));
  const int d = embedder.config().feature_dim;
  Tensor out({n, d});
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    Shape shape = images.shape();
    shape[0] = count;
    Tensor chunk(shape);
    std::copy_n(images.data() + static_cast<std::size_t>(start) * per,
                static_cast<std::size_t>(count) * per, chunk.data());
    const ag::Var f = embedder.embed(ag::Var(std::move(chunk)), family);
    std::copy_n(f.value().data(), static_cast<std::size_t>(count) * d,
                out.data() + static_cast<std::size_t>(start) * d);
  }
  return out;
}

Tensor images_tensor(const std::vector<const data::Image*>& images, int h, int w) {
  std::vector<data::Image> resized;
  resized.reserve(images.size());
  std::vector<const data::Image*> ptrs;
  for (const data::Image* im : images) {
    if (im->height == h && im->width == w) {
      ptrs.push_back(im);
    } else {
      resized.push_back(data::resize(*im, h, w));
    }
  }
  if (!resized.empty()) {
    ptrs.clear();
    std::size_t r = 0;
    for (const data::Image* im : images) {
      ptrs.push_back(im->height == h && im->width == w ? im : &resized[r++]);
    }
  }
  return data::to_tensor(ptrs);
}

}  // namespace

Tensor embed_images(const Embedder& embedder, const std::vector<const data::Image*>& images,
                    ImageFamily family, int batch_size) {
  if (images.empty()) return Tensor({0, embedder.config().feature_dim});
  const auto& cfg = embedder.config();
  return embed_tensor(embedder, images_tensor(images, cfg.image_h, cfg.image_w), family, batch_size);
}

RetrievalResult evaluate_retrieval(const Embedder& embedder, const data::Dataset& query,
                                   const data::Dataset& gallery, const RetrievalProtocol& protocol) {
  std::vector<const data::Image*> q, g;
  for (std::size_t i : protocol.query) q.push_back(&query.samples.at(i).image);
  for (std::size_t i : protocol.gallery) g.push_back(&gallery.samples.at(i).image);
  const auto family = [](data::Modality m) {
    return m == data::Modality::kVisible ? ImageFamily::kVisible : ImageFamily::kInfrared;
  };
  const Tensor fq = embed_images(embedder, q, family(protocol.query_modality));
  const Tensor fg = embed_images(embedder, g, family(protocol.gallery_modality));
  const DistanceMatrix dm = pairwise_distances(fq, fg);
  const Cameras cams{protocol.query_cameras, protocol.gallery_cameras};
  RetrievalResult r;
  r.cmc = cmc(dm, protocol.query_labels, protocol.gallery_labels, 20, cams);
  r.map = mean_average_precision(dm, protocol.query_labels, protocol.gallery_labels, cams);
  r.num_queries = dm.rows;
  r.gallery_size = dm.cols;
  return r;
}

// ---- MMD --------------------------------------------------------------------

double median_pairwise_distance(std::span<const Tensor* const> sets) {
  std::vector<const double*> rows;
  int d = -1;
  for (const Tensor* t : sets) {
    check_matrix(*t, "mmd features");
    if (d >= 0 && t->dim(1) != d) throw ArgumentError("mmd feature sets differ in dimension");
    d = t->dim(1);
    for (int i = 0; i < t->dim(0); ++i) rows.push_back(t->data() + static_cast<std::size_t>(i) * d);
  }
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2 + 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      dist.push_back(std::sqrt(simd::squared_distance(rows[i], rows[j], static_cast<std::size_t>(d))));
    }
  }
  if (dist.empty()) return 1.0;
  std::sort(dist.begin(), dist.end());
  const std::size_t n = dist.size();
  const double med = n % 2 == 1 ? dist[n / 2] : 0.5 * (dist[n / 2 - 1] + dist[n / 2]);
  return med > 0.0 ? med : 1.0;
}

namespace {

// Order-independent sum, so that swapping the two sets gives the same bits.
double canonical_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

}  // namespace

double mmd(const Tensor& a, const Tensor& b, double sigma) {
  check_matrix(a, "mmd set a");
  check_matrix(b, "mmd set b");
  if (a.dim(1) != b.dim(1)) throw ArgumentError("mmd sets differ in dimension");
  const int m = a.dim(0), n = b.dim(0);
  if (m < 2 || n < 2) throw ArgumentError("mmd needs at least 2 samples per set");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("mmd bandwidth must be positive");
  const std::size_t d = static_cast<std::size_t>(a.dim(1));
  const double gamma = 1.0 / (2.0 * sigma * sigma);
  const auto k = [&](const double* x, const double* y) {
    return std::exp(-gamma * simd::squared_distance(x, y, d));
  };
  const auto row = [d](const Tensor& t, int i) { return t.data() + static_cast<std::size_t>(i) * d; };
  const auto within = [&](const Tensor& t) {
    std::vector<double> v;
    for (int i = 0; i < t.dim(0); ++i) {
      for (int j = i + 1; j < t.dim(0); ++j) v.push_back(k(row(t, i), row(t, j)));
    }
    return 2.0 * canonical_sum(v);
  };
  const double kaa = within(a);
  const double kbb = within(b);
  std::vector<double> cross;
  cross.reserve(static_cast<std::size_t>(m) * n);
  if (m == n) {
    // One-sample U-statistic over paired rows: cross pairs with i == j are
    // left out, which makes identical inputs score exactly zero.
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i != j) cross.push_back(k(row(a, i), row(b, j)));
      }
    }
    const double mm = static_cast<double>(m) * (m - 1);
    return (kaa + kbb - 2.0 * canonical_sum(cross)) / mm;
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) cross.push_back(k(row(a, i), row(b, j)));
  }
  return kaa / (static_cast<double>(m) * (m - 1)) + kbb / (static_cast<double>(n) * (n - 1)) -
         2.0 * canonical_sum(cross) / (static_cast<double>(m) * n);
}

MmdEstimate mmd(const Tensor& a, const Tensor& b, Bandwidth bandwidth) {
  MmdEstimate e;
  if (bandwidth.median) {
    const Tensor* sets[] = {&a, &b};
    e.sigma = median_pairwise_distance(sets);
  } else {
    e.sigma = bandwidth.sigma;
  }
  e.value = mmd(a, b, e.sigma);
  return e;
}

namespace {

Tensor normalized(const Tensor& t) {
  Tensor out(t.shape());
  const std::vector<double> rows = unit_rows(t, "feature");
  std::copy(rows.begin(), rows.end(), out.data());
  return out;
}

Tensor centers_of(const Tensor& f, std::span<const int> labels) {
  if (labels.size() != static_cast<std::size_t>(f.dim(0))) {
    throw ArgumentError("need one label per feature row");
  }
  std::map<int, std::vector<int>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<int>(i));
  const int d = f.dim(1);
  Tensor out({static_cast<int>(groups.size()), d});
  int r = 0;
  for (const auto& [label, rows] : groups) {
    double* c = out.data() + static_cast<std::size_t>(r++) * d;
    for (int i : rows) simd::axpy(static_cast<std::size_t>(d), 1.0 / rows.size(),
                                  f.data() + static_cast<std::size_t>(i) * d, c);
  }
  return out;
}

}  // namespace

BridgingReport bridging_from_features(const Tensor& visible, const Tensor& infrared,
                                      const Tensor& intermediate, std::span<const int> labels_v,
                                      std::span<const int> labels_i, std::span<const int> labels_z,
                                      Bandwidth bandwidth) {
  const Tensor v = normalized(visible), i = normalized(infrared), z = normalized(intermediate);
  BridgingReport r;
  r.features = "embedding";
  r.samples_per_family = std::min({v.dim(0), i.dim(0), z.dim(0)});
  const Tensor* all[] = {&v, &i, &z};
  r.sigma = bandwidth.median ? median_pairwise_distance(all) : bandwidth.sigma;
  r.mmd_vi = mmd(v, i, r.sigma);
  r.mmd_vz = mmd(v, z, r.sigma);
  r.mmd_iz = mmd(i, z, r.sigma);
  r.bridges_v = r.mmd_vz <= r.mmd_vi;
  r.bridges_i = r.mmd_iz <= r.mmd_vi;

  const Tensor cv = centers_of(v, labels_v), ci = centers_of(i, labels_i), cz = centers_of(z, labels_z);
  const Tensor* centers[] = {&cv, &ci, &cz};
  r.center_sigma = bandwidth.median ? median_pairwise_distance(centers) : bandwidth.sigma;
  r.center_mmd_vi = mmd(cv, ci, r.center_sigma);
  r.center_mmd_vz = mmd(cv, cz, r.center_sigma);
  r.center_mmd_iz = mmd(ci, cz, r.center_sigma);
  return r;
}

Tensor generate_for_visible(const Generator& generator, const data::Dataset& dataset,
                            std::uint64_t seed, std::vector<std::size_t>* visible_of,
                            std::vector<std::size_t>* style_of, int batch_size) {
  const auto ir_by_id = dataset.index_by_identity(data::Modality::kInfrared);
  Rng rng(seed);
  std::vector<std::size_t> vis, sty;
  for (std::size_t k = 0; k < dataset.samples.size(); ++k) {
    const auto& s = dataset.samples[k];
    if (s.modality != data::Modality::kVisible) continue;
    const auto& pool = ir_by_id.at(static_cast<std::size_t>(s.identity));
    if (pool.empty()) {
      throw ValidationError("identity " + dataset.identity_names.at(static_cast<std::size_t>(s.identity)) +
                            " has no infrared image to take a style from");
    }
    vis.push_back(k);
    sty.push_back(pool[static_cast<std::size_t>(rng.below(pool.size()))]);
  }
  const auto& cfg = generator.config();
  const int n = static_cast<int>(vis.size());
  Tensor out({n, cfg.channels, cfg.image_h, cfg.image_w});
  const std::size_t per = static_cast<std::size_t>(cfg.channels) * cfg.image_h * cfg.image_w;
  ag::NoGradGuard no_grad;
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    std::vector<const data::Image*> v, s;
    for (int j = start; j < start + count; ++j) {
      v.push_back(&dataset.samples[vis[static_cast<std::size_t>(j)]].image);
      s.push_back(&dataset.samples[sty[static_cast<std::size_t>(j)]].image);
    }
    const ag::Var style = generator.encode_style(ag::Var(images_tensor(s, cfg.image_h, cfg.image_w)));
    const ag::Var z =
        generator.generate_intermediate(ag::Var(images_tensor(v, cfg.image_h, cfg.image_w)), style);
    std::copy_n(z.value().data(), static_cast<std::size_t>(count) * per,
                out.data() + static_cast<std::size_t>(start) * per);
  }
  if (visible_of) *visible_of = std::move(vis);
  if (style_of) *style_of = std::move(sty);
  return out;
}

namespace {

Tensor pixel_features(const Tensor& images, int stride) {
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const int oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  Tensor out({n, c * oh * ow});
  double* o = out.data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; y += stride) {
        for (int x = 0; x < w; x += stride) {
          *o++ = images.data()[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x];
        }
      }
    }
  }
  return out;
}

}  // namespace

BridgingReport bridging_report(const Embedder& embedder, const Generator& generator,
                               const data::Dataset& dataset, const BridgingOptions& options) {
  std::vector<std::size_t> vis_idx;
  const Tensor z = generate_for_visible(generator, dataset, options.seed, &vis_idx);
  std::vector<const data::Image*> vis, ir;
  std::vector<int> labels_v, labels_i;
  for (std::size_t k : vis_idx) {
    vis.push_back(&dataset.samples[k].image);
    labels_v.push_back(dataset.samples[k].identity);
  }
  for (const auto& s : dataset.samples) {
    if (s.modality == data::Modality::kInfrared) {
      ir.push_back(&s.image);
      labels_i.push_back(s.identity);
    }
  }
  const auto& cfg = embedder.config();
  Tensor fv, fi, fz;
  if (options.space == FeatureSpace::kEmbedding) {
    fv = embed_images(embedder, vis, ImageFamily::kVisible);
    fi = embed_images(embedder, ir, ImageFamily::kInfrared);
    fz = embed_tensor(embedder, z, ImageFamily::kIntermediate, 64);
  } else {
    if (options.pixel_stride < 1) throw ArgumentError("pixel stride must be >= 1");
    fv = pixel_features(images_tensor(vis, cfg.image_h, cfg.image_w), options.pixel_stride);
    fi = pixel_features(images_tensor(ir, cfg.image_h, cfg.image_w), options.pixel_stride);
    fz = pixel_features(z, options.pixel_stride);
  }
  BridgingReport r = bridging_from_features(fv, fi, fz, labels_v, labels_i, labels_v, options.bandwidth);
  r.features = options.space == FeatureSpace::kEmbedding ? "embedding" : "pixels";
  return r;
}

double identity_information(const Embedder& embedder, const Generator& generator,
                            const data::Dataset& dataset, std::uint64_t seed) {
  std::vector<std::size_t> vis_idx;
  const Tensor z = generate_for_visible(generator, dataset, seed, &vis_idx);
  const Tensor f = embed_tensor(embedder, z, ImageFamily::kIntermediate, 64);
  std::vector<int> labels;
  for (std::size_t k : vis_idx) labels.push_back(dataset.samples[k].identity);
  ag::NoGradGuard no_grad;
  const ag::Var logits = embedder.classify(ag::Var(f));
  const double ce = ag::cross_entropy(logits, labels).item();
  return std::log(static_cast<double>(embedder.config().num_identities)) - ce;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("spearman needs two equal series of length >= 2");
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace agpi::eval
