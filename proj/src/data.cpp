#include "agpi/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <regex>

#include "agpi/error.hpp"

namespace agpi::data {

namespace fs = std::filesystem;

std::string_view modality_name(Modality m) {
  return m == Modality::kVisible ? "visible" : "infrared";
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kQuery:
      return "query";
    case Split::kGallery:
      return "gallery";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "query") return Split::kQuery;
  if (name == "gallery") return Split::kGallery;
  throw ArgumentError("unknown split '" + std::string(name) + "'");
}

std::vector<std::vector<std::size_t>> Dataset::index_by_identity(Modality m) const {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(num_identities));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].modality == m) out[static_cast<std::size_t>(samples[i].identity)].push_back(i);
  }
  return out;
}

static std::string identity_label(const Dataset& d, int id) {
  if (id >= 0 && static_cast<std::size_t>(id) < d.identity_names.size()) return d.identity_names[id];
  return std::to_string(id);
}

void validate(const Dataset& dataset, int min_per_modality) {
  if (dataset.samples.empty()) {
    throw ValidationError("dataset split '" + std::string(split_name(dataset.split)) + "' is empty");
  }
  for (const auto& s : dataset.samples) {
    if (s.identity < 0 || s.identity >= dataset.num_identities) {
      throw ValidationError("identity label " + std::to_string(s.identity) + " outside [0, " +
                            std::to_string(dataset.num_identities) + ")");
    }
    for (double v : s.image.pixels) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("pixel value outside [0,1]");
    }
  }
  if (dataset.split != Split::kTrain) return;
  const auto vis = dataset.index_by_identity(Modality::kVisible);
  const auto ir = dataset.index_by_identity(Modality::kInfrared);
  for (int id = 0; id < dataset.num_identities; ++id) {
    const auto nv = static_cast<int>(vis[id].size());
    const auto ni = static_cast<int>(ir[id].size());
    if (nv < min_per_modality || ni < min_per_modality) {
      throw ValidationError("identity " + identity_label(dataset, id) + " has " + std::to_string(nv) +
                            " visible and " + std::to_string(ni) + " infrared images; need at least " +
                            std::to_string(min_per_modality) + " of each");
    }
  }
}

// ---- PNG ------------------------------------------------------------------

Image read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw LoadError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw LoadError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width), 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) out.pixels[i] = buffer[i] / 255.0;
  return out;
}

void write_png(const fs::path& path, const Image& image) {
  if (image.channels != 3) throw ArgumentError("write_png expects 3 channels");
  std::vector<unsigned char> buffer(image.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const double v = std::clamp(image.pixels[i], 0.0, 1.0);
    buffer[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw LoadError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

// ---- dataset IO -------------------------------------------------------------

Dataset load_dataset(const fs::path& root, Split split) {
  const fs::path base = root / split_name(split);
  if (!fs::is_directory(base)) throw LoadError("missing dataset directory " + base.string());

  struct Found {
    fs::path path;
    std::string identity;
    Modality modality;
    int camera;
  };
  std::vector<Found> found;
  std::map<std::string, int> names;
  static const std::regex camera_re(R"(^c(\d+)_)");
  for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
    const fs::path mdir = base / modality_name(m);
    if (!fs::is_directory(mdir)) continue;
    std::vector<fs::path> ids;
    for (const auto& e : fs::directory_iterator(mdir)) {
      if (e.is_directory()) ids.push_back(e.path());
    }
    std::sort(ids.begin(), ids.end());
    for (const auto& idir : ids) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(idir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      const std::string id = idir.filename().string();
      for (const auto& f : files) {
        int camera = m == Modality::kVisible ? 0 : 1;
        std::smatch match;
        const std::string stem = f.filename().string();
        if (std::regex_search(stem, match, camera_re)) camera = std::stoi(match[1].str());
        found.push_back({f, id, m, camera});
        names.emplace(id, 0);
      }
    }
  }

  Dataset ds;
  ds.split = split;
  for (auto& [name, label] : names) {
    label = static_cast<int>(ds.identity_names.size());
    ds.identity_names.push_back(name);
  }
  ds.num_identities = static_cast<int>(ds.identity_names.size());
  if (found.empty()) {
    throw ValidationError("dataset split '" + std::string(split_name(split)) + "' under " +
                          root.string() + " contains no images");
  }
  for (const auto& f : found) {
    ImageSample s;
    s.image = read_png(f.path);
    s.identity = names.at(f.identity);
    s.modality = f.modality;
    s.camera = f.camera;
    ds.samples.push_back(std::move(s));
  }
  validate(ds, 1);
  return ds;
}

void write_dataset(const fs::path& root, const Dataset& dataset) {
  std::map<std::pair<int, int>, int> counters;
  for (const auto& s : dataset.samples) {
    const std::string id = s.identity < static_cast<int>(dataset.identity_names.size())
                               ? dataset.identity_names[s.identity]
                               : std::to_string(s.identity);
    const fs::path dir = root / split_name(dataset.split) / modality_name(s.modality) / id;
    fs::create_directories(dir);
    int& k = counters[{s.identity, static_cast<int>(s.modality)}];
    char name[64];
    std::snprintf(name, sizeof(name), "c%d_%04d.png", s.camera, k++);
    write_png(dir / name, s.image);
  }
}

Dataset merge_by_identity(const Dataset& a, const Dataset& b) {
  std::map<std::string, int> label_of;
  for (const auto& n : a.identity_names) label_of.emplace(n, 0);
  for (const auto& n : b.identity_names) label_of.emplace(n, 0);
  Dataset out;
  out.split = a.split;
  for (auto& [name, label] : label_of) {
    label = static_cast<int>(out.identity_names.size());
    out.identity_names.push_back(name);
  }
  out.num_identities = static_cast<int>(out.identity_names.size());
  for (const Dataset* ds : {&a, &b}) {
    for (const auto& s : ds->samples) {
      ImageSample copy = s;
      copy.identity = label_of.at(ds->identity_names.at(static_cast<std::size_t>(s.identity)));
      out.samples.push_back(std::move(copy));
    }
  }
  return out;
}

// ---- synthetic glyphs -------------------------------------------------------

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int c = 0; c < 3; ++c) rgb[c] = table[i][c];
}

bool inside_shape(int shape, double u, double v) {
  const double r2 = u * u + v * v;
  switch (shape) {
    case 0:
      return r2 <= 1.0;
    case 1:
      return std::fabs(u) <= 1.0 && std::fabs(v) <= 1.0;
    case 2:
      return v >= -1.0 && v <= 1.0 && std::fabs(u) <= (v + 1.0) / 2.0;
    case 3:
      return v >= -1.0 && v <= 1.0 && std::fabs(u) <= (1.0 - v) / 2.0;
    case 4:
      return std::fabs(u) + std::fabs(v) <= 1.0;
    case 5:
      return (std::fabs(u) <= 0.35 && std::fabs(v) <= 1.0) || (std::fabs(v) <= 0.35 && std::fabs(u) <= 1.0);
    case 6:
      return r2 <= 1.0 && r2 >= 0.45;
    default:
      return std::fabs(u) <= 1.0 && (std::fabs(v - 0.55) <= 0.35 || std::fabs(v + 0.55) <= 0.35);
  }
}

constexpr int kShapes = 8;

double quantize(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

ToyWorld::ToyWorld(int num_identities, std::uint64_t seed) {
  if (num_identities < 2) throw ArgumentError("toy dataset needs at least 2 identities");
  Rng rng(mix(seed));
  identities_.reserve(static_cast<std::size_t>(num_identities));
  for (int i = 0; i < num_identities; ++i) {
    GlyphIdentity g;
    g.shape = static_cast<int>(rng.below(kShapes));
    g.hue = rng.uniform();
    g.ir_level = rng.uniform(0.45, 0.95);
    g.center_y = rng.uniform(-0.3, 0.3);
    g.half_w = rng.uniform(0.45, 0.8);
    g.half_h = rng.uniform(0.25, 0.5);
    g.marker = static_cast<int>(rng.below(4));
    g.stripe = rng.bernoulli(0.5);
    identities_.push_back(g);
  }
}

Image ToyWorld::render(int identity, Modality modality, int height, int width, Rng& rng) const {
  const GlyphIdentity& g = this->identity(identity);
  Image img(height, width, 3);
  const bool visible = modality == Modality::kVisible;

  const double du = rng.uniform(-0.08, 0.08);
  const double dv = rng.uniform(-0.08, 0.08);
  const double s = rng.uniform(0.93, 1.07);
  const double cx = du, cy = g.center_y + dv;
  const double hw = g.half_w * s, hh = g.half_h * s;

  double bg_top[3], bg_bottom[3], body[3], stripe[3], marker[3];
  if (visible) {
    hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.35), rng.uniform(0.25, 0.75), bg_top);
    hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.35), rng.uniform(0.25, 0.75), bg_bottom);
    const double val = rng.uniform(0.75, 0.95);
    hsv_to_rgb(g.hue, 0.85, val, body);
    hsv_to_rgb(g.hue, 0.85, val * 0.45, stripe);
    for (double& c : marker) c = 0.95;
  } else {
    const double top = rng.uniform(0.08, 0.22), bottom = rng.uniform(0.08, 0.22);
    const double level = g.ir_level * rng.uniform(0.9, 1.1);
    for (int c = 0; c < 3; ++c) {
      bg_top[c] = top;
      bg_bottom[c] = bottom;
      body[c] = level;
      stripe[c] = level * 0.45;
      marker[c] = 0.9;
    }
  }

  double mx = 0.0, my = 0.0;
  switch (g.marker) {
    case 1:
      mx = cx - hw - 0.2;
      my = cy;
      break;
    case 2:
      mx = cx + hw + 0.2;
      my = cy;
      break;
    case 3:
      mx = cx;
      my = cy - hh - 0.15;
      break;
    default:
      break;
  }

  const double noise = visible ? 0.03 : 0.05;
  for (int y = 0; y < height; ++y) {
    const double v = (y + 0.5) / height * 2.0 - 1.0;
    const double t = static_cast<double>(y) / std::max(1, height - 1);
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width * 2.0 - 1.0;
      const double lu = (u - cx) / hw, lv = (v - cy) / hh;
      const double* color = nullptr;
      double bg[3];
      if (inside_shape(g.shape, lu, lv)) {
        color = (g.stripe && std::fabs(lv) <= 0.18) ? stripe : body;
      } else if (g.marker != 0 && std::fabs(u - mx) <= 0.12 && std::fabs(v - my) <= 0.07) {
        color = marker;
      } else {
        for (int c = 0; c < 3; ++c) bg[c] = (1 - t) * bg_top[c] + t * bg_bottom[c];
        color = bg;
      }
      if (visible) {
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = quantize(color[c] + noise * rng.normal());
      } else {
        // Single channel replicated: colour carries no information here.
        const double remapped = std::pow(std::clamp(color[0], 0.0, 1.0), 0.8);
        const double q = quantize(remapped + noise * rng.normal());
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = q;
      }
    }
  }
  return img;
}

Dataset ToyWorld::render_split(Split split, int first, int count, int per_id, int height,
                               int width, std::uint64_t seed, bool visible,
                               bool infrared) const {
  if (per_id < 1 || height < 1 || width < 1) throw ArgumentError("render_split: bad size arguments");
  if (first < 0 || first + count > num_identities()) throw ArgumentError("render_split: identity range");
  Dataset ds;
  ds.split = split;
  ds.num_identities = count;
  for (int k = 0; k < count; ++k) {
    const int global = first + k;
    char name[16];
    std::snprintf(name, sizeof(name), "%04d", global);
    ds.identity_names.emplace_back(name);
    for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
      if ((m == Modality::kVisible && !visible) || (m == Modality::kInfrared && !infrared)) continue;
      Rng rng(mix(seed ^ mix(static_cast<std::uint64_t>(global) * 2 + static_cast<int>(m))));
      for (int j = 0; j < per_id; ++j) {
        ImageSample s;
        s.image = render(global, m, height, width, rng);
        s.identity = k;
        s.modality = m;
        s.camera = m == Modality::kVisible ? 0 : 1;
        ds.samples.push_back(std::move(s));
      }
    }
  }
  return ds;
}

Dataset synthesize_toy_dataset(int num_ids, int per_id, int height, int width, std::uint64_t seed) {
  if (num_ids < 2) throw ArgumentError("toy dataset needs num_ids >= 2, got " + std::to_string(num_ids));
  if (per_id < 2) throw ArgumentError("toy dataset needs per_id >= 2, got " + std::to_string(per_id));
  ToyWorld world(num_ids, seed);
  return world.render_split(Split::kTrain, 0, num_ids, per_id, height, width, mix(seed + 1));
}

ToySplits synthesize_toy_splits(const ToySpec& spec) {
  if (spec.train_ids < 2 || spec.test_ids < 1) throw ArgumentError("toy splits: identity counts");
  if (spec.per_id < 2) throw ArgumentError("toy splits: per_id must be >= 2");
  ToyWorld world(spec.train_ids + spec.test_ids, spec.seed);
  ToySplits out;
  out.train = world.render_split(Split::kTrain, 0, spec.train_ids, spec.per_id, spec.height,
                                 spec.width, mix(spec.seed + 1));
  out.query = world.render_split(Split::kQuery, spec.train_ids, spec.test_ids, spec.per_id,
                                 spec.height, spec.width, mix(spec.seed + 2), false, true);
  out.gallery = world.render_split(Split::kGallery, spec.train_ids, spec.test_ids, spec.per_id,
                                   spec.height, spec.width, mix(spec.seed + 3), true, false);
  return out;
}

// ---- batches ----------------------------------------------------------------

std::vector<int> Batch::labels(const Dataset& dataset, Modality m) const {
  const auto& idx = m == Modality::kVisible ? visible : infrared;
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(dataset.samples[i].identity);
  return out;
}

namespace {

void check_batch_args(const Dataset& dataset, int b, int p) {
  if (dataset.split != Split::kTrain) throw ArgumentError("batches are drawn from the TRAIN split");
  if (b < 2) throw ArgumentError("batch needs b >= 2 identities, got " + std::to_string(b));
  if (p < 1) throw ArgumentError("batch needs p >= 1, got " + std::to_string(p));
  if (b > dataset.num_identities) {
    throw ArgumentError("batch asks for b=" + std::to_string(b) + " identities but dataset has " +
                        std::to_string(dataset.num_identities));
  }
}

// First k entries of a partial Fisher-Yates shuffle.
std::vector<std::size_t> choose(const std::vector<std::size_t>& pool, int k, Rng& rng) {
  std::vector<std::size_t> v = pool;
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(v.size() - static_cast<std::size_t>(i));
    std::swap(v[static_cast<std::size_t>(i)], v[j]);
  }
  v.resize(static_cast<std::size_t>(k));
  return v;
}

void fill_identity(Batch& batch, int id, const std::vector<std::size_t>& vis,
                   const std::vector<std::size_t>& ir, int p, Rng& rng) {
  batch.identities.push_back(id);
  for (std::size_t i : choose(vis, p, rng)) batch.visible.push_back(i);
  for (std::size_t i : choose(ir, p, rng)) batch.infrared.push_back(i);
}

}  // namespace

Batch sample_batch(const Dataset& dataset, int b, int p, Rng& rng) {
  check_batch_args(dataset, b, p);
  validate(dataset, p);
  const auto vis = dataset.index_by_identity(Modality::kVisible);
  const auto ir = dataset.index_by_identity(Modality::kInfrared);
  std::vector<std::size_t> ids(static_cast<std::size_t>(dataset.num_identities));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  Batch batch;
  batch.per_identity = p;
  for (std::size_t id : choose(ids, b, rng)) {
    fill_identity(batch, static_cast<int>(id), vis[id], ir[id], p, rng);
  }
  return batch;
}

BatchSampler::BatchSampler(const Dataset& dataset, int b, int p)
    : dataset_(&dataset), b_(b), p_(p) {
  check_batch_args(dataset, b, p);
  validate(dataset, p);
  by_visible_ = dataset.index_by_identity(Modality::kVisible);
  by_infrared_ = dataset.index_by_identity(Modality::kInfrared);
}

Batch BatchSampler::next(Rng& rng) {
  if (cursor_ + static_cast<std::size_t>(b_) > order_.size()) {
    order_.resize(static_cast<std::size_t>(dataset_->num_identities));
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    rng.shuffle(order_.begin(), order_.end());
    cursor_ = 0;
  }
  Batch batch;
  batch.per_identity = p_;
  for (int k = 0; k < b_; ++k) {
    const int id = order_[cursor_++];
    fill_identity(batch, id, by_visible_[id], by_infrared_[id], p_, rng);
  }
  return batch;
}

void BatchSampler::restore(std::vector<int> order, std::size_t cursor) {
  if (cursor > order.size()) throw ArgumentError("sampler cursor past the end of its epoch");
  for (int id : order) {
    if (id < 0 || id >= dataset_->num_identities) {
      throw ArgumentError("sampler order names identity " + std::to_string(id) +
                          " outside the dataset");
    }
  }
  order_ = std::move(order);
  cursor_ = cursor;
}

// ---- augmentation -----------------------------------------------------------

void EraseSchedule::check() const {
  if (!(0.0 <= p_start && p_start <= p_end && p_end <= 1.0)) {
    throw ArgumentError("erase schedule needs 0 <= p_start <= p_end <= 1");
  }
  if (!(0.0 < s_start && s_start <= s_end && s_end < 1.0)) {
    throw ArgumentError("erase schedule needs 0 < s_start <= s_end < 1");
  }
  if (total_steps < 1) throw ArgumentError("erase schedule needs total_steps >= 1");
}

namespace {
double progress(long step, long total) {
  const long s = std::clamp(step, 0L, total);
  return static_cast<double>(s) / static_cast<double>(total);
}
}  // namespace

double EraseSchedule::probability(long step) const {
  const double t = progress(step, total_steps);
  return (1.0 - t) * p_start + t * p_end;
}

double EraseSchedule::area(long step) const {
  const double t = progress(step, total_steps);
  return (1.0 - t) * s_start + t * s_end;
}

Image resize(const Image& image, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) {
    throw ArgumentError("resize target must be positive, got " + std::to_string(out_h) + "x" +
                        std::to_string(out_w));
  }
  if (image.height == out_h && image.width == out_w) return image;
  Image out(out_h, out_w, image.channels);
  const double sy = static_cast<double>(image.height) / out_h;
  const double sx = static_cast<double>(image.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = (1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
        const double bottom = (1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
        out.at(y, x, c) = std::clamp((1 - wy) * top + wy * bottom, 0.0, 1.0);
      }
    }
  }
  return out;
}

int crop_padding(int out_w) { return std::max(1, static_cast<int>(std::lround(out_w * 10.0 / 144.0))); }

Image random_pad_crop(const Image& image, int pad, Rng& rng) {
  const int oy = rng.uniform_int(0, 2 * pad) - pad;
  const int ox = rng.uniform_int(0, 2 * pad) - pad;
  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y) {
    const int sy = y + oy;
    if (sy < 0 || sy >= image.height) continue;
    for (int x = 0; x < image.width; ++x) {
      const int sx = x + ox;
      if (sx < 0 || sx >= image.width) continue;
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

ImageSample preprocess(const ImageSample& image, int out_h, int out_w, Rng& rng, bool training) {
  ImageSample out = image;
  out.image = resize(image.image, out_h, out_w);
  if (training) out.image = random_pad_crop(out.image, crop_padding(out_w), rng);
  return out;
}

Image random_erase(const Image& image, const EraseSchedule& schedule, long step, Rng& rng,
                   EraseRegion* region) {
  if (region) *region = {};
  if (!rng.bernoulli(schedule.probability(step))) return image;
  const double target = schedule.area(step) * image.height * image.width;
  int h = 0, w = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double aspect = std::exp(rng.uniform(std::log(0.3), std::log(1.0 / 0.3)));
    const int th = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int tw = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (th >= 1 && tw >= 1 && th <= image.height && tw <= image.width) {
      h = th;
      w = tw;
      break;
    }
  }
  if (h == 0) {
    h = std::clamp(static_cast<int>(std::lround(std::sqrt(target))), 1, image.height);
    w = std::clamp(static_cast<int>(std::lround(target / h)), 1, image.width);
  }
  const int y0 = rng.uniform_int(0, image.height - h);
  const int x0 = rng.uniform_int(0, image.width - w);
  if (region) *region = {y0, x0, h, w};
  Image out = image;
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = rng.uniform();
    }
  }
  return out;
}

Tensor to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ArgumentError("to_tensor of no images");
  const int h = images[0]->height, w = images[0]->width, c = images[0]->channels;
  Tensor t({static_cast<int>(images.size()), c, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& im = *images[b];
    if (im.height != h || im.width != w || im.channels != c) {
      throw ArgumentError("to_tensor: images differ in shape");
    }
    double* dst = t.data() + b * c * plane;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch) dst[ch * plane + y * w + x] = im.at(y, x, ch);
      }
    }
  }
  return t;
}

Image from_tensor(const Tensor& batch, int index) {
  if (batch.rank() != 4) throw ArgumentError("from_tensor expects [B,C,H,W]");
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Image im(h, w, c);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double* src = batch.data() + static_cast<std::size_t>(index) * c * plane;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) im.at(y, x, ch) = std::clamp(src[ch * plane + y * w + x], 0.0, 1.0);
    }
  }
  return im;
}

}  // namespace agpi::data
