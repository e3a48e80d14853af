#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agpi/rng.hpp"
#include "agpi/tensor.hpp"

namespace agpi::data {

enum class Modality { kVisible, kInfrared };
enum class Split { kTrain, kQuery, kGallery };

std::string_view modality_name(Modality m);
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

// H x W x C image, interleaved channels, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

struct ImageSample {
  Image image;
  int identity = 0;  // dense label in [0, num_identities)
  Modality modality = Modality::kVisible;
  int camera = 0;
};

struct Dataset {
  std::vector<ImageSample> samples;
  int num_identities = 0;
  Split split = Split::kTrain;
  // identity_names[label] is the on-disk identity directory name.
  std::vector<std::string> identity_names;

  // Sample indices grouped [identity][k] for one modality.
  std::vector<std::vector<std::size_t>> index_by_identity(Modality m) const;
};

// Checks pixel range and label bounds; for TRAIN also that every identity
// has at least `min_per_modality` images in both modalities.
void validate(const Dataset& dataset, int min_per_modality);

// ---- on-disk layout -------------------------------------------------------
// <root>/<split>/<visible|infrared>/<identity>/<image>.png, 8-bit RGB.
// An image name starting with "c<digits>_" sets the camera; otherwise
// visible images get camera 0 and infrared images camera 1.

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

Dataset load_dataset(const std::filesystem::path& root, Split split);
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);

// Union of two datasets with labels re-derived from identity names (sorted).
// The result keeps the split of `a`.
Dataset merge_by_identity(const Dataset& a, const Dataset& b);

// ---- synthetic paired-modality data ---------------------------------------

// Appearance parameters of one synthetic identity.
struct GlyphIdentity {
  int shape = 0;
  double hue = 0.0;
  double ir_level = 0.0;
  double center_y = 0.0;
  double half_w = 0.0;
  double half_h = 0.0;
  int marker = 0;  // 0 none, 1 left, 2 right, 3 top
  bool stripe = false;
};

// Deterministic family of glyph identities drawn from one seed.
class ToyWorld {
 public:
  ToyWorld(int num_identities, std::uint64_t seed);

  int num_identities() const { return static_cast<int>(identities_.size()); }
  const GlyphIdentity& identity(int i) const { return identities_.at(static_cast<std::size_t>(i)); }

  Image render(int identity, Modality modality, int height, int width, Rng& rng) const;

  // `per_id` images per modality for identities [first, first + count).
  // Labels are dense from 0; names are the global identity number (%04d).
  Dataset render_split(Split split, int first, int count, int per_id, int height, int width,
                       std::uint64_t seed, bool visible = true, bool infrared = true) const;

 private:
  std::vector<GlyphIdentity> identities_;
};

Dataset synthesize_toy_dataset(int num_ids, int per_id, int height, int width,
                               std::uint64_t seed);

struct ToySplits {
  Dataset train;
  Dataset query;    // infrared images of unseen identities
  Dataset gallery;  // visible images of unseen identities
};

struct ToySpec {
  int train_ids = 16;
  int test_ids = 8;
  int per_id = 10;
  int height = 64;
  int width = 32;
  std::uint64_t seed = 1;
};

ToySplits synthesize_toy_splits(const ToySpec& spec);

// ---- batches ----------------------------------------------------------------

// Indices into the dataset; visible[k*p + j] and infrared[k*p + j] belong to
// identities[k].
struct Batch {
  std::vector<std::size_t> visible;
  std::vector<std::size_t> infrared;
  std::vector<int> identities;
  int per_identity = 0;

  std::vector<int> labels(const Dataset& dataset, Modality m) const;
};

Batch sample_batch(const Dataset& dataset, int b, int p, Rng& rng);

// Epoch-style sampler: walks a shuffled identity order so every identity is
// visited once per epoch before any repeats.
class BatchSampler {
 public:
  BatchSampler(const Dataset& dataset, int b, int p);
  Batch next(Rng& rng);

  // Position within the current epoch, for checkpointing.
  const std::vector<int>& order() const { return order_; }
  std::size_t cursor() const { return cursor_; }
  void restore(std::vector<int> order, std::size_t cursor);

 private:
  const Dataset* dataset_;
  int b_;
  int p_;
  std::vector<std::vector<std::size_t>> by_visible_;
  std::vector<std::vector<std::size_t>> by_infrared_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

// ---- augmentation -----------------------------------------------------------

struct EraseSchedule {
  double p_start = 0.30;
  double p_end = 0.50;
  double s_start = 0.20;
  double s_end = 0.30;
  long total_steps = 1;

  void check() const;
  double probability(long step) const;
  double area(long step) const;
};

// Bilinear resize (align-corners off).
Image resize(const Image& image, int out_h, int out_w);
// Zero-padded random crop back to the same size.
Image random_pad_crop(const Image& image, int pad, Rng& rng);
int crop_padding(int out_w);

// Resize to out_h x out_w; when training, additionally zero-pad and crop at a
// random offset.
ImageSample preprocess(const ImageSample& image, int out_h, int out_w, Rng& rng, bool training);

// Rectangle filled by random_erase; h == 0 when the image was left alone.
struct EraseRegion {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

Image random_erase(const Image& image, const EraseSchedule& schedule, long step, Rng& rng,
                   EraseRegion* region = nullptr);

// Stacks images into a [B, C, H, W] tensor.
Tensor to_tensor(const std::vector<const Image*>& images);
// Inverse of to_tensor for one item.
Image from_tensor(const Tensor& batch, int index);

}  // namespace agpi::data
