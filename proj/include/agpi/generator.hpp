#pragma once

// Intermediate-image generator: a convolutional encoder (two stride-2
// downsamplings), a cross local attention fusion of visible content with an
// infrared style map at the bottleneck, and a mirrored decoder ending in a
// sigmoid so every output pixel lies in [0, 1].

#include <string>

#include "agpi/autograd.hpp"
#include "agpi/nn.hpp"
#include "agpi/rng.hpp"

namespace agpi {

struct GeneratorConfig {
  int image_h = 32;
  int image_w = 16;
  int channels = 3;
  int width = 8;  // encoder base width; bottleneck has 2 * width channels

  void check() const;
  int bottleneck_channels() const { return 2 * width; }
  int bottleneck_h() const { return image_h / 4; }
  int bottleneck_w() const { return image_w / 4; }
};

// Queries from content, keys and values from style, residual onto content.
class CrossLocalAttention {
 public:
  CrossLocalAttention() = default;
  CrossLocalAttention(nn::ParameterSet& params, const std::string& name, int channels, Rng& rng);

  struct Output {
    ag::Var features;
    ag::Var attention;  // [B, content positions, style positions]
  };
  // Style is resampled (nearest) onto the content grid when sizes differ.
  Output forward(const ag::Var& content, const ag::Var& style) const;

  const nn::Conv& output_projection() const { return out_; }

 private:
  int inner_ = 0;
  nn::Conv query_, key_, value_, out_;
};

class Generator {
 public:
  Generator(const GeneratorConfig& config, Rng& rng);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  const GeneratorConfig& config() const { return config_; }

  // Style map of infrared images [B,C,H,W] -> [B, 2w, H/4, W/4]. Callers
  // detach it before fusion.
  ag::Var encode_style(const ag::Var& infrared) const;
  // Fuses encoded visible content with a style map and decodes an image.
  ag::Var generate_intermediate(const ag::Var& visible, const ag::Var& style) const;
  // G(i, F^i) with the style computed from the same image, detached.
  ag::Var reconstruct_infrared(const ag::Var& infrared) const;

  const CrossLocalAttention& attention() const { return attention_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

 private:
  ag::Var encode(const ag::Var& images) const;
  // The output adds a 1x1 projection of `source`, initialised to the channel
  // mean so that an untrained generator emits a grey copy of its input.
  ag::Var decode(const ag::Var& features, const ag::Var& source) const;
  void check_images(const ag::Var& images, const char* what) const;

  GeneratorConfig config_;
  nn::ParameterSet params_;
  nn::Conv enc1_, enc2_, enc3_;
  CrossLocalAttention attention_;
  nn::Conv dec1_, dec2_, dec_out_, skip_;
};

}  // namespace agpi
