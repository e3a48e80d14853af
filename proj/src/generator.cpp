#include "agpi/generator.hpp"

#include "agpi/error.hpp"

namespace agpi {

void GeneratorConfig::check() const {
  if (image_h % 4 != 0 || image_w % 4 != 0 || image_h < 4 || image_w < 4) {
    throw ArgumentError("generator image size must be a positive multiple of 4");
  }
  if (width < 1) throw ArgumentError("generator width must be positive");
}

CrossLocalAttention::CrossLocalAttention(nn::ParameterSet& params, const std::string& name,
                                         int channels, Rng& rng)
    : inner_(std::max(1, channels / 2)) {
  query_ = nn::make_pointwise(params, name + ".query", channels, inner_, rng);
  key_ = nn::make_pointwise(params, name + ".key", channels, inner_, rng);
  value_ = nn::make_pointwise(params, name + ".value", channels, inner_, rng);
  out_ = nn::make_pointwise(params, name + ".out", inner_, channels, rng, /*zero=*/true);
}

CrossLocalAttention::Output CrossLocalAttention::forward(const ag::Var& content,
                                                         const ag::Var& style) const {
  if (content.value().rank() != 4 || style.value().rank() != 4 || content.dim(0) != style.dim(0) ||
      content.dim(1) != style.dim(1)) {
    throw ArgumentError("cross attention: incompatible content " + shape_string(content.shape()) +
                        " and style " + shape_string(style.shape()));
  }
  const int b = content.dim(0), h = content.dim(2), w = content.dim(3);
  const ag::Var aligned = ag::resample_nearest(style, h, w);
  const Shape flat{b, inner_, h * w};
  auto att = nn::spatial_attention(ag::reshape(query_(content), flat), ag::reshape(key_(aligned), flat),
                                   ag::reshape(value_(aligned), flat));
  ag::Var y = out_(ag::reshape(att.aggregated, {b, inner_, h, w}));
  return {ag::add(content, y), att.weights};
}

Generator::Generator(const GeneratorConfig& config, Rng& rng) : config_(config), params_("generator") {
  config_.check();
  const int w = config_.width;
  enc1_ = nn::make_conv(params_, "encoder.conv1", config_.channels, w, 3, 1, rng);
  enc2_ = nn::make_conv(params_, "encoder.conv2", w, 2 * w, 3, 2, rng);
  enc3_ = nn::make_conv(params_, "encoder.conv3", 2 * w, 2 * w, 3, 2, rng);
  attention_ = CrossLocalAttention(params_, "fusion", 2 * w, rng);
  dec1_ = nn::make_conv(params_, "decoder.conv1", 2 * w, 2 * w, 3, 1, rng);
  dec2_ = nn::make_conv(params_, "decoder.conv2", 2 * w, w, 3, 1, rng);
  dec_out_ = nn::make_conv(params_, "decoder.out", w, config_.channels, 3, 1, rng);
  const int c = config_.channels;
  skip_.weight = params_.add("decoder.skip.weight", Tensor({c, c, 1, 1}, 4.0 / c));
  skip_.bias = params_.add("decoder.skip.bias", Tensor({c}, -2.0));
  skip_.options = {1, 0};
}

void Generator::check_images(const ag::Var& images, const char* what) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != config_.channels || s[2] != config_.image_h || s[3] != config_.image_w) {
    throw ArgumentError(std::string(what) + ": expected [B," + std::to_string(config_.channels) + "," +
                        std::to_string(config_.image_h) + "," + std::to_string(config_.image_w) +
                        "] images, got " + shape_string(s));
  }
}

ag::Var Generator::encode(const ag::Var& images) const {
  ag::Var x = ag::leaky_relu(enc1_(images), 0.2);
  x = ag::leaky_relu(enc2_(x), 0.2);
  return ag::leaky_relu(enc3_(x), 0.2);
}

ag::Var Generator::decode(const ag::Var& features, const ag::Var& source) const {
  ag::Var x = ag::leaky_relu(dec1_(ag::upsample_nearest2x(features)), 0.2);
  x = ag::leaky_relu(dec2_(ag::upsample_nearest2x(x)), 0.2);
  return ag::sigmoid(ag::add(dec_out_(x), skip_(source)));
}

ag::Var Generator::encode_style(const ag::Var& infrared) const {
  check_images(infrared, "encode_style");
  return encode(infrared);
}

ag::Var Generator::generate_intermediate(const ag::Var& visible, const ag::Var& style) const {
  check_images(visible, "generate_intermediate");
  return decode(attention_.forward(encode(visible), style).features, visible);
}

ag::Var Generator::reconstruct_infrared(const ag::Var& infrared) const {
  check_images(infrared, "reconstruct_infrared");
  const ag::Var content = encode(infrared);
  return decode(attention_.forward(content, content.detach()).features, infrared);
}

}  // namespace agpi
