#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "agpi/error.hpp"
#include "agpi/trainer.hpp"

namespace agpi {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view text) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ArgumentError("'" + std::string(text) + "' is not a valid number");
  }
  return value;
}

bool parse_bool(std::string_view text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw ArgumentError("'" + std::string(text) + "' is not a boolean (0|1|true|false)");
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view)> set;
};

template <typename T>
Field number(const char* key, T TrainConfig::*member) {
  return {key,
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member](TrainConfig& c, std::string_view v) { c.*member = parse_number<T>(v); }};
}

template <typename S, typename T>
Field nested(const char* key, S TrainConfig::*outer, T S::*member) {
  return {key,
          [outer, member](const TrainConfig& c) {
            if constexpr (std::is_same_v<T, bool>) {
              return std::string((c.*outer).*member ? "1" : "0");
            } else if constexpr (std::is_floating_point_v<T>) {
              return format_double((c.*outer).*member);
            } else {
              return std::to_string((c.*outer).*member);
            }
          },
          [outer, member](TrainConfig& c, std::string_view v) {
            if constexpr (std::is_same_v<T, bool>) {
              (c.*outer).*member = parse_bool(v);
            } else {
              (c.*outer).*member = parse_number<T>(v);
            }
          }};
}

Field flag(const char* key, bool TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) { return std::string(c.*member ? "1" : "0"); },
          [member](TrainConfig& c, std::string_view v) { c.*member = parse_bool(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      number("b", &TrainConfig::b),
      number("p", &TrainConfig::p),
      number("steps", &TrainConfig::steps),
      number("seed", &TrainConfig::seed),
      {"mode",
       [](const TrainConfig& c) { return std::string(c.mode == TrainMode::kFull ? "full" : "iv"); },
       [](TrainConfig& c, std::string_view v) {
         if (v == "full") {
           c.mode = TrainMode::kFull;
         } else if (v == "iv") {
           c.mode = TrainMode::kVisibleInfrared;
         } else {
           throw ArgumentError("mode must be full or iv");
         }
       }},
      {"triplet",
       [](const TrainConfig& c) { return std::string(c.triplet == TripletMode::kDual ? "dual" : "plain"); },
       [](TrainConfig& c, std::string_view v) {
         if (v == "dual") {
           c.triplet = TripletMode::kDual;
         } else if (v == "plain") {
           c.triplet = TripletMode::kPlain;
         } else {
           throw ArgumentError("triplet must be dual or plain");
         }
       }},
      flag("id_on_intermediate", &TrainConfig::id_on_intermediate),
      flag("dis_on_intermediate", &TrainConfig::dis_on_intermediate),
      flag("binary_discriminator", &TrainConfig::binary_discriminator),
      flag("augment", &TrainConfig::augment),
      nested("lr_f", &TrainConfig::sgd, &optim::SgdOptions::lr),
      nested("momentum", &TrainConfig::sgd, &optim::SgdOptions::momentum),
      nested("weight_decay", &TrainConfig::sgd, &optim::SgdOptions::weight_decay),
      nested("lr_g", &TrainConfig::adam_g, &optim::AdamOptions::lr),
      nested("lr_d", &TrainConfig::adam_d, &optim::AdamOptions::lr),
      nested("beta1_g", &TrainConfig::adam_g, &optim::AdamOptions::beta1),
      nested("beta2_g", &TrainConfig::adam_g, &optim::AdamOptions::beta2),
      nested("beta1_d", &TrainConfig::adam_d, &optim::AdamOptions::beta1),
      nested("beta2_d", &TrainConfig::adam_d, &optim::AdamOptions::beta2),
      nested("m1", &TrainConfig::weights, &losses::LossWeights::margin_m1),
      nested("m2", &TrainConfig::weights, &losses::LossWeights::margin_m2),
      nested("lambda_adv", &TrainConfig::weights, &losses::LossWeights::lambda_adv),
      nested("lambda_cf", &TrainConfig::weights, &losses::LossWeights::lambda_cf),
      nested("soft_margin", &TrainConfig::weights, &losses::LossWeights::soft_margin),
      nested("erase_p_start", &TrainConfig::erase, &data::EraseSchedule::p_start),
      nested("erase_p_end", &TrainConfig::erase, &data::EraseSchedule::p_end),
      nested("erase_s_start", &TrainConfig::erase, &data::EraseSchedule::s_start),
      nested("erase_s_end", &TrainConfig::erase, &data::EraseSchedule::s_end),
      nested("image_h", &TrainConfig::embedding, &EmbeddingConfig::image_h),
      nested("image_w", &TrainConfig::embedding, &EmbeddingConfig::image_w),
      nested("feature_dim", &TrainConfig::embedding, &EmbeddingConfig::feature_dim),
      nested("stem_channels", &TrainConfig::embedding, &EmbeddingConfig::stem_channels),
      nested("trunk_channels", &TrainConfig::embedding, &EmbeddingConfig::trunk_channels),
      nested("norm_groups", &TrainConfig::embedding, &EmbeddingConfig::norm_groups),
      nested("family_neck", &TrainConfig::embedding, &EmbeddingConfig::family_neck),
      nested("attention", &TrainConfig::embedding, &EmbeddingConfig::attention_enabled),
      nested("tie_stems", &TrainConfig::embedding, &EmbeddingConfig::tie_stems),
      nested("gen_width", &TrainConfig::generator, &GeneratorConfig::width),
      number("checkpoint_every", &TrainConfig::checkpoint_every),
  };
  return table;
}

}  // namespace

void TrainConfig::check() const {
  if (b < 2) throw ConfigError("b must be >= 2 (got " + std::to_string(b) + ")");
  if (p < 1) throw ConfigError("p must be >= 1 (got " + std::to_string(p) + ")");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(sgd.lr > 0 && adam_g.lr > 0 && adam_d.lr > 0)) throw ConfigError("learning rates must be > 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (embedding.image_h != generator.image_h || embedding.image_w != generator.image_w) {
    throw ConfigError("embedder and generator image sizes differ");
  }
  try {
    weights.check();
    data::EraseSchedule e = erase;
    e.total_steps = steps;
    e.check();
    embedding.check();
    generator.check();
  } catch (const ArgumentError& err) {
    throw ConfigError(err.what());
  }
}

std::string TrainConfig::serialize() const {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
  return out;
}

std::string TrainConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const Field& f : fields()) {
      if (key == f.key) field = &f;
    }
    if (field == nullptr) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      field->set(config, value);
    } catch (const ArgumentError& err) {
      throw ConfigError(where + key + ": " + err.what());
    }
  }
  for (const char* required : {"b", "p", "steps", "seed"}) {
    if (!seen.contains(required)) throw ConfigError(std::string("missing required key '") + required + "'");
  }
  config.generator.image_h = config.embedding.image_h;
  config.generator.image_w = config.embedding.image_w;
  config.generator.channels = config.embedding.channels;
  config.erase.total_steps = config.steps;
  config.check();
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace agpi
