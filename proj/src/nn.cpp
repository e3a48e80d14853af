#include "agpi/nn.hpp"

#include <cmath>

#include "agpi/error.hpp"

namespace agpi::nn {

ag::Var ParameterSet::add(const std::string& name, Tensor init) {
  const std::string full = prefix_.empty() ? name : prefix_ + "." + name;
  for (const auto& e : entries_) {
    if (e.name == full) throw ArgumentError("duplicate parameter " + full);
  }
  ag::Var v(std::move(init), true);
  entries_.push_back({full, v});
  return v;
}

const ag::Var& ParameterSet::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.var;
  }
  throw ArgumentError("unknown parameter " + name);
}

void ParameterSet::set_trainable(bool on) {
  for (auto& e : entries_) {
    ag::Var v = e.var;
    v.set_requires_grad(on);
  }
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) {
    ag::Var v = e.var;
    v.zero_grad();
  }
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.size();
  return n;
}

std::map<std::string, Tensor> ParameterSet::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& e : entries_) out.emplace(e.name, e.var.value());
  return out;
}

void ParameterSet::restore(const std::map<std::string, Tensor>& values) {
  for (auto& e : entries_) {
    auto it = values.find(e.name);
    if (it == values.end()) throw CheckpointError("checkpoint lacks parameter " + e.name);
    if (it->second.shape() != e.var.shape()) {
      throw CheckpointError("shape mismatch for " + e.name + ": stored " +
                            shape_string(it->second.shape()) + ", model " +
                            shape_string(e.var.shape()));
    }
    ag::Var v = e.var;
    v.mutable_value() = it->second;
  }
}

Tensor scaled_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& x : t.values()) x = stddev * rng.normal();
  return t;
}

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  return scaled_normal(std::move(shape), std::sqrt(2.0 / fan_in), rng);
}

GroupNorm make_group_norm(ParameterSet& params, const std::string& name, int channels, int groups) {
  if (groups < 1 || channels % groups != 0) {
    throw ArgumentError(name + ": " + std::to_string(channels) + " channels not divisible into " +
                        std::to_string(groups) + " groups");
  }
  GroupNorm n;
  n.gamma = params.add(name + ".gamma", Tensor({channels}, 1.0));
  n.beta = params.add(name + ".beta", Tensor({channels}, 0.0));
  n.groups = groups;
  return n;
}

Conv make_conv(ParameterSet& params, const std::string& name, int in, int out, int kernel,
               int stride, Rng& rng, bool with_bias) {
  Conv c;
  c.weight = params.add(name + ".weight", he_normal({out, in, kernel, kernel}, in * kernel * kernel, rng));
  if (with_bias) c.bias = params.add(name + ".bias", Tensor({out}));
  c.options = {stride, kernel / 2};
  return c;
}

Conv make_pointwise(ParameterSet& params, const std::string& name, int in, int out, Rng& rng,
                    bool zero) {
  Conv c;
  c.weight = params.add(name + ".weight",
                        zero ? Tensor({out, in, 1, 1}) : scaled_normal({out, in, 1, 1}, 1.0 / std::sqrt(in), rng));
  c.options = {1, 0};
  return c;
}

Linear make_linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng,
                   bool with_bias, double init_std) {
  Linear l;
  const double std = init_std >= 0.0 ? init_std : std::sqrt(2.0 / in);
  l.weight = params.add(name + ".weight", scaled_normal({out, in}, std, rng));
  if (with_bias) l.bias = params.add(name + ".bias", Tensor({out}));
  return l;
}

AttentionOutput spatial_attention(const ag::Var& query, const ag::Var& key, const ag::Var& value) {
  if (query.value().rank() != 3 || key.value().rank() != 3 || value.value().rank() != 3 ||
      query.dim(1) != key.dim(1) || key.dim(2) != value.dim(2)) {
    throw ArgumentError("spatial_attention: incompatible shapes " + shape_string(query.shape()) +
                        ", " + shape_string(key.shape()) + ", " + shape_string(value.shape()));
  }
  // scores[b, q, k] = sum_c query[b,c,q] key[b,c,k]
  ag::Var scores = ag::matmul(query, key, true, false);
  ag::Var weights = ag::softmax_lastdim(scores);
  // aggregated[b, c, q] = sum_k value[b,c,k] weights[b,q,k]
  ag::Var aggregated = ag::matmul(value, weights, false, true);
  return {aggregated, weights};
}

}  // namespace agpi::nn
