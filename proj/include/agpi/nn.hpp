#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "agpi/autograd.hpp"
#include "agpi/rng.hpp"
#include "agpi/tensor.hpp"

namespace agpi::nn {

struct NamedParameter {
  std::string name;
  ag::Var var;
};

// Ordered collection of trainable leaves. Names are globally unique within a
// model ("embedding.trunk.stage1.weight") and become checkpoint keys.
class ParameterSet {
 public:
  explicit ParameterSet(std::string prefix) : prefix_(std::move(prefix)) {}

  ag::Var add(const std::string& name, Tensor init);
  const ag::Var& at(const std::string& name) const;
  std::span<const NamedParameter> entries() const { return entries_; }
  const std::string& prefix() const { return prefix_; }

  void set_trainable(bool on);
  void zero_grad();
  std::size_t scalar_count() const;

  std::map<std::string, Tensor> snapshot() const;
  // Every parameter must be present with a matching shape.
  void restore(const std::map<std::string, Tensor>& values);

 private:
  std::string prefix_;
  std::vector<NamedParameter> entries_;
};

Tensor he_normal(Shape shape, int fan_in, Rng& rng);
Tensor scaled_normal(Shape shape, double stddev, Rng& rng);

struct Conv {
  ag::Var weight;
  ag::Var bias;  // may be undefined
  ag::Conv2dOptions options;
  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, options); }
};

struct GroupNorm {
  ag::Var gamma;
  ag::Var beta;
  int groups = 1;
  ag::Var operator()(const ag::Var& x) const { return ag::group_norm(x, gamma, beta, groups); }
};

// gamma = 1, beta = 0.
GroupNorm make_group_norm(ParameterSet& params, const std::string& name, int channels, int groups);

Conv make_conv(ParameterSet& params, const std::string& name, int in, int out, int kernel,
               int stride, Rng& rng, bool with_bias = true);
// 1x1 convolution without bias; zero-initialized when `zero` is set.
Conv make_pointwise(ParameterSet& params, const std::string& name, int in, int out, Rng& rng,
                    bool zero = false);

struct Linear {
  ag::Var weight;
  ag::Var bias;
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
};

Linear make_linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng,
                   bool with_bias = true, double init_std = -1.0);

// Dot-product attention over spatial positions.
//   query [B,Cq,Pq], key [B,Cq,Pk], value [B,Cv,Pk]
//   -> aggregated [B,Cv,Pq] with weights softmax_k(<q,k>) [B,Pq,Pk].
struct AttentionOutput {
  ag::Var aggregated;
  ag::Var weights;
};
AttentionOutput spatial_attention(const ag::Var& query, const ag::Var& key, const ag::Var& value);

}  // namespace agpi::nn
