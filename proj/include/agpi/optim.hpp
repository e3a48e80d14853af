#pragma once

#include <map>
#include <string>

#include "agpi/nn.hpp"

namespace agpi::optim {

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// Heavy-ball SGD: v = mu * v + (g + wd * w); w -= lr * v.
class Sgd {
 public:
  Sgd(nn::ParameterSet& params, SgdOptions options) : params_(&params), options_(options) {}
  void step();
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state);
  const SgdOptions& options() const { return options_; }

 private:
  nn::ParameterSet* params_;
  SgdOptions options_;
  std::map<std::string, Tensor> velocity_;
};

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(nn::ParameterSet& params, AdamOptions options) : params_(&params), options_(options) {}
  void step();
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state);
  long steps() const { return steps_; }

 private:
  nn::ParameterSet* params_;
  AdamOptions options_;
  long steps_ = 0;
  std::map<std::string, Tensor> first_;
  std::map<std::string, Tensor> second_;
};

}  // namespace agpi::optim
