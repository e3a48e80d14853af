#include "agpi/optim.hpp"

#include <cmath>

#include "agpi/error.hpp"

namespace agpi::optim {

void Sgd::step() {
  for (const auto& p : params_->entries()) {
    if (!p.var.has_grad()) continue;
    ag::Var w = p.var;
    Tensor& value = w.mutable_value();
    const Tensor& g = w.node()->grad;
    auto [it, fresh] = velocity_.try_emplace(p.name, value.shape());
    Tensor& v = it->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double d = g[i] + options_.weight_decay * value[i];
      v[i] = options_.momentum * v[i] + d;
      value[i] -= options_.lr * v[i];
    }
  }
}

std::map<std::string, Tensor> Sgd::state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [k, v] : velocity_) out.emplace("velocity." + k, v);
  return out;
}

void Sgd::load_state(const std::map<std::string, Tensor>& state) {
  velocity_.clear();
  for (const auto& [k, v] : state) {
    if (k.rfind("velocity.", 0) != 0) throw CheckpointError("unexpected SGD state key " + k);
    velocity_.emplace(k.substr(9), v);
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (const auto& p : params_->entries()) {
    if (!p.var.has_grad()) continue;
    ag::Var w = p.var;
    Tensor& value = w.mutable_value();
    const Tensor& g = w.node()->grad;
    Tensor& m = first_.try_emplace(p.name, value.shape()).first->second;
    Tensor& v = second_.try_emplace(p.name, value.shape()).first->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      value[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

std::map<std::string, Tensor> Adam::state() const {
  std::map<std::string, Tensor> out;
  out.emplace("steps", Tensor::scalar(static_cast<double>(steps_)));
  for (const auto& [k, v] : first_) out.emplace("m." + k, v);
  for (const auto& [k, v] : second_) out.emplace("v." + k, v);
  return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& state) {
  first_.clear();
  second_.clear();
  steps_ = 0;
  for (const auto& [k, v] : state) {
    if (k == "steps") {
      steps_ = static_cast<long>(v.item());
    } else if (k.rfind("m.", 0) == 0) {
      first_.emplace(k.substr(2), v);
    } else if (k.rfind("v.", 0) == 0) {
      second_.emplace(k.substr(2), v);
    } else {
      throw CheckpointError("unexpected Adam state key " + k);
    }
  }
}

}  // namespace agpi::optim
