#pragma once

// Minimal reverse-mode automatic differentiation over Tensor.
//
// A Var is a shared handle to a graph node. Ops record their inputs and a
// backward closure only when gradient recording is enabled and at least one
// input requires a gradient; otherwise they produce plain constant nodes.
// Parameters are leaf Vars with requires_grad set; freezing a module means
// clearing that flag, which prunes the module from every graph built after.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "agpi/tensor.hpp"

namespace agpi::ag {

struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros shaped like value when no gradient has arrived.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  // New constant leaf holding a copy of this value; no gradient path.
  Var detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Var make_result(Tensor value, std::vector<Var> inputs,
                         std::function<void(Node&)> backward);
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

// Disables graph recording in the current scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. `backward` is dropped when nothing upstream needs it.
Var make_result(Tensor value, std::vector<Var> inputs,
                std::function<void(Node&)> backward);

// Adds g into node.grad, allocating on first use. No-op when the node does
// not require a gradient.
void accumulate(Node& node, const Tensor& g);
Tensor& grad_buffer(Node& node);

// Back-propagates from a scalar root (seed 1) or with an explicit seed.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

// ---- elementwise ----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var abs(const Var& a);

// ---- reductions -----------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
// Weighted sum of scalars: sum_i w_i * x_i.
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);

// ---- shape ----------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
Var gather_rows(const Var& a, std::span<const int> rows);
Var concat_rows(std::span<const Var> parts);

// ---- linear algebra -------------------------------------------------------
// [m,k] x [k,n] (with optional transposes) or batched [B,m,k] x [B,k,n].
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
// x [B,in], weight [out,in], optional bias [out].
Var linear(const Var& x, const Var& weight, const Var& bias = Var());

// ---- convolutional --------------------------------------------------------
struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};
// x [B,Ci,H,W], weight [Co,Ci,kh,kw], optional bias [Co].
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opts);
Var upsample_nearest2x(const Var& x);
// Nearest-neighbour resampling of [B,C,h,w] to [B,C,out_h,out_w].
Var resample_nearest(const Var& x, int out_h, int out_w);
// [B,C,H,W] -> [B,C]
Var global_avg_pool(const Var& x);

// ---- normalization / probability -----------------------------------------
// Per-sample normalization over channel groups of [B,C,H,W], then a
// per-channel affine map with gamma, beta [C].
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
// Feature-wise normalization of [B,D] rows scaled by gamma [D], no shift.
// With `mean` and `var` given, those fixed statistics are used; otherwise
// batch statistics are (biased variance) and, when the out pointers are
// set, reported there.
Var batch_norm(const Var& x, const Var& gamma, const Tensor* mean, const Tensor* var, double eps = 1e-5,
               Tensor* batch_mean = nullptr, Tensor* batch_var = nullptr);
// Softmax over the last dimension.
Var softmax_lastdim(const Var& x);
// Mean over rows of -log softmax(logits)[label]. logits [B,K].
Var cross_entropy(const Var& logits, std::span<const int> labels);
// Euclidean norm of every row of [B,D] -> [B]. Subgradient 0 at the origin.
Var row_norms(const Var& x);
// Rows scaled to unit length; all-zero rows stay zero.
Var l2_normalize_rows(const Var& x);

}  // namespace agpi::ag
