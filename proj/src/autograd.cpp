#include "agpi/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "agpi/error.hpp"
#include "agpi/simd/kernels.hpp"

namespace agpi::ag {
namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                        " vs " + shape_string(b.shape()));
  }
}

// Rows = first dimension, cols = everything else.
std::size_t row_width(const Tensor& t) { return t.rank() == 0 ? 1 : t.size() / t.dim(0); }

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return make_result(std::move(y), {a}, [deriv](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape());
  return node_->grad;
}

Var Var::detach() const { return Var(node_->value, false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || (in.defined() && in.requires_grad());
    if (needs) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const Var& in : inputs) node->inputs.push_back(in.node_);
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

Tensor& grad_buffer(Node& node) {
  if (node.grad.empty()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void accumulate(Node& node, const Tensor& g) {
  if (!node.requires_grad) return;
  Tensor& buf = grad_buffer(node);
  simd::axpy(buf.size(), 1.0, g.data(), buf.data());
}

void backward(const Var& root) {
  if (root.size() != 1) {
    throw ArgumentError("backward() without a seed needs a scalar root, got " +
                        shape_string(root.shape()));
  }
  backward(root, Tensor(root.shape(), 1.0));
}

void backward(const Var& root, const Tensor& seed) {
  if (!root.requires_grad()) return;
  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child != nullptr && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  accumulate(*root.node(), seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  simd::axpy(y.size(), 1.0, b.value().data(), y.data());
  return make_result(std::move(y), {a, b}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate(*self.inputs[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  simd::axpy(y.size(), -1.0, b.value().data(), y.data());
  return make_result(std::move(y), {a, b}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    Node& rhs = *self.inputs[1];
    if (rhs.requires_grad) simd::axpy(self.grad.size(), -1.0, self.grad.data(), grad_buffer(rhs).data());
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(y), {a, b}, [](Node& self) {
    Node& lhs = *self.inputs[0];
    Node& rhs = *self.inputs[1];
    if (lhs.requires_grad) {
      Tensor& g = grad_buffer(lhs);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * rhs.value[i];
    }
    if (rhs.requires_grad) {
      Tensor& g = grad_buffer(rhs);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * lhs.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x <= 0.0 ? 0.0 : x; },  // NaN passes through
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary(
      a,
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---- reductions -----------------------------------------------------------

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return make_result(Tensor::scalar(s), {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    const double d = self.grad[0];
    for (double& x : g.values()) x += d;
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw ArgumentError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) throw ArgumentError("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) s += weights[i] * scalars[i].item();
  std::vector<double> w(weights.begin(), weights.end());
  return make_result(Tensor::scalar(s), std::vector<Var>(scalars.begin(), scalars.end()),
                     [w](Node& self) {
                       for (std::size_t i = 0; i < w.size(); ++i) {
                         Node& in = *self.inputs[i];
                         if (in.requires_grad) grad_buffer(in)[0] += w[i] * self.grad[0];
                       }
                     });
}

// ---- shape ----------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return make_result(std::move(y), {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    simd::axpy(g.size(), 1.0, self.grad.data(), g.data());
  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw ArgumentError("gather_rows on a scalar");
  const std::size_t w = row_width(x);
  Shape shape = x.shape();
  shape[0] = static_cast<int>(rows.size());
  Tensor y(shape);
  std::vector<int> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= x.dim(0)) throw ArgumentError("gather_rows: index out of range");
    std::copy_n(x.data() + idx[r] * w, w, y.data() + r * w);
  }
  return make_result(std::move(y), {a}, [idx, w](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      simd::axpy(w, 1.0, self.grad.data() + r * w, g.data() + idx[r] * w);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_rows of nothing");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw ArgumentError("concat_rows on scalars");
  int rows = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1)) {
      throw ArgumentError("concat_rows: trailing shape mismatch " + shape_string(s) + " vs " +
                          shape_string(shape));
    }
    rows += s[0];
  }
  shape[0] = rows;
  Tensor y(shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    std::copy_n(p.value().data(), p.size(), y.data() + off);
    off += p.size();
  }
  return make_result(std::move(y), std::vector<Var>(parts.begin(), parts.end()),
                     [offsets](Node& self) {
                       for (std::size_t i = 0; i < offsets.size(); ++i) {
                         Node& in = *self.inputs[i];
                         if (!in.requires_grad) continue;
                         Tensor& g = grad_buffer(in);
                         simd::axpy(g.size(), 1.0, self.grad.data() + offsets[i], g.data());
                       }
                     });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool batched = A.rank() == 3;
  if (A.rank() != B.rank() || (A.rank() != 2 && A.rank() != 3)) {
    throw ArgumentError("matmul: unsupported ranks " + shape_string(A.shape()) + " x " +
                        shape_string(B.shape()));
  }
  const int batch = batched ? A.dim(0) : 1;
  if (batched && B.dim(0) != batch) throw ArgumentError("matmul: batch size mismatch");
  const int ar = A.dim(-2), ac = A.dim(-1), br = B.dim(-2), bc = B.dim(-1);
  const int m = trans_a ? ac : ar;
  const int k = trans_a ? ar : ac;
  const int kb = trans_b ? bc : br;
  const int n = trans_b ? br : bc;
  if (k != kb) {
    throw ArgumentError("matmul: inner dimension mismatch " + shape_string(A.shape()) + " x " +
                        shape_string(B.shape()));
  }
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor C(out_shape);
  const std::size_t sa = static_cast<std::size_t>(ar) * ac;
  const std::size_t sb = static_cast<std::size_t>(br) * bc;
  const std::size_t sc = static_cast<std::size_t>(m) * n;
  for (int i = 0; i < batch; ++i) {
    simd::gemm(trans_a, trans_b, m, n, k, 1.0, A.data() + i * sa, ac, B.data() + i * sb, bc, 0.0,
               C.data() + i * sc, n);
  }
  return make_result(std::move(C), {a, b},
                     [=](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       const double* dC = self.grad.data();
                       for (int i = 0; i < batch; ++i) {
                         const double* Ai = na.value.data() + i * sa;
                         const double* Bi = nb.value.data() + i * sb;
                         const double* dCi = dC + i * sc;
                         if (na.requires_grad) {
                           double* dA = grad_buffer(na).data() + i * sa;
                           if (!trans_a) {
                             simd::gemm(false, !trans_b, m, k, n, 1.0, dCi, n, Bi, bc, 1.0, dA, ac);
                           } else {
                             simd::gemm(trans_b, true, k, m, n, 1.0, Bi, bc, dCi, n, 1.0, dA, ac);
                           }
                         }
                         if (nb.requires_grad) {
                           double* dB = grad_buffer(nb).data() + i * sb;
                           if (!trans_b) {
                             simd::gemm(!trans_a, false, k, n, m, 1.0, Ai, ac, dCi, n, 1.0, dB, bc);
                           } else {
                             simd::gemm(true, trans_a, n, k, m, 1.0, dCi, n, Ai, ac, 1.0, dB, bc);
                           }
                         }
                       }
                     });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.value().rank() != 2 || weight.value().rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ArgumentError("linear: expected x [B,in] and weight [out,in], got " +
                        shape_string(x.shape()) + " and " + shape_string(weight.shape()));
  }
  Var y = matmul(x, weight, false, true);
  if (!bias.defined()) return y;
  const int rows = y.dim(0), cols = y.dim(1);
  if (bias.size() != static_cast<std::size_t>(cols)) throw ArgumentError("linear: bias size mismatch");
  Tensor out = y.value();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out[r * cols + c] += bias.value()[c];
  }
  return make_result(std::move(out), {y, bias}, [rows, cols](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    Node& nb = *self.inputs[1];
    if (!nb.requires_grad) return;
    Tensor& g = grad_buffer(nb);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
    }
  });
}

// ---- convolutional --------------------------------------------------------

namespace {

struct ConvGeometry {
  int batch, in_c, in_h, in_w, out_c, kh, kw, stride, pad, out_h, out_w;
  int patch() const { return in_c * kh * kw; }
  int positions() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const ConvGeometry& g, const double* x, double* col) {
  const int P = g.positions();
  for (int c = 0; c < g.in_c; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        double* row = col + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * P;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * g.in_h + iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* dx) {
  const int P = g.positions();
  for (int c = 0; c < g.in_c; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const double* row = col + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) * P;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          double* dst = dx + (static_cast<std::size_t>(c) * g.in_h + iy) * g.in_w;
          const double* src = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opts) {
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  if (X.rank() != 4 || W.rank() != 4 || X.dim(1) != W.dim(1)) {
    throw ArgumentError("conv2d: expected x [B,C,H,W] and weight [O,C,kh,kw], got " +
                        shape_string(X.shape()) + " and " + shape_string(W.shape()));
  }
  if (opts.stride < 1 || opts.padding < 0) throw ArgumentError("conv2d: bad stride/padding");
  ConvGeometry g{};
  g.batch = X.dim(0);
  g.in_c = X.dim(1);
  g.in_h = X.dim(2);
  g.in_w = X.dim(3);
  g.out_c = W.dim(0);
  g.kh = W.dim(2);
  g.kw = W.dim(3);
  g.stride = opts.stride;
  g.pad = opts.padding;
  g.out_h = (g.in_h + 2 * g.pad - g.kh) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.kw) / g.stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw ArgumentError("conv2d: kernel larger than padded input");
  if (bias.defined() && bias.size() != static_cast<std::size_t>(g.out_c)) {
    throw ArgumentError("conv2d: bias size mismatch");
  }

  const int K = g.patch();
  const int P = g.positions();
  const std::size_t in_stride = static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_c) * P;
  const std::size_t col_stride = static_cast<std::size_t>(K) * P;

  Tensor Y({g.batch, g.out_c, g.out_h, g.out_w});
  const bool keep_cols =
      grad_enabled() && !g.pointwise() && (weight.requires_grad() || x.requires_grad());
  auto cols = std::make_shared<std::vector<double>>();
  std::vector<double> scratch;
  if (keep_cols) {
    cols->resize(col_stride * g.batch);
  } else if (!g.pointwise()) {
    scratch.resize(col_stride);
  }
  for (int b = 0; b < g.batch; ++b) {
    const double* col;
    if (g.pointwise()) {
      col = X.data() + b * in_stride;
    } else {
      double* dst = keep_cols ? cols->data() + b * col_stride : scratch.data();
      im2col(g, X.data() + b * in_stride, dst);
      col = dst;
    }
    double* yb = Y.data() + b * out_stride;
    simd::gemm(false, false, g.out_c, P, K, 1.0, W.data(), K, col, P, 0.0, yb, P);
    if (bias.defined()) {
      for (int o = 0; o < g.out_c; ++o) {
        const double bo = bias.value()[o];
        for (int p = 0; p < P; ++p) yb[o * P + p] += bo;
      }
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(Y), std::move(inputs), [=](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nw = *self.inputs[1];
    const double* dY = self.grad.data();
    std::vector<double> dcol(g.pointwise() ? 0 : col_stride);
    for (int b = 0; b < g.batch; ++b) {
      const double* dYb = dY + b * out_stride;
      if (nw.requires_grad) {
        const double* col =
            g.pointwise() ? nx.value.data() + b * in_stride : cols->data() + b * col_stride;
        simd::gemm(false, true, g.out_c, K, P, 1.0, dYb, P, col, P, 1.0, grad_buffer(nw).data(), K);
      }
      if (nx.requires_grad) {
        double* dxb = grad_buffer(nx).data() + b * in_stride;
        if (g.pointwise()) {
          simd::gemm(true, false, K, P, g.out_c, 1.0, nw.value.data(), K, dYb, P, 1.0, dxb, P);
        } else {
          simd::gemm(true, false, K, P, g.out_c, 1.0, nw.value.data(), K, dYb, P, 0.0, dcol.data(), P);
          col2im_add(g, dcol.data(), dxb);
        }
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor& gb = grad_buffer(*self.inputs[2]);
      for (int b = 0; b < g.batch; ++b) {
        for (int o = 0; o < g.out_c; ++o) {
          const double* row = dY + b * out_stride + o * P;
          double s = 0.0;
          for (int p = 0; p < P; ++p) s += row[p];
          gb[o] += s;
        }
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Tensor& X = x.value();
  if (X.rank() != 4) throw ArgumentError("upsample_nearest2x: expected [B,C,H,W]");
  const int planes = X.dim(0) * X.dim(1), h = X.dim(2), w = X.dim(3);
  Tensor Y({X.dim(0), X.dim(1), 2 * h, 2 * w});
  for (int p = 0; p < planes; ++p) {
    const double* src = X.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = Y.data() + static_cast<std::size_t>(p) * 4 * h * w;
    for (int i = 0; i < 2 * h; ++i) {
      for (int j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return make_result(std::move(Y), {x}, [planes, h, w](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    for (int p = 0; p < planes; ++p) {
      const double* src = self.grad.data() + static_cast<std::size_t>(p) * 4 * h * w;
      double* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < 2 * h; ++i) {
        for (int j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
      }
    }
  });
}

Var resample_nearest(const Var& x, int out_h, int out_w) {
  const Tensor& X = x.value();
  if (X.rank() != 4) throw ArgumentError("resample_nearest: expected [B,C,H,W]");
  if (out_h <= 0 || out_w <= 0) throw ArgumentError("resample_nearest: empty output");
  const int h = X.dim(2), w = X.dim(3);
  if (h == out_h && w == out_w) return x;
  std::vector<int> src_index(static_cast<std::size_t>(out_h) * out_w);
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      const int si = static_cast<int>(static_cast<long>(i) * h / out_h);
      const int sj = static_cast<int>(static_cast<long>(j) * w / out_w);
      src_index[static_cast<std::size_t>(i) * out_w + j] = si * w + sj;
    }
  }
  const int planes = X.dim(0) * X.dim(1);
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = src_index.size();
  Tensor Y({X.dim(0), X.dim(1), out_h, out_w});
  for (int p = 0; p < planes; ++p) {
    for (std::size_t q = 0; q < out_plane; ++q) {
      Y[p * out_plane + q] = X[p * in_plane + src_index[q]];
    }
  }
  return make_result(std::move(Y), {x}, [=](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    for (int p = 0; p < planes; ++p) {
      for (std::size_t q = 0; q < out_plane; ++q) {
        g[p * in_plane + src_index[q]] += self.grad[p * out_plane + q];
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& X = x.value();
  if (X.rank() != 4) throw ArgumentError("global_avg_pool: expected [B,C,H,W]");
  const int planes = X.dim(0) * X.dim(1);
  const int area = X.dim(2) * X.dim(3);
  Tensor Y({X.dim(0), X.dim(1)});
  for (int p = 0; p < planes; ++p) {
    double s = 0.0;
    for (int q = 0; q < area; ++q) s += X[static_cast<std::size_t>(p) * area + q];
    Y[p] = s / area;
  }
  return make_result(std::move(Y), {x}, [planes, area](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    for (int p = 0; p < planes; ++p) {
      const double d = self.grad[p] / area;
      for (int q = 0; q < area; ++q) g[static_cast<std::size_t>(p) * area + q] += d;
    }
  });
}

// ---- normalization / probability -----------------------------------------

Var batch_norm(const Var& x, const Var& gamma, const Tensor* mean, const Tensor* var, double eps,
               Tensor* batch_mean, Tensor* batch_var) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw ArgumentError("batch_norm: expected [B,D]");
  const int B = X.dim(0), D = X.dim(1);
  if (gamma.shape() != Shape{D}) throw ArgumentError("batch_norm: gamma must be [D]");
  if ((mean == nullptr) != (var == nullptr)) throw ArgumentError("batch_norm: give both statistics or neither");
  if (mean != nullptr && (mean->shape() != Shape{D} || var->shape() != Shape{D})) {
    throw ArgumentError("batch_norm: statistics must be [D]");
  }
  if (mean == nullptr && B < 2) throw ArgumentError("batch_norm: batch statistics need at least 2 rows");
  const bool fixed = mean != nullptr;
  Tensor mu({D}), sigma2({D});
  if (fixed) {
    mu = *mean;
    sigma2 = *var;
  } else {
    for (int b = 0; b < B; ++b) {
      for (int d = 0; d < D; ++d) mu[static_cast<std::size_t>(d)] += X[static_cast<std::size_t>(b) * D + d];
    }
    for (int d = 0; d < D; ++d) mu[static_cast<std::size_t>(d)] /= B;
    for (int b = 0; b < B; ++b) {
      for (int d = 0; d < D; ++d) {
        const double c = X[static_cast<std::size_t>(b) * D + d] - mu[static_cast<std::size_t>(d)];
        sigma2[static_cast<std::size_t>(d)] += c * c;
      }
    }
    for (int d = 0; d < D; ++d) sigma2[static_cast<std::size_t>(d)] /= B;
    if (batch_mean != nullptr) *batch_mean = mu;
    if (batch_var != nullptr) *batch_var = sigma2;
  }
  std::vector<double> inv_std(static_cast<std::size_t>(D));
  for (int d = 0; d < D; ++d) inv_std[static_cast<std::size_t>(d)] = 1.0 / std::sqrt(sigma2[static_cast<std::size_t>(d)] + eps);
  Tensor xhat(X.shape()), Y(X.shape());
  const Tensor& G = gamma.value();
  for (int b = 0; b < B; ++b) {
    for (int d = 0; d < D; ++d) {
      const std::size_t k = static_cast<std::size_t>(b) * D + d;
      xhat[k] = (X[k] - mu[static_cast<std::size_t>(d)]) * inv_std[static_cast<std::size_t>(d)];
      Y[k] = G[static_cast<std::size_t>(d)] * xhat[k];
    }
  }
  return make_result(std::move(Y), {x, gamma},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), B, D, fixed](Node& self) {
    Node& in = *self.inputs[0];
    Node& gn = *self.inputs[1];
    const Tensor& dy = self.grad;
    const Tensor& G = gn.value;
    if (gn.requires_grad) {
      Tensor& dg = grad_buffer(gn);
      for (int b = 0; b < B; ++b) {
        for (int d = 0; d < D; ++d) {
          const std::size_t k = static_cast<std::size_t>(b) * D + d;
          dg[static_cast<std::size_t>(d)] += dy[k] * xhat[k];
        }
      }
    }
    if (!in.requires_grad) return;
    Tensor& dx = grad_buffer(in);
    for (int d = 0; d < D; ++d) {
      const std::size_t dd = static_cast<std::size_t>(d);
      const double scale = G[dd] * inv_std[dd];
      if (fixed) {
        for (int b = 0; b < B; ++b) dx[static_cast<std::size_t>(b) * D + d] += scale * dy[static_cast<std::size_t>(b) * D + d];
        continue;
      }
      double mean_d = 0.0, mean_dx = 0.0;
      for (int b = 0; b < B; ++b) {
        const std::size_t k = static_cast<std::size_t>(b) * D + d;
        mean_d += dy[k];
        mean_dx += dy[k] * xhat[k];
      }
      mean_d /= B;
      mean_dx /= B;
      for (int b = 0; b < B; ++b) {
        const std::size_t k = static_cast<std::size_t>(b) * D + d;
        dx[k] += scale * (dy[k] - mean_d - xhat[k] * mean_dx);
      }
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  const Tensor& X = x.value();
  if (X.rank() != 4) throw ArgumentError("group_norm: expected [B,C,H,W]");
  const int B = X.dim(0), C = X.dim(1), area = X.dim(2) * X.dim(3);
  if (groups < 1 || C % groups != 0) throw ArgumentError("group_norm: channels not divisible by groups");
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ArgumentError("group_norm: gamma and beta must be [C]");
  }
  const int per = C / groups;
  const std::size_t group_size = static_cast<std::size_t>(per) * area;
  Tensor xhat(X.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(B) * groups);
  for (int b = 0; b < B; ++b) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(b) * C + static_cast<std::size_t>(g) * per) * area;
      double mean = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) mean += X[base + i];
      mean /= static_cast<double>(group_size);
      double var = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) var += (X[base + i] - mean) * (X[base + i] - mean);
      var /= static_cast<double>(group_size);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(b) * groups + g] = is;
      for (std::size_t i = 0; i < group_size; ++i) xhat[base + i] = (X[base + i] - mean) * is;
    }
  }
  Tensor Y(X.shape());
  const Tensor& G = gamma.value();
  const Tensor& Bt = beta.value();
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * C + c) * area;
      for (int q = 0; q < area; ++q) Y[base + q] = G[c] * xhat[base + q] + Bt[c];
    }
  }
  return make_result(std::move(Y), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, area, groups, per,
                      group_size](Node& self) {
    Node& in = *self.inputs[0];
    Node& gn = *self.inputs[1];
    Node& bn = *self.inputs[2];
    const Tensor& dy = self.grad;
    if (gn.requires_grad || bn.requires_grad) {
      for (int c = 0; c < C; ++c) {
        double dg = 0.0, db = 0.0;
        for (int b = 0; b < B; ++b) {
          const std::size_t base = (static_cast<std::size_t>(b) * C + c) * area;
          for (int q = 0; q < area; ++q) {
            dg += dy[base + q] * xhat[base + q];
            db += dy[base + q];
          }
        }
        if (gn.requires_grad) grad_buffer(gn)[static_cast<std::size_t>(c)] += dg;
        if (bn.requires_grad) grad_buffer(bn)[static_cast<std::size_t>(c)] += db;
      }
    }
    if (!in.requires_grad) return;
    Tensor& dx = grad_buffer(in);
    const Tensor& G = self.inputs[1]->value;
    std::vector<double> dxhat(group_size);
    for (int b = 0; b < B; ++b) {
      for (int g = 0; g < groups; ++g) {
        const std::size_t base = (static_cast<std::size_t>(b) * C + static_cast<std::size_t>(g) * per) * area;
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t i = 0; i < group_size; ++i) {
          const int c = g * per + static_cast<int>(i / static_cast<std::size_t>(area));
          dxhat[i] = dy[base + i] * G[static_cast<std::size_t>(c)];
          mean_d += dxhat[i];
          mean_dx += dxhat[i] * xhat[base + i];
        }
        mean_d /= static_cast<double>(group_size);
        mean_dx /= static_cast<double>(group_size);
        const double is = inv_std[static_cast<std::size_t>(b) * groups + g];
        for (std::size_t i = 0; i < group_size; ++i) {
          dx[base + i] += is * (dxhat[i] - mean_d - xhat[base + i] * mean_dx);
        }
      }
    }
  });
}


Var softmax_lastdim(const Var& x) {
  const Tensor& X = x.value();
  if (X.rank() == 0) throw ArgumentError("softmax of a scalar");
  const int n = X.dim(-1);
  const std::size_t rows = X.size() / n;
  Tensor Y(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = X.data() + r * n;
    double* dst = Y.data() + r * n;
    const double mx = *std::max_element(src, src + n);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      dst[j] = std::exp(src[j] - mx);
      s += dst[j];
    }
    for (int j = 0; j < n; ++j) dst[j] /= s;
  }
  return make_result(std::move(Y), {x}, [n, rows](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double dotp = 0.0;
      for (int j = 0; j < n; ++j) dotp += y[j] * dy[j];
      double* dx = g.data() + r * n;
      for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dotp);
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& L = logits.value();
  if (L.rank() != 2) throw ArgumentError("cross_entropy: expected logits [B,K]");
  const int rows = L.dim(0), k = L.dim(1);
  if (static_cast<std::size_t>(rows) != labels.size()) {
    throw ArgumentError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(rows) + " rows");
  }
  if (rows == 0) throw ArgumentError("cross_entropy: empty batch");
  auto probs = std::make_shared<std::vector<double>>(L.size());
  std::vector<int> y(labels.begin(), labels.end());
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    if (y[r] < 0 || y[r] >= k) throw ArgumentError("cross_entropy: label out of range");
    const double* src = L.data() + static_cast<std::size_t>(r) * k;
    double* pr = probs->data() + static_cast<std::size_t>(r) * k;
    const double mx = *std::max_element(src, src + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      pr[j] = std::exp(src[j] - mx);
      s += pr[j];
    }
    for (int j = 0; j < k; ++j) pr[j] /= s;
    total += (mx + std::log(s)) - src[y[r]];
  }
  return make_result(Tensor::scalar(total / rows), {logits}, [probs, y, rows, k](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    const double d = self.grad[0] / rows;
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < k; ++j) {
        const std::size_t i = static_cast<std::size_t>(r) * k + j;
        g[i] += d * ((*probs)[i] - (j == y[r] ? 1.0 : 0.0));
      }
    }
  });
}

Var row_norms(const Var& x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw ArgumentError("row_norms: expected [B,D]");
  const int rows = X.dim(0), d = X.dim(1);
  Tensor N({rows});
  for (int r = 0; r < rows; ++r) {
    const double* row = X.data() + static_cast<std::size_t>(r) * d;
    N[r] = std::sqrt(simd::dot(row, row, d));
  }
  return make_result(std::move(N), {x}, [rows, d](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    for (int r = 0; r < rows; ++r) {
      const double n = self.value[r];
      if (n == 0.0) continue;
      simd::axpy(d, self.grad[r] / n, in.value.data() + static_cast<std::size_t>(r) * d,
                 g.data() + static_cast<std::size_t>(r) * d);
    }
  });
}

Var l2_normalize_rows(const Var& x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw ArgumentError("l2_normalize_rows: expected [B,D]");
  const int rows = X.dim(0), d = X.dim(1);
  Tensor Y(X.shape());
  std::vector<double> norms(rows);
  for (int r = 0; r < rows; ++r) {
    const double* row = X.data() + static_cast<std::size_t>(r) * d;
    norms[r] = std::sqrt(simd::dot(row, row, d));
    if (norms[r] == 0.0) continue;
    for (int j = 0; j < d; ++j) Y[static_cast<std::size_t>(r) * d + j] = row[j] / norms[r];
  }
  return make_result(std::move(Y), {x}, [norms, rows, d](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = grad_buffer(in);
    for (int r = 0; r < rows; ++r) {
      if (norms[r] == 0.0) continue;
      const std::size_t off = static_cast<std::size_t>(r) * d;
      const double* y = self.value.data() + off;
      const double* dy = self.grad.data() + off;
      const double proj = simd::dot(y, dy, d);
      for (int j = 0; j < d; ++j) g[off + j] += (dy[j] - y[j] * proj) / norms[r];
    }
  });
}

}  // namespace agpi::ag
