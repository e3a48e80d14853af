#pragma once

// Slow, obviously-correct reference computations shared by the unit tests
// and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "agpi/evaluation.hpp"
#include "agpi/tensor.hpp"

namespace agpi::oracle {

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// One directed triplet term: every valid (p, n) pair is scored and the worst
// one kept per anchor.
inline double directed_triplet(const Tensor& a, const std::vector<int>& ya, const Tensor& p,
                               const std::vector<int>& yp, const Tensor& n, const std::vector<int>& yn,
                               double m2) {
  const int d = a.dim(1);
  const auto dist = [d](const Tensor& x, int i, const Tensor& y, int j) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) {
      const double t = x[static_cast<std::size_t>(i) * d + k] - y[static_cast<std::size_t>(j) * d + k];
      s += t * t;
    }
    return std::sqrt(s);
  };
  double total = 0.0;
  for (int i = 0; i < a.dim(0); ++i) {
    double worst = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < p.dim(0); ++j) {
      if (yp[static_cast<std::size_t>(j)] != ya[static_cast<std::size_t>(i)]) continue;
      for (int k = 0; k < n.dim(0); ++k) {
        if (yn[static_cast<std::size_t>(k)] == ya[static_cast<std::size_t>(i)]) continue;
        worst = std::max(worst, softplus(m2 + dist(a, i, p, j) - dist(a, i, n, k)));
      }
    }
    total += worst;
  }
  return total / a.dim(0);
}

struct Retrieval {
  std::vector<double> cmc;  // ranks 1..|G|
  double map = 0.0;
};

// Ranking by (distance, index) and precision at each hit.
inline Retrieval retrieval(const eval::DistanceMatrix& dm, const std::vector<int>& q, const std::vector<int>& g) {
  Retrieval o;
  o.cmc.assign(static_cast<std::size_t>(dm.cols), 0.0);
  for (int i = 0; i < dm.rows; ++i) {
    std::vector<std::pair<double, int>> order;
    for (int j = 0; j < dm.cols; ++j) order.emplace_back(dm.at(i, j), j);
    std::sort(order.begin(), order.end());
    int hits = 0;
    double ap = 0.0;
    int first = -1;
    for (int r = 0; r < dm.cols; ++r) {
      if (g[static_cast<std::size_t>(order[static_cast<std::size_t>(r)].second)] != q[static_cast<std::size_t>(i)]) {
        continue;
      }
      ++hits;
      ap += static_cast<double>(hits) / (r + 1);
      if (first < 0) first = r;
    }
    o.map += ap / hits;
    for (int r = first; r < dm.cols; ++r) o.cmc[static_cast<std::size_t>(r)] += 1.0 / dm.rows;
  }
  o.map /= dm.rows;
  return o;
}

// Unbiased squared MMD as plain loops over all kernel pairs. Equal-size sets
// leave out the paired cross terms.
inline double mmd(const Tensor& a, const Tensor& b, double sigma) {
  const int m = a.dim(0), n = b.dim(0), d = a.dim(1);
  const auto k = [&](const Tensor& x, int i, const Tensor& y, int j) {
    double s = 0;
    for (int t = 0; t < d; ++t) {
      const double diff = x[static_cast<std::size_t>(i * d + t)] - y[static_cast<std::size_t>(j * d + t)];
      s += diff * diff;
    }
    return std::exp(-s / (2 * sigma * sigma));
  };
  if (m == n) {
    double h = 0;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        if (i != j) h += k(a, i, a, j) + k(b, i, b, j) - k(a, i, b, j) - k(a, j, b, i);
      }
    }
    return h / (m * (m - 1.0));
  }
  double aa = 0, bb = 0, ab = 0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i != j) aa += k(a, i, a, j);
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) bb += k(b, i, b, j);
    }
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) ab += k(a, i, b, j);
  }
  return aa / (m * (m - 1.0)) + bb / (n * (n - 1.0)) - 2 * ab / (static_cast<double>(m) * n);
}

}  // namespace agpi::oracle
