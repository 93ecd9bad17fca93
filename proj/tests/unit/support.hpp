// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent oracles and fixtures shared by the unit and acceptance suites.
// None of these reuse the library routine they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "bater/bnn.hpp"
#include "bater/graph.hpp"
#include "bater/rng.hpp"
#include "bater/tensor.hpp"

namespace bater::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Largest relative error between `analytic` and central differences of `f` at `x`.
inline double finite_difference_error(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                      const Tensor& analytic, double h = 1e-5) {
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error((up - down) / (2.0 * h), analytic[i]));
  }
  return worst;
}

/// Naive triple loop.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c(Shape{a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

/// Optimal transport between two equal-weight empirical measures, solved as a
/// min-cost flow on the complete bipartite graph. Each point of `a` supplies
/// |b| units and each point of `b` absorbs |a| units, so all flows are integral.
inline double transport_lp(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size(), m = b.size();
  const std::size_t source = n + m, sink = n + m + 1, nodes = n + m + 2;
  struct Edge {
    std::size_t to;
    long long cap;
    double cost;
  };
  std::vector<Edge> edges;
  std::vector<std::vector<std::size_t>> out(nodes);
  auto add = [&](std::size_t u, std::size_t v, long long cap, double cost) {
    out[u].push_back(edges.size());
    edges.push_back({v, cap, cost});
    out[v].push_back(edges.size());
    edges.push_back({u, 0, -cost});
  };
  for (std::size_t i = 0; i < n; ++i) add(source, i, static_cast<long long>(m), 0.0);
  for (std::size_t j = 0; j < m; ++j) add(n + j, sink, static_cast<long long>(n), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) add(i, n + j, static_cast<long long>(n * m), std::abs(a[i] - b[j]));
  double total = 0.0;
  const double inf = std::numeric_limits<double>::infinity();
  for (;;) {
    std::vector<double> dist(nodes, inf);
    std::vector<std::size_t> via(nodes, SIZE_MAX);
    dist[source] = 0.0;
    for (std::size_t round = 0; round + 1 < nodes; ++round) {
      bool changed = false;
      for (std::size_t u = 0; u < nodes; ++u) {
        if (dist[u] == inf) continue;
        for (std::size_t e : out[u])
          if (edges[e].cap > 0 && dist[u] + edges[e].cost < dist[edges[e].to] - 1e-12) {
            dist[edges[e].to] = dist[u] + edges[e].cost;
            via[edges[e].to] = e;
            changed = true;
          }
      }
      if (!changed) break;
    }
    if (dist[sink] == inf) break;
    long long push = std::numeric_limits<long long>::max();
    for (std::size_t v = sink; v != source; v = edges[via[v] ^ 1].to) push = std::min(push, edges[via[v]].cap);
    for (std::size_t v = sink; v != source; v = edges[via[v] ^ 1].to) {
      edges[via[v]].cap -= push;
      edges[via[v] ^ 1].cap += push;
    }
    total += static_cast<double>(push) * dist[sink];
  }
  return total / static_cast<double>(n * m);
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues
/// in descending order with eigenvectors as the matching columns of `vectors`.
inline void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& values,
                         std::vector<std::vector<double>>& vectors) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
  values.assign(n, 0.0);
  vectors.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    values[j] = a[order[j]][order[j]];
    for (std::size_t i = 0; i < n; ++i) vectors[i][j] = v[i][order[j]];
  }
}

/// P(score_pos > score_neg) + 0.5 P(equal) by counting every pair.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j)
      if (labels[i] == 1 && labels[j] == 0) {
        pairs += 1.0;
        if (scores[i] > scores[j]) wins += 1.0;
        else if (scores[i] == scores[j]) wins += 0.5;
      }
  return wins / pairs;
}

/// Best TPR over every threshold (including +inf) whose FPR stays at or below the target.
inline double enumerate_tpr_at_fpr(const std::vector<double>& scores, const std::vector<int>& labels, double target) {
  std::vector<double> thresholds = scores;
  thresholds.push_back(std::numeric_limits<double>::infinity());
  double pos = 0.0, neg = 0.0;
  for (int l : labels) (l == 1 ? pos : neg) += 1.0;
  double best = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) (labels[i] == 1 ? tp : fp) += 1.0;
    if (fp / neg <= target) best = std::max(best, tp / pos);
  }
  return best;
}

// Monte-Carlo KL(q || p) = E_q[log q(w) - log p(w)] for one coordinate, with its standard error.
inline std::pair<double, double> mc_kl(double mu, double s, double prior_std, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::exp(s);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = normal(rng);
    const double w = mu + sd * e;
    const double log_q = -0.5 * e * e - s - 0.5 * std::log(2 * std::numbers::pi);
    const double log_p = -0.5 * (w / prior_std) * (w / prior_std) - std::log(prior_std) - 0.5 * std::log(2 * std::numbers::pi);
    const double v = log_q - log_p;
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  return {mean, std::sqrt((sq / n - mean * mean) / n)};
}

/// Small variational MLP with the given widths and log-std.
inline BnnModel small_model(std::vector<std::size_t> widths, double log_std, std::uint64_t seed,
                            LayerKind kind = LayerKind::variational) {
  ModelSpec spec;
  spec.input_dim = widths.front();
  spec.class_count = static_cast<int>(widths.back());
  spec.hidden.assign(widths.begin() + 1, widths.end() - 1);
  spec.kind = kind;
  spec.init_log_std = log_std;
  Rng rng(seed);
  return BnnModel::initialize(spec, rng);
}

/// Copy of `model` with every log-std set to `log_std`.
inline BnnModel with_log_std(const BnnModel& model, double log_std) {
  std::vector<DenseLayer> layers = model.layers();
  for (auto& l : layers) {
    for (double& v : l.weight.log_std.data()) v = log_std;
    for (double& v : l.bias.log_std.data()) v = log_std;
  }
  return BnnModel(layers, model.class_count(), model.prior_std());
}

}  // namespace bater::testing
