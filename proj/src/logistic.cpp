// SPDX-License-Identifier: Apache-2.0
#include "bater/logistic.hpp"

#include <algorithm>
#include <cmath>

#include "bater/errors.hpp"

namespace bater {
namespace {

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow.
double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

}  // namespace

double logistic_objective(const Tensor& z, std::span<const int> labels, std::span<const double> weights,
                          double bias, double l2, std::vector<double>& grad) {
  const std::size_t n = z.rows(), f = weights.size();
  grad.assign(f + 1, 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double t = bias;
    for (std::size_t c = 0; c < f; ++c) t += weights[c] * z[r * f + c];
    loss += softplus(t) - (labels[r] ? t : 0.0);
    const double residual = sigmoid(t) - labels[r];
    for (std::size_t c = 0; c < f; ++c) grad[c] += residual * z[r * f + c];
    grad[f] += residual;
  }
  const double inv = 1.0 / static_cast<double>(n);
  loss *= inv;
  for (double& g : grad) g *= inv;
  for (std::size_t c = 0; c < f; ++c) {
    loss += 0.5 * l2 * weights[c] * weights[c];
    grad[c] += l2 * weights[c];
  }
  return loss;
}

LogisticModel fit_logistic(const Tensor& features, std::span<const int> labels, const LogisticConfig& config) {
  if (features.rank() != 2) throw DimensionError("fit_logistic expects a feature matrix");
  const std::size_t n = features.rows(), f = features.cols();
  if (labels.size() != n) throw DimensionError("fit_logistic: label count does not match rows");
  std::size_t positives = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractError("fit_logistic labels must be 0 or 1");
    positives += static_cast<std::size_t>(y);
  }
  if (positives == 0 || positives == n) throw ContractError("fit_logistic needs both classes present");
  if (!features.all_finite()) throw NumericError("fit_logistic: non-finite features");

  LogisticModel model;
  model.feature_mean.assign(f, 0.0);
  model.feature_std.assign(f, 1.0);
  model.active.assign(f, 1);
  model.weights.assign(f, 0.0);
  for (std::size_t c = 0; c < f; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += features[r * f + c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (features[r * f + c] - mean) * (features[r * f + c] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    model.feature_mean[c] = mean;
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      model.active[c] = 0;
      model.warnings.push_back("feature " + std::to_string(c) + " has zero variance and was dropped");
    } else {
      model.feature_std[c] = sd;
    }
  }

  Tensor z(Shape{n, f}, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c)
      if (model.active[c]) z[r * f + c] = (features[r * f + c] - model.feature_mean[c]) / model.feature_std[c];

  // Standardized columns bound the Hessian by (f+1)/4 + l2.
  const double step = 1.0 / (0.25 * static_cast<double>(f + 1) + config.l2);
  std::vector<double> grad;
  for (int it = 0; it < config.max_iterations; ++it) {
    logistic_objective(z, labels, model.weights, model.bias, config.l2, grad);
    double norm = 0.0;
    for (double g : grad) norm += g * g;
    model.grad_norm = std::sqrt(norm);
    model.iterations = it;
    if (model.grad_norm < config.tolerance) break;
    for (std::size_t c = 0; c < f; ++c) model.weights[c] -= step * grad[c];
    model.bias -= step * grad[f];
  }
  return model;
}

double LogisticModel::predict_row(std::span<const double> raw) const {
  if (raw.size() != weights.size()) throw DimensionError("logistic model expects " +
                                                         std::to_string(weights.size()) + " features");
  double t = bias;
  for (std::size_t c = 0; c < weights.size(); ++c)
    if (active[c]) t += weights[c] * (raw[c] - feature_mean[c]) / feature_std[c];
  return sigmoid(t);
}

std::vector<double> LogisticModel::predict(const Tensor& features) const {
  std::vector<double> out(features.rows());
  for (std::size_t r = 0; r < features.rows(); ++r) out[r] = predict_row(features.row(r));
  return out;
}

}  // namespace bater
