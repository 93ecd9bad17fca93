// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bater/tensor.hpp"

namespace bater {

struct LogisticConfig {
  double l2 = 1e-3;
  double tolerance = 1e-6;
  int max_iterations = 200000;
};

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> feature_mean;
  // Always positive; dropped features keep std 1 and weight 0.
  std::vector<double> feature_std;
  std::vector<std::uint8_t> active;
  std::vector<std::string> warnings;
  int iterations = 0;
  double grad_norm = 0.0;

  std::size_t feature_count() const noexcept { return weights.size(); }
  /// Probability of class 1 for each row of raw features.
  std::vector<double> predict(const Tensor& features) const;
  double predict_row(std::span<const double> raw) const;
};

/// Mean log loss plus (l2/2)|w|^2 on already standardized features; gradient in
/// `grad` as (dw..., db).
double logistic_objective(const Tensor& standardized, std::span<const int> labels, std::span<const double> weights,
                          double bias, double l2, std::vector<double>& grad);

/// Labels are 0/1 and both must appear.
LogisticModel fit_logistic(const Tensor& features, std::span<const int> labels, const LogisticConfig& config = {});

}  // namespace bater
