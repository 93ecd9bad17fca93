// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bater/bnn.hpp"

namespace bater {

enum class ModelFamily { linear, one_hidden };
enum class WeightLaw { gaussian, uniform, laplace, exponential };

/// Exponential is the one asymmetric law; requesting it is a contract error.
bool symmetric(WeightLaw law) noexcept;
ModelFamily parse_family(std::string_view name);
WeightLaw parse_law(std::string_view name);

struct FamilySpec {
  ModelFamily family = ModelFamily::linear;
  WeightLaw law = WeightLaw::gaussian;
  std::size_t dim = 8;
  std::size_t hidden = 8;
  // Standard deviation of every weight around its centre w0.
  double weight_std = 0.3;
  // |delta| as a fraction of |x|.
  double delta_fraction = 0.01;
  std::size_t bootstrap = 50;
};

struct PropositionTrial {
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;
  double tolerance = 0.0;
  double delta_norm = 0.0;
  bool hold = false;
};

struct PropositionReport {
  std::vector<PropositionTrial> trials;
  double hold_rate = 0.0;
  double median_margin = 0.0;
  double min_margin = 0.0;
};

/// Per trial: random x, centre w0 and delta; lhs = W1 between mc_samples outputs at x+delta and at x
/// under independent weight draws; rhs = |f(x+delta, w0) - f(x, w0)|; hold when lhs >= rhs - 3 bootstrap SE.
PropositionReport verify_proposition(const FamilySpec& family, std::size_t trials, std::size_t mc_samples,
                                     std::uint64_t seed);

/// lhs,rhs,margin,hold
std::string proposition_csv(const PropositionReport& report);
std::string proposition_summary(const PropositionReport& report);

/// result[i][r]: std across neurons of tap taps[i] for row r, averaged over `passes` draws.
std::vector<std::vector<double>> activation_std_profile(const BnnModel& model, const Tensor& inputs,
                                                        std::span<const std::size_t> taps, int passes,
                                                        std::uint64_t seed);

double median(std::vector<double> values);

}  // namespace bater
