// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

namespace bater {

/// Equal-weight multiset of reals, kept sorted.
class EmpiricalSample {
 public:
  EmpiricalSample() = default;
  /// Throws ContractError when empty or non-finite.
  explicit EmpiricalSample(std::vector<double> values, std::string source = {});

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  const std::string& source() const noexcept { return source_; }

 private:
  std::vector<double> values_;
  std::string source_;
};

/// Exact W1 as the integral of |F_a - F_b| over the merged support.
double wasserstein1(const EmpiricalSample& a, const EmpiricalSample& b);
double wasserstein1(std::span<const double> a, std::span<const double> b);

}  // namespace bater
