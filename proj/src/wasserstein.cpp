// SPDX-License-Identifier: Apache-2.0
#include "bater/wasserstein.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "bater/errors.hpp"

namespace bater {
namespace {

// Both inputs sorted. Counts stay integral so the CDF gap is exact until the final divide.
double sorted_w1(std::span<const double> a, std::span<const double> b) {
  const auto na = static_cast<long long>(a.size());
  const auto nb = static_cast<long long>(b.size());
  std::size_t i = 0, j = 0;
  double total = 0.0;
  double previous = std::min(a.front(), b.front());
  while (i < a.size() || j < b.size()) {
    const double next = j == b.size() || (i < a.size() && a[i] <= b[j]) ? a[i] : b[j];
    const long long gap = static_cast<long long>(i) * nb - static_cast<long long>(j) * na;
    total += static_cast<double>(std::llabs(gap)) * (next - previous);
    while (i < a.size() && a[i] == next) ++i;
    while (j < b.size() && b[j] == next) ++j;
    previous = next;
  }
  return total / (static_cast<double>(na) * static_cast<double>(nb));
}

}  // namespace

EmpiricalSample::EmpiricalSample(std::vector<double> values, std::string source)
    : values_(std::move(values)), source_(std::move(source)) {
  if (values_.empty()) throw ContractError("empirical sample must be nonempty");
  for (double v : values_)
    if (!std::isfinite(v)) throw ContractError("empirical sample holds a non-finite value");
  std::sort(values_.begin(), values_.end());
}

double wasserstein1(const EmpiricalSample& a, const EmpiricalSample& b) {
  if (a.empty() || b.empty()) throw ContractError("wasserstein1 needs nonempty samples");
  return sorted_w1(a.values(), b.values());
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  return wasserstein1(EmpiricalSample({a.begin(), a.end()}), EmpiricalSample({b.begin(), b.end()}));
}

}  // namespace bater
