// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "bater/tensor.hpp"

namespace bater {

struct PcaProjection {
  std::size_t layer_index = 0;
  std::vector<double> mean;
  // [dim, k], orthonormal columns, largest-|entry| of each column positive.
  Tensor components;
  std::vector<double> explained_variance;

  std::size_t k() const noexcept { return components.rank() == 2 ? components.cols() : 0; }
  std::size_t dim() const noexcept { return mean.size(); }
  /// Centers and projects rows: [n, dim] -> [n, k].
  Tensor project(const Tensor& rows) const;
};

/// Top-k eigenvectors of the sample covariance of `activations` ([n, dim]).
PcaProjection fit_pca(const Tensor& activations, std::size_t k, std::size_t layer_index = 0);

}  // namespace bater
