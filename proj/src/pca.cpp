// SPDX-License-Identifier: Apache-2.0
#include "bater/pca.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "bater/errors.hpp"
#include "bater/kernels.hpp"

namespace bater {

PcaProjection fit_pca(const Tensor& activations, std::size_t k, std::size_t layer_index) {
  if (activations.rank() != 2) throw DimensionError("fit_pca expects a matrix");
  const std::size_t n = activations.rows(), d = activations.cols();
  if (k < 1) throw ContractError("fit_pca needs k >= 1");
  if (k > d) throw ContractError("fit_pca: k=" + std::to_string(k) + " exceeds dimension " + std::to_string(d));
  if (n < k) throw ContractError("fit_pca: " + std::to_string(n) + " rows cannot support k=" + std::to_string(k));
  if (!activations.all_finite()) throw NumericError("fit_pca: non-finite activations");

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMajor> x(activations.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const RowMajor centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n > 1 ? n - 1 : 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("fit_pca: eigendecomposition failed");

  PcaProjection out;
  out.layer_index = layer_index;
  out.mean.assign(mean.data(), mean.data() + d);
  out.components = Tensor(Shape{d, k});
  // Eigen returns ascending eigenvalues.
  for (std::size_t c = 0; c < k; ++c) {
    const auto col = static_cast<Eigen::Index>(d - 1 - c);
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index pivot = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
      if (std::abs(v[i]) > std::abs(v[pivot])) pivot = i;
    if (v[pivot] < 0.0) v = -v;
    for (std::size_t r = 0; r < d; ++r) out.components.at(r, c) = v[static_cast<Eigen::Index>(r)];
    out.explained_variance.push_back(std::max(solver.eigenvalues()[col], 0.0));
  }
  return out;
}

Tensor PcaProjection::project(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.cols() != dim())
    throw DimensionError("projection expects [n," + std::to_string(dim()) + "], got " + shape_string(rows.shape()));
  Tensor centered = rows;
  const std::size_t d = dim();
  for (std::size_t r = 0; r < centered.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) centered[r * d + c] -= mean[c];
  Tensor out(Shape{rows.rows(), k()}, 0.0);
  kernels::gemm_nn(centered.raw(), components.raw(), out.raw(), rows.rows(), d, k(), false);
  return out;
}

}  // namespace bater
