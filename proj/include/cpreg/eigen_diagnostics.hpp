#pragma once

// Near-collinearity diagnostics of the rank-1 terms. When the magnitude of the
// CP parameters blows up, the normalized Kronecker columns and the factor
// matrices both approach rank deficiency; these are the quantities watched.

#include <Eigen/Eigenvalues>

#include <limits>
#include <vector>

#include "cpreg/tensor.hpp"

namespace cpreg {

struct EigenDiagnostics {
  /// lambda_min(D^T D), D holding the unit-norm Kronecker columns of the nonzero terms.
  double lambda_min_D = std::numeric_limits<double>::quiet_NaN();
  /// lambda_min(B_d^T B_d) / prod_r ||beta_{d,r}||^2 per mode; NaN when some column is zero.
  std::vector<double> per_mode;
  double magnitude = 0.0;
  /// Number of rank-1 terms left out of D because one of their columns is zero.
  std::size_t dropped_terms = 0;
};

inline double min_eigenvalue(const MatrixXd& symmetric)
{
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Unit-norm Kronecker columns of every nonzero rank-1 term, in term order.
inline MatrixXd normalized_kronecker_columns(const CpFactors& factors, std::size_t* dropped = nullptr)
{
  const std::size_t order = factors.order();
  std::vector<VectorXd> columns;
  std::size_t skipped = 0;
  for (Eigen::Index r = 0; r < factors.rank(); ++r) {
    std::vector<VectorXd> parts;
    bool zero = false;
    for (std::size_t d = 0; d < order; ++d) {
      const double n = factors.factor(d).col(r).norm();
      if (n == 0.0) {
        zero = true;
        break;
      }
      parts.emplace_back(factors.factor(d).col(r) / n);
    }
    if (zero) {
      ++skipped;
      continue;
    }
    columns.push_back(kron(std::span<const VectorXd>(parts.data(), parts.size())));
  }
  if (dropped) *dropped = skipped;
  MatrixXd out(static_cast<Eigen::Index>(shape_size(factors.shape())),
               static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = columns[c];
  return out;
}

/// Throws when every rank-1 term is zero (D would have no columns).
inline EigenDiagnostics eigen_diagnostics(const CpFactors& factors)
{
  EigenDiagnostics out;
  out.magnitude = magnitude(factors);

  const MatrixXd dcols = normalized_kronecker_columns(factors, &out.dropped_terms);
  detail::require(dcols.cols() > 0, "eigen_diagnostics: all rank-1 terms are zero");
  const MatrixXd gram = dcols.transpose() * dcols;
  out.lambda_min_D = std::max(0.0, min_eigenvalue(gram));

  for (const auto& b : factors.factors()) {
    double denom = 1.0;
    for (Eigen::Index r = 0; r < b.cols(); ++r) denom *= b.col(r).squaredNorm();
    if (denom == 0.0) {
      out.per_mode.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const MatrixXd g = b.transpose() * b;
    out.per_mode.push_back(std::max(0.0, min_eigenvalue(g)) / denom);
  }
  return out;
}

}  // namespace cpreg
