#pragma once

// Dense tensors, CP factor matrices and the multilinear algebra on top of
// them. Every tensor is stored row-major (last index fastest); all Kronecker,
// Khatri-Rao and unfolding orders below follow from that one convention.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cpreg/error.hpp"

namespace cpreg {

using Shape = std::vector<std::size_t>;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline std::size_t shape_size(const Shape& dims)
{
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& dims)
{
  std::string s = "(";
  for (std::size_t d = 0; d < dims.size(); ++d) {
    if (d) s += ",";
    s += std::to_string(dims[d]);
  }
  return s + ")";
}

/// D-mode real array with row-major storage.
class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(Shape dims) : DenseTensor(dims, std::vector<double>(shape_size(dims), 0.0)) {}

  DenseTensor(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data))
  {
    detail::require(!dims_.empty(), "DenseTensor: order must be at least 1");
    for (auto p : dims_) detail::require(p >= 1, "DenseTensor: every dimension must be positive");
    detail::require(data_.size() == shape_size(dims_),
                    "DenseTensor: data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(dims_));
  }

  const Shape& dims() const { return dims_; }
  std::size_t order() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator[](std::size_t linear) const { return data_[linear]; }
  double& operator[](std::size_t linear) { return data_[linear]; }

  /// Row-major offset of a 0-based multi-index.
  std::size_t linear_index(std::span<const std::size_t> index) const
  {
    detail::require(index.size() == dims_.size(), "DenseTensor: index order mismatch");
    std::size_t offset = 0;
    for (std::size_t d = 0; d < dims_.size(); ++d) {
      detail::require(index[d] < dims_[d], "DenseTensor: index out of range");
      offset = offset * dims_[d] + index[d];
    }
    return offset;
  }

  double operator()(std::span<const std::size_t> index) const { return data_[linear_index(index)]; }
  double& operator()(std::span<const std::size_t> index) { return data_[linear_index(index)]; }

  double operator()(std::initializer_list<std::size_t> index) const
  {
    return (*this)(std::span<const std::size_t>(index.begin(), index.size()));
  }
  double& operator()(std::initializer_list<std::size_t> index)
  {
    return (*this)(std::span<const std::size_t>(index.begin(), index.size()));
  }

  Eigen::Map<const VectorXd> as_vector() const
  {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

 private:
  Shape dims_;
  std::vector<double> data_;
};

/// CP parameters: one p_d x R factor matrix per mode, column r holding the
/// mode-d vector of the r-th rank-1 term.
class CpFactors {
 public:
  CpFactors() = default;

  explicit CpFactors(std::vector<MatrixXd> factors) : factors_(std::move(factors))
  {
    detail::require(!factors_.empty(), "CpFactors: need at least one factor matrix");
    const auto rank = factors_.front().cols();
    detail::require(rank >= 1, "CpFactors: rank must be positive");
    for (const auto& f : factors_) {
      detail::require(f.cols() == rank, "CpFactors: factor matrices disagree on the rank");
      detail::require(f.rows() >= 1, "CpFactors: factor matrices need at least one row");
    }
  }

  static CpFactors zeros(const Shape& dims, Eigen::Index rank)
  {
    std::vector<MatrixXd> fs;
    for (auto p : dims) fs.push_back(MatrixXd::Zero(static_cast<Eigen::Index>(p), rank));
    return CpFactors(std::move(fs));
  }

  Eigen::Index rank() const { return factors_.empty() ? 0 : factors_.front().cols(); }
  std::size_t order() const { return factors_.size(); }

  Shape shape() const
  {
    Shape dims;
    for (const auto& f : factors_) dims.push_back(static_cast<std::size_t>(f.rows()));
    return dims;
  }

  const MatrixXd& factor(std::size_t d) const { return factors_.at(d); }
  const std::vector<MatrixXd>& factors() const { return factors_; }

  void set_factor(std::size_t d, MatrixXd m)
  {
    detail::require(d < factors_.size(), "CpFactors: mode out of range");
    detail::require(m.rows() == factors_[d].rows() && m.cols() == factors_[d].cols(),
                    "CpFactors: replacement factor has the wrong shape");
    factors_[d] = std::move(m);
  }

  /// Mutable access for in-place updates; the caller keeps the shape fixed.
  MatrixXd& factor_mut(std::size_t d) { return factors_.at(d); }

 private:
  std::vector<MatrixXd> factors_;
};

/// Kronecker product of vectors, first vector slowest.
inline VectorXd kron(std::span<const VectorXd> vs)
{
  VectorXd out = VectorXd::Ones(1);
  for (const auto& v : vs) {
    VectorXd next(out.size() * v.size());
    for (Eigen::Index i = 0; i < out.size(); ++i) next.segment(i * v.size(), v.size()) = out(i) * v;
    out = std::move(next);
  }
  return out;
}

/// Column-wise Kronecker product; column r is kron of column r of each input, in list order.
inline MatrixXd khatri_rao(std::span<const MatrixXd> ms)
{
  detail::require(!ms.empty(), "khatri_rao: need at least one matrix");
  const auto rank = ms.front().cols();
  Eigen::Index rows = 1;
  for (const auto& m : ms) {
    detail::require(m.cols() == rank, "khatri_rao: column count mismatch");
    rows *= m.rows();
  }
  MatrixXd out(rows, rank);
  for (Eigen::Index r = 0; r < rank; ++r) {
    Eigen::Index len = 1;
    out(0, r) = 1.0;
    for (const auto& m : ms) {
      // expand in place from the back so earlier entries are read before being overwritten
      for (Eigen::Index i = len - 1; i >= 0; --i) {
        const double head = out(i, r);
        for (Eigen::Index k = m.rows() - 1; k >= 0; --k) out(i * m.rows() + k, r) = head * m(k, r);
      }
      len *= m.rows();
    }
  }
  return out;
}

inline MatrixXd khatri_rao(const std::vector<MatrixXd>& ms)
{
  return khatri_rao(std::span<const MatrixXd>(ms.data(), ms.size()));
}

/// Factor matrices of every mode except `skip`, in increasing mode order.
inline std::vector<MatrixXd> other_factors(const CpFactors& factors, std::size_t skip)
{
  std::vector<MatrixXd> out;
  for (std::size_t e = 0; e < factors.order(); ++e)
    if (e != skip) out.push_back(factors.factor(e));
  return out;
}

/// A = sum_r beta_{1,r} o ... o beta_{D,r}.
inline DenseTensor cp_reconstruct(const CpFactors& factors)
{
  detail::require(factors.order() >= 1, "cp_reconstruct: empty factors");
  const MatrixXd kr = khatri_rao(factors.factors());
  VectorXd flat = kr.rowwise().sum();
  return DenseTensor(factors.shape(), std::vector<double>(flat.data(), flat.data() + flat.size()));
}

inline double inner_product(const DenseTensor& a, const DenseTensor& b)
{
  detail::require(a.dims() == b.dims(), "inner_product: shape mismatch " + shape_string(a.dims()) +
                                            " vs " + shape_string(b.dims()));
  return a.as_vector().dot(b.as_vector());
}

inline double frobenius_norm(const DenseTensor& a) { return a.as_vector().norm(); }

inline VectorXd vec_row_major(const DenseTensor& a) { return a.as_vector(); }

/// Mode-d unfolding (0-based d): p_d x prod_{e!=d} p_e, remaining modes in
/// increasing order with the last one fastest.
inline MatrixXd unfold_mode(const DenseTensor& a, std::size_t d)
{
  const auto& dims = a.dims();
  detail::require(d < dims.size(), "unfold_mode: mode out of range");
  std::size_t outer = 1;
  for (std::size_t e = 0; e < d; ++e) outer *= dims[e];
  std::size_t inner = 1;
  for (std::size_t e = d + 1; e < dims.size(); ++e) inner *= dims[e];
  const std::size_t pd = dims[d];

  MatrixXd out(static_cast<Eigen::Index>(pd), static_cast<Eigen::Index>(outer * inner));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < pd; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        out(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(o * inner + i)) =
            a[(o * pd + l) * inner + i];
  return out;
}

/// Inverse of unfold_mode.
inline DenseTensor refold(const MatrixXd& m, std::size_t d, const Shape& dims)
{
  detail::require(d < dims.size(), "refold: mode out of range");
  std::size_t outer = 1;
  for (std::size_t e = 0; e < d; ++e) outer *= dims[e];
  std::size_t inner = 1;
  for (std::size_t e = d + 1; e < dims.size(); ++e) inner *= dims[e];
  const std::size_t pd = dims[d];
  detail::require(static_cast<std::size_t>(m.rows()) == pd &&
                      static_cast<std::size_t>(m.cols()) == outer * inner,
                  "refold: matrix shape does not match tensor shape");

  DenseTensor out(dims);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < pd; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        out[(o * pd + l) * inner + i] =
            m(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(o * inner + i));
  return out;
}

/// M(theta) = sum_r prod_d ||beta_{d,r}||.
inline double magnitude(const CpFactors& factors)
{
  double total = 0.0;
  for (Eigen::Index r = 0; r < factors.rank(); ++r) {
    double term = 1.0;
    for (const auto& f : factors.factors()) term *= f.col(r).norm();
    total += term;
  }
  return total;
}

/// Unit-norm columns in modes 0..D-2 with the accumulated scale moved into the
/// last mode. Terms with a zero column among the normalized modes are left as is.
inline CpFactors rebalance(const CpFactors& factors)
{
  CpFactors out = factors;
  const std::size_t last = factors.order() - 1;
  for (Eigen::Index r = 0; r < factors.rank(); ++r) {
    double scale = 1.0;
    bool zero_term = false;
    for (std::size_t d = 0; d < last; ++d) {
      const double n = factors.factor(d).col(r).norm();
      if (n == 0.0) zero_term = true;
      scale *= n;
    }
    if (zero_term) continue;
    for (std::size_t d = 0; d < last; ++d)
      out.factor_mut(d).col(r) /= factors.factor(d).col(r).norm();
    out.factor_mut(last).col(r) *= scale;
  }
  return out;
}

}  // namespace cpreg
