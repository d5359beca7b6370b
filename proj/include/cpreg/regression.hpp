#pragma once

// Squared-loss tensor regression over CP parameters with three objectives:
//   ls            f(theta)
//   cp_ridge      f(theta) + lambda * sum_d ||B_d||_F^2
//   tensor_ridge  f(theta) + alpha  * ||A(theta)||_F^2
// minimized by cyclic exact block updates over the factor matrices.
//
// vec(B_d) is column-major throughout: entry (l, r) sits at r * p_d + l.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "cpreg/eigen_diagnostics.hpp"
#include "cpreg/tensor.hpp"

namespace cpreg {

using Iteration = std::int64_t;

enum class Penalty { none, cp_ridge, tensor_ridge };

struct Method {
  Penalty penalty = Penalty::none;
  double weight = 0.0;

  static Method least_squares() { return {}; }
  static Method cp_ridge(double lambda) { return {Penalty::cp_ridge, lambda}; }
  static Method tensor_ridge(double alpha) { return {Penalty::tensor_ridge, alpha}; }

  std::string name() const
  {
    switch (penalty) {
      case Penalty::cp_ridge: return "cp_ridge";
      case Penalty::tensor_ridge: return "tensor_ridge";
      default: return "ls";
    }
  }

  friend bool operator==(const Method&, const Method&) = default;
};

struct FitConfig {
  Eigen::Index rank = 1;
  Method method;
  Iteration max_iterations = 1;
  int num_starts = 5;
  std::uint64_t seed = 0;
  Iteration trace_stride = 1;
  std::vector<Iteration> snapshot_iterations;
  /// Record lambda_min(D^T D) alongside every traced iteration.
  bool record_diagnostics = false;
  /// Keep the trace of every start, not just the winner.
  bool keep_all_starts = false;

  void validate() const
  {
    detail::require(rank >= 1, "FitConfig: rank must be positive");
    detail::require(max_iterations >= 1, "FitConfig: max_iterations must be positive");
    detail::require(num_starts >= 1, "FitConfig: num_starts must be positive");
    detail::require(trace_stride >= 1, "FitConfig: trace_stride must be positive");
    if (method.penalty != Penalty::none)
      detail::require(method.weight > 0.0 && std::isfinite(method.weight),
                      "FitConfig: " + method.name() + " needs a positive penalty weight");
  }
};

/// Responses y and the flattened design Z whose row i is vec_row_major(X_i).
class RegressionDataset {
 public:
  RegressionDataset(Shape dims, MatrixXd design, VectorXd response)
      : dims_(std::move(dims)), design_(std::move(design)), response_(std::move(response))
  {
    detail::require(!dims_.empty(), "RegressionDataset: empty covariate shape");
    detail::require(design_.rows() == response_.size(),
                    "RegressionDataset: design rows and response length differ");
    detail::require(static_cast<std::size_t>(design_.cols()) == shape_size(dims_),
                    "RegressionDataset: design columns do not match covariate shape " +
                        shape_string(dims_));
    detail::require(design_.rows() >= 1, "RegressionDataset: need at least one sample");
  }

  static RegressionDataset from_tensors(std::span<const DenseTensor> covariates, VectorXd response)
  {
    detail::require(!covariates.empty(), "RegressionDataset: no covariates");
    const Shape dims = covariates.front().dims();
    MatrixXd z(static_cast<Eigen::Index>(covariates.size()), static_cast<Eigen::Index>(shape_size(dims)));
    for (std::size_t i = 0; i < covariates.size(); ++i) {
      detail::require(covariates[i].dims() == dims, "RegressionDataset: covariate shapes differ");
      z.row(static_cast<Eigen::Index>(i)) = covariates[i].as_vector().transpose();
    }
    return RegressionDataset(dims, std::move(z), std::move(response));
  }

  Eigen::Index n() const { return design_.rows(); }
  const Shape& dims() const { return dims_; }
  const MatrixXd& design() const { return design_; }
  const VectorXd& response() const { return response_; }

  DenseTensor covariate(Eigen::Index i) const
  {
    const VectorXd row = design_.row(i).transpose();
    return DenseTensor(dims_, std::vector<double>(row.data(), row.data() + row.size()));
  }

 private:
  Shape dims_;
  MatrixXd design_;
  VectorXd response_;
};

struct FitTrace {
  std::vector<Iteration> iterations;
  std::vector<double> objective;
  std::vector<double> magnitude;
  /// Empty unless diagnostics were requested.
  std::vector<double> lambda_min_D;

  double initial_objective = 0.0;
  double initial_magnitude = 0.0;
  std::map<Iteration, CpFactors> snapshots;
  CpFactors final_factors;
  double final_objective = 0.0;

  int winning_start = 0;
  std::vector<double> start_final_objectives;
  std::vector<FitTrace> start_traces;

  bool empty() const { return iterations.empty(); }
};

namespace detail {

inline void check_factors_match(const CpFactors& factors, const Shape& dims)
{
  require(factors.shape() == dims, "factor shape " + shape_string(factors.shape()) +
                                       " does not match data shape " + shape_string(dims));
}

inline double penalty_value(const CpFactors& factors, const Method& method)
{
  switch (method.penalty) {
    case Penalty::cp_ridge: {
      double s = 0.0;
      for (const auto& b : factors.factors()) s += b.squaredNorm();
      return method.weight * s;
    }
    case Penalty::tensor_ridge: {
      // ||A||_F^2 = sum_{r,s} prod_d (B_d^T B_d)(r,s)
      MatrixXd g = MatrixXd::Ones(factors.rank(), factors.rank());
      for (const auto& b : factors.factors()) g = g.cwiseProduct(b.transpose() * b);
      return method.weight * g.sum();
    }
    default: return 0.0;
  }
}

/// Minimizer of x^T H x - 2 b^T x. Falls back to an eigenvalue-thresholded
/// pseudo-inverse (cutoff 1e-12 * lambda_max) when H is not safely positive definite.
inline VectorXd solve_block_system(const MatrixXd& h, const VectorXd& b)
{
  Eigen::LLT<MatrixXd> llt(h);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-10) return llt.solve(b);

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(h);
  const VectorXd& ev = es.eigenvalues();
  const double cutoff = 1e-12 * std::max(ev.maxCoeff(), 0.0);
  VectorXd proj = es.eigenvectors().transpose() * b;
  for (Eigen::Index k = 0; k < ev.size(); ++k) proj(k) = (ev(k) > cutoff && ev(k) > 0.0) ? proj(k) / ev(k) : 0.0;
  return es.eigenvectors() * proj;
}

}  // namespace detail

/// f(theta) = ||y - Z vec(A(theta))||^2.
inline double loss_f(const CpFactors& factors, const RegressionDataset& data)
{
  detail::check_factors_match(factors, data.dims());
  const DenseTensor a = cp_reconstruct(factors);
  return (data.response() - data.design() * a.as_vector()).squaredNorm();
}

inline double objective(const CpFactors& factors, const RegressionDataset& data, const Method& method)
{
  const double f = loss_f(factors, data);
  switch (method.penalty) {
    case Penalty::cp_ridge: {
      double s = 0.0;
      for (const auto& b : factors.factors()) s += b.squaredNorm();
      return f + method.weight * s;
    }
    case Penalty::tensor_ridge: {
      const double norm = frobenius_norm(cp_reconstruct(factors));
      return f + method.weight * norm * norm;
    }
    default: return f;
  }
}

/// The block subproblem for mode d: prediction = design * vec(B_d) and the
/// penalty restricted to B_d is vec(B_d)^T penalty_gram vec(B_d).
struct BlockSystem {
  MatrixXd design;
  MatrixXd penalty_gram;
};

inline BlockSystem block_design(std::size_t d, const CpFactors& factors, const RegressionDataset& data,
                                const Method& method)
{
  detail::check_factors_match(factors, data.dims());
  detail::require(d < factors.order(), "block_design: mode out of range");
  const Eigen::Index pd = factors.factor(d).rows();
  const Eigen::Index rank = factors.rank();

  MatrixXd kr;
  if (factors.order() > 1) {
    kr = khatri_rao(other_factors(factors, d));
  } else {
    kr = MatrixXd::Ones(1, rank);
  }

  BlockSystem sys;
  sys.design.resize(data.n(), pd * rank);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const MatrixXd xk = unfold_mode(data.covariate(i), d) * kr;
    for (Eigen::Index r = 0; r < rank; ++r) sys.design.row(i).segment(r * pd, pd) = xk.col(r).transpose();
  }

  const Eigen::Index m = pd * rank;
  switch (method.penalty) {
    case Penalty::cp_ridge: sys.penalty_gram = method.weight * MatrixXd::Identity(m, m); break;
    case Penalty::tensor_ridge: {
      // alpha ||B_d K^T||_F^2 = alpha vec(B_d)^T (K^T K kron I_{p_d}) vec(B_d)
      const MatrixXd ktk = kr.transpose() * kr;
      sys.penalty_gram = MatrixXd::Zero(m, m);
      for (Eigen::Index r = 0; r < rank; ++r)
        for (Eigen::Index s = 0; s < rank; ++s)
          sys.penalty_gram.block(r * pd, s * pd, pd, pd) = method.weight * ktk(r, s) * MatrixXd::Identity(pd, pd);
      break;
    }
    default: sys.penalty_gram = MatrixXd::Zero(m, m);
  }
  return sys;
}

/// Replaces B_d by a global minimizer of the (convex quadratic) block subproblem.
inline CpFactors block_update(std::size_t d, const CpFactors& factors, const RegressionDataset& data,
                              const Method& method)
{
  const BlockSystem sys = block_design(d, factors, data, method);
  MatrixXd h = sys.design.transpose() * sys.design + sys.penalty_gram;
  const VectorXd rhs = sys.design.transpose() * data.response();
  const VectorXd x = detail::solve_block_system(h, rhs);

  CpFactors out = factors;
  const Eigen::Index pd = factors.factor(d).rows();
  out.set_factor(d, Eigen::Map<const MatrixXd>(x.data(), pd, factors.rank()));
  return out;
}

namespace detail {

/// Reusable buffers for repeated block updates on one dataset. The mode-d
/// covariate unfoldings are stacked once so each update is a single product
/// with the Khatri-Rao matrix of the other factors.
class BlockEngine {
 public:
  BlockEngine(const RegressionDataset& data, Method method, Eigen::Index rank)
      : data_(data), method_(method), rank_(rank)
  {
    const Shape& dims = data.dims();
    const Eigen::Index n = data.n();
    std::vector<double> ids(shape_size(dims));
    std::iota(ids.begin(), ids.end(), 0.0);
    const DenseTensor index_tensor(dims, std::move(ids));
    for (std::size_t d = 0; d < dims.size(); ++d) {
      const MatrixXd index_map = unfold_mode(index_tensor, d);
      const Eigen::Index pd = index_map.rows();
      const Eigen::Index rest = index_map.cols();
      MatrixXd zd(n * pd, rest);
      for (Eigen::Index j = 0; j < rest; ++j)
        for (Eigen::Index l = 0; l < pd; ++l) {
          const auto col = static_cast<Eigen::Index>(index_map(l, j));
          for (Eigen::Index i = 0; i < n; ++i) zd(i * pd + l, j) = data.design()(i, col);
        }
      stacked_.push_back(std::move(zd));
    }
  }

  /// In-place exact update of mode d; leaves the residual sum of squares of the
  /// updated model in residual_ss().
  void update(std::size_t d, CpFactors& factors)
  {
    const Eigen::Index pd = factors.factor(d).rows();
    const Eigen::Index n = data_.n();
    const std::size_t order = factors.order();

    if (order > 1) {
      kr_ = khatri_rao(other_factors(factors, d));
    } else {
      kr_ = MatrixXd::Ones(1, rank_);
    }
    contracted_.noalias() = stacked_[d] * kr_;
    wt_.resize(pd * rank_, n);
    for (Eigen::Index r = 0; r < rank_; ++r)
      wt_.middleRows(r * pd, pd) = Eigen::Map<const MatrixXd>(contracted_.col(r).data(), pd, n);

    const Eigen::Index m = pd * rank_;
    h_.setZero(m, m);
    h_.selfadjointView<Eigen::Lower>().rankUpdate(wt_);
    h_.triangularView<Eigen::StrictlyUpper>() = h_.transpose();
    switch (method_.penalty) {
      case Penalty::cp_ridge: h_.diagonal().array() += method_.weight; break;
      case Penalty::tensor_ridge: {
        MatrixXd ktk = MatrixXd::Ones(rank_, rank_);
        for (std::size_t e = 0; e < order; ++e)
          if (e != d) ktk = ktk.cwiseProduct(factors.factor(e).transpose() * factors.factor(e));
        for (Eigen::Index r = 0; r < rank_; ++r)
          for (Eigen::Index s = 0; s < rank_; ++s)
            h_.block(r * pd, s * pd, pd, pd).diagonal().array() += method_.weight * ktk(r, s);
        break;
      }
      default: break;
    }
    rhs_.noalias() = wt_ * data_.response();
    const VectorXd x = solve_block_system(h_, rhs_);
    factors.factor_mut(d) = Eigen::Map<const MatrixXd>(x.data(), pd, rank_);
    residual_ss_ = (data_.response() - wt_.transpose() * x).squaredNorm();
  }

  double residual_ss() const { return residual_ss_; }

 private:
  const RegressionDataset& data_;
  Method method_;
  Eigen::Index rank_;
  std::vector<MatrixXd> stacked_;
  MatrixXd kr_, contracted_, wt_, h_;
  VectorXd rhs_;
  double residual_ss_ = 0.0;
};

}  // namespace detail

/// I.i.d. standard normal factor entries from the stream keyed by (seed, start).
inline CpFactors random_init(const Shape& dims, Eigen::Index rank, std::uint64_t seed, int start)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(start), 0x1417u};
  std::mt19937_64 gen(seq);
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  std::vector<MatrixXd> fs;
  for (auto p : dims) {
    MatrixXd b(static_cast<Eigen::Index>(p), rank);
    for (Eigen::Index r = 0; r < rank; ++r)
      for (Eigen::Index l = 0; l < b.rows(); ++l) b(l, r) = normal(gen);
    fs.push_back(std::move(b));
  }
  return CpFactors(std::move(fs));
}

/// Runs exactly max_iterations sweeps (modes 0..D-1 in order each sweep); no early stopping.
inline FitTrace fit_single(const RegressionDataset& data, const FitConfig& config, const CpFactors& initial)
{
  config.validate();
  detail::check_factors_match(initial, data.dims());
  detail::require(initial.rank() == config.rank, "fit_single: initial rank differs from config rank");

  const std::set<Iteration> snapshot_at(config.snapshot_iterations.begin(), config.snapshot_iterations.end());
  const Iteration total = config.max_iterations;

  FitTrace trace;
  trace.initial_objective = objective(initial, data, config.method);
  trace.initial_magnitude = magnitude(initial);
  const auto expected = static_cast<std::size_t>(total / config.trace_stride + 1);
  trace.iterations.reserve(expected);
  trace.objective.reserve(expected);
  trace.magnitude.reserve(expected);

  detail::BlockEngine engine(data, config.method, config.rank);
  CpFactors factors = initial;
  double obj = trace.initial_objective;
  for (Iteration t = 1; t <= total; ++t) {
    for (std::size_t d = 0; d < factors.order(); ++d) engine.update(d, factors);
    obj = engine.residual_ss() + detail::penalty_value(factors, config.method);

    if (t % config.trace_stride == 0 || t == total) {
      trace.iterations.push_back(t);
      trace.objective.push_back(obj);
      trace.magnitude.push_back(magnitude(factors));
      if (config.record_diagnostics) {
        double lmin = std::numeric_limits<double>::quiet_NaN();
        try {
          lmin = eigen_diagnostics(factors).lambda_min_D;
        } catch (const Error&) {
        }
        trace.lambda_min_D.push_back(lmin);
      }
    }
    if (snapshot_at.count(t)) trace.snapshots.emplace(t, factors);
  }
  trace.final_objective = obj;
  trace.final_factors = std::move(factors);
  trace.start_final_objectives = {obj};
  return trace;
}

/// Best of num_starts seeded starts by final objective; ties go to the lowest start index.
inline FitTrace fit_multi_start(const RegressionDataset& data, const FitConfig& config)
{
  config.validate();
  FitTrace best;
  std::vector<double> finals;
  std::vector<FitTrace> all;
  int best_start = -1;
  for (int start = 0; start < config.num_starts; ++start) {
    FitTrace trace = fit_single(data, config, random_init(data.dims(), config.rank, config.seed, start));
    finals.push_back(trace.final_objective);
    if (config.keep_all_starts) all.push_back(trace);
    if (best_start < 0 || trace.final_objective < best.final_objective) {
      best = std::move(trace);
      best_start = start;
    }
  }
  best.winning_start = best_start;
  best.start_final_objectives = std::move(finals);
  best.start_traces = std::move(all);
  return best;
}

/// Recorded (t, M(theta_t)) pairs of a trace.
inline std::map<Iteration, double> magnitude_curve(const FitTrace& trace)
{
  std::map<Iteration, double> curve;
  for (std::size_t k = 0; k < trace.iterations.size(); ++k) curve.emplace(trace.iterations[k], trace.magnitude[k]);
  return curve;
}

}  // namespace cpreg
