#pragma once

// Simulated regression data on p0 x p0 x p0 covariates.
//   1a, 2a: A0 = w1 o v2 o v3 + v1 o w2 o v3 + v1 o v2 o w3   (border rank < rank)
//   1b, 2b: A0 = u1 o u2 o u3 + v1 o v2 o v3 + w1 o w2 o w3
// Generating vectors ~ Unif(-5, 5), covariates ~ Unif(0, 1). Cases 2a/2b add
// N(0, sigma^2) noise with sigma chosen so that Var(signal) / sigma^2 = snr
// on the generated sample.

#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "cpreg/regression.hpp"
#include "cpreg/tensor.hpp"

namespace cpreg {

enum class SynthCase { c1a, c1b, c2a, c2b };

inline std::string to_string(SynthCase c)
{
  switch (c) {
    case SynthCase::c1a: return "1a";
    case SynthCase::c1b: return "1b";
    case SynthCase::c2a: return "2a";
    default: return "2b";
  }
}

inline SynthCase parse_synth_case(const std::string& s)
{
  if (s == "1a") return SynthCase::c1a;
  if (s == "1b") return SynthCase::c1b;
  if (s == "2a") return SynthCase::c2a;
  if (s == "2b") return SynthCase::c2b;
  throw Error("unknown case '" + s + "' (expected 1a, 1b, 2a or 2b)");
}

inline bool is_degenerate_case(SynthCase c) { return c == SynthCase::c1a || c == SynthCase::c2a; }
inline bool is_noisy_case(SynthCase c) { return c == SynthCase::c2a || c == SynthCase::c2b; }

struct SynthSpec {
  SynthCase synth_case = SynthCase::c1a;
  Eigen::Index n = 200;
  Eigen::Index p0 = 5;
  double snr = 4.0;
  std::uint64_t seed = 0;

  void validate() const
  {
    detail::require(n >= 1, "SynthSpec: n must be positive");
    detail::require(p0 >= 2, "SynthSpec: p0 must be at least 2");
    detail::require(snr > 0.0 && std::isfinite(snr), "SynthSpec: snr must be positive");
  }
};

/// Per-mode generating vectors; u is empty for the degenerate cases.
struct GeneratingVectors {
  std::vector<VectorXd> w, v, u;
};

struct SynthOutput {
  RegressionDataset dataset;
  DenseTensor true_coefficient;
  GeneratingVectors vectors;
  double sigma = 0.0;
};

namespace detail {

inline std::mt19937_64 synth_stream(std::uint64_t seed, std::uint32_t purpose)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose, 0x5eedu};
  return std::mt19937_64(seq);
}

/// Smallest singular value relative to the largest, above 1e-10.
inline bool columns_independent(const MatrixXd& m)
{
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  return s(0) > 0.0 && s(s.size() - 1) > 1e-10 * s(0);
}

inline bool pair_independent(const VectorXd& a, const VectorXd& b)
{
  const double na = a.norm(), nb = b.norm();
  return na > 0.0 && nb > 0.0 && std::abs(a.dot(b)) / (na * nb) < 1.0 - 1e-10;
}

inline void require_pairs_independent(std::span<const VectorXd> a, std::span<const VectorXd> b, const char* who)
{
  require(a.size() == 3 && b.size() == 3, std::string(who) + ": expects three vectors per list");
  for (std::size_t d = 0; d < 3; ++d) {
    require(a[d].size() == b[d].size(), std::string(who) + ": vector lengths differ in mode " + std::to_string(d));
    require(pair_independent(a[d], b[d]), std::string(who) + ": linearly dependent vectors in mode " + std::to_string(d));
  }
}

}  // namespace detail

inline CpFactors coefficient_a_factors(std::span<const VectorXd> w, std::span<const VectorXd> v)
{
  detail::require_pairs_independent(w, v, "make_coefficient_a");
  std::vector<MatrixXd> fs;
  for (std::size_t d = 0; d < 3; ++d) {
    MatrixXd b(w[d].size(), 3);
    for (Eigen::Index r = 0; r < 3; ++r) b.col(r) = (static_cast<std::size_t>(r) == d) ? w[d] : v[d];
    fs.push_back(std::move(b));
  }
  return CpFactors(std::move(fs));
}

/// w1 o v2 o v3 + v1 o w2 o v3 + v1 o v2 o w3.
inline DenseTensor make_coefficient_a(std::span<const VectorXd> w, std::span<const VectorXd> v)
{
  return cp_reconstruct(coefficient_a_factors(w, v));
}

inline CpFactors coefficient_b_factors(std::span<const VectorXd> u, std::span<const VectorXd> v,
                                       std::span<const VectorXd> w)
{
  detail::require(u.size() == 3 && v.size() == 3 && w.size() == 3,
                  "make_coefficient_b: expects three vectors per list");
  std::vector<MatrixXd> fs;
  for (std::size_t d = 0; d < 3; ++d) {
    detail::require(u[d].size() == v[d].size() && v[d].size() == w[d].size(),
                    "make_coefficient_b: vector lengths differ in mode " + std::to_string(d));
    MatrixXd b(u[d].size(), 3);
    b << u[d], v[d], w[d];
    detail::require(b.rows() >= 3 && detail::columns_independent(b),
                    "make_coefficient_b: u, v, w are linearly dependent in mode " + std::to_string(d));
    fs.push_back(std::move(b));
  }
  return CpFactors(std::move(fs));
}

/// u1 o u2 o u3 + v1 o v2 o v3 + w1 o w2 o w3.
inline DenseTensor make_coefficient_b(std::span<const VectorXd> u, std::span<const VectorXd> v,
                                      std::span<const VectorXd> w)
{
  return cp_reconstruct(coefficient_b_factors(u, v, w));
}

/// n tensors of shape (p0, p0, p0) with i.i.d. Unif(0, 1) entries.
inline std::vector<DenseTensor> gen_predictors(Eigen::Index n, Eigen::Index p0, std::uint64_t seed)
{
  detail::require(n >= 1 && p0 >= 1, "gen_predictors: n and p0 must be positive");
  auto gen = detail::synth_stream(seed, 2);
  boost::random::uniform_real_distribution<double> unif(0.0, 1.0);
  const Shape dims(3, static_cast<std::size_t>(p0));
  std::vector<DenseTensor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> data(shape_size(dims));
    for (auto& x : data) x = unif(gen);
    out.emplace_back(dims, std::move(data));
  }
  return out;
}

inline double sample_variance(const VectorXd& x)
{
  detail::require(x.size() >= 2, "sample_variance: need at least two values");
  const double mean = x.mean();
  return (x.array() - mean).square().sum() / static_cast<double>(x.size() - 1);
}

/// sigma = sqrt(sample variance of <A0, X_i> / snr).
inline double calibrate_noise(const DenseTensor& coefficient, std::span<const DenseTensor> predictors, double snr = 4.0)
{
  detail::require(predictors.size() >= 2, "calibrate_noise: need at least two predictors");
  detail::require(snr > 0.0, "calibrate_noise: snr must be positive");
  VectorXd signal(static_cast<Eigen::Index>(predictors.size()));
  for (std::size_t i = 0; i < predictors.size(); ++i)
    signal(static_cast<Eigen::Index>(i)) = inner_product(coefficient, predictors[i]);
  const double var = sample_variance(signal);
  detail::require(var > 0.0, "calibrate_noise: signal has zero variance");
  return std::sqrt(var / snr);
}

inline SynthOutput generate_case(const SynthSpec& spec)
{
  spec.validate();
  const auto p0 = spec.p0;
  auto vec_gen = detail::synth_stream(spec.seed, 1);
  boost::random::uniform_real_distribution<double> unif(-5.0, 5.0);
  auto draw = [&] {
    VectorXd x(p0);
    for (Eigen::Index l = 0; l < p0; ++l) x(l) = unif(vec_gen);
    return x;
  };

  GeneratingVectors gv;
  const bool degenerate = is_degenerate_case(spec.synth_case);
  for (int d = 0; d < 3; ++d) {
    // resample the (measure-zero) dependent draws
    for (;;) {
      VectorXd w = draw(), v = draw();
      VectorXd u = degenerate ? VectorXd() : draw();
      MatrixXd cols(p0, degenerate ? 2 : 3);
      if (degenerate) {
        cols << w, v;
      } else {
        cols << u, v, w;
      }
      const bool ok = degenerate ? detail::pair_independent(w, v)
                                 : (cols.cols() <= p0 && detail::columns_independent(cols));
      if (ok) {
        gv.w.push_back(std::move(w));
        gv.v.push_back(std::move(v));
        if (!degenerate) gv.u.push_back(std::move(u));
        break;
      }
      detail::require(cols.cols() <= p0, "generate_case: case b needs p0 >= 3");
    }
  }

  DenseTensor a0 = degenerate ? make_coefficient_a(gv.w, gv.v) : make_coefficient_b(gv.u, gv.v, gv.w);
  const auto predictors = gen_predictors(spec.n, p0, spec.seed);

  VectorXd y(spec.n);
  for (Eigen::Index i = 0; i < spec.n; ++i) y(i) = inner_product(a0, predictors[static_cast<std::size_t>(i)]);

  double sigma = 0.0;
  if (is_noisy_case(spec.synth_case)) {
    sigma = calibrate_noise(a0, predictors, spec.snr);
    auto noise_gen = detail::synth_stream(spec.seed, 3);
    boost::random::normal_distribution<double> normal(0.0, sigma);
    for (Eigen::Index i = 0; i < spec.n; ++i) y(i) += normal(noise_gen);
  }

  return {RegressionDataset::from_tensors(predictors, std::move(y)), std::move(a0), std::move(gv), sigma};
}

/// Header "y,x_1,...,x_P" then one sample per line, covariates in row-major order.
inline void write_dataset_csv(const RegressionDataset& data, const std::string& path)
{
  std::ofstream out(path);
  detail::require(static_cast<bool>(out), "write_dataset_csv: cannot open " + path);
  out.precision(17);
  out << "y";
  for (Eigen::Index j = 0; j < data.design().cols(); ++j) out << ",x_" << (j + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out << data.response()(i);
    for (Eigen::Index j = 0; j < data.design().cols(); ++j) out << "," << data.design()(i, j);
    out << "\n";
  }
  detail::require(static_cast<bool>(out), "write_dataset_csv: write failed for " + path);
}

}  // namespace cpreg
