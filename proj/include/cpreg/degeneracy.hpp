#pragma once

// Detection of diverging CP parameters from a magnitude curve {t, M(theta_t)},
// and constructions of tensors that have no best low-rank approximation.
//
// Classification of a curve observed on [T/2, T]:
//   1. M(T) <= M(T/2)                        -> non-divergent (shortcut)
//   2. finite-difference slopes at spacing s  -> fit h(t) = a t^b + c
//   3. divergent iff  a > 0 and c > gamma_c
//                 or  a > 0 and b >= gamma_b and eta_c <= c <= gamma_c
//      A fit whose power-law term is not identifiable from the slopes
//      (constant slopes) is reported as h(t) = c and is divergent iff c > gamma_c.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cpreg/eigen_diagnostics.hpp"
#include "cpreg/tensor.hpp"

namespace cpreg {

using MagnitudeCurve = std::map<std::int64_t, double>;

struct Cutoffs {
  double gamma_b = -0.5;
  double eta_c = 0.0;
  double gamma_c = 0.0015;
};

struct ProxyWindow {
  std::int64_t t_lo = 0;
  std::int64_t t_hi = 0;
  std::int64_t spacing = 1;
};

/// [T/2, T] with spacing T/1000 (at least 1).
inline ProxyWindow default_window(std::int64_t total_iterations)
{
  return {total_iterations / 2, total_iterations, std::max<std::int64_t>(1, total_iterations / 1000)};
}

struct ProxyPoint {
  double t = 0.0;
  double slope = 0.0;
};

/// (t, (M(t+s) - M(t)) / s) for t = t_lo, t_lo+s, ..., t_hi-s.
inline std::vector<ProxyPoint> gradient_proxies(const MagnitudeCurve& curve, const ProxyWindow& window)
{
  detail::require(window.spacing >= 1, "gradient_proxies: spacing must be positive");
  detail::require(window.t_hi > window.t_lo, "gradient_proxies: empty window");
  auto lookup = [&](std::int64_t t) {
    auto it = curve.find(t);
    detail::require(it != curve.end(), "gradient_proxies: no magnitude recorded at t=" + std::to_string(t));
    return it->second;
  };
  std::vector<ProxyPoint> out;
  for (std::int64_t t = window.t_lo; t + window.spacing <= window.t_hi; t += window.spacing) {
    const double slope = (lookup(t + window.spacing) - lookup(t)) / static_cast<double>(window.spacing);
    out.push_back({static_cast<double>(t), slope});
  }
  return out;
}

struct PowerLawGrid {
  double b_min = -2.0;
  double b_max = 1.0;
  double step = 0.005;
};

struct PowerLawFit {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double sse = 0.0;
  /// The slopes are constant to rounding; a is set to 0 and c to their mean.
  bool constant_model = false;
};

namespace detail {

struct LinearFit {
  double a = 0.0, c = 0.0, sse = 0.0;
  bool ok = false;
};

/// Least squares y ~ a x + c.
inline LinearFit fit_affine(std::span<const double> x, std::span<const double> y)
{
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    scale = std::max(scale, std::abs(x[i]));
  }
  LinearFit fit;
  // regressor constant up to rounding (b == 0 on the grid, for one)
  if (!(sxx > 1e-24 * scale * scale * n)) return fit;
  fit.a = sxy / sxx;
  fit.c = my - fit.a * mx;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - fit.a * x[i] - fit.c;
    fit.sse += e * e;
  }
  fit.ok = true;
  return fit;
}

}  // namespace detail

/// Grid search over b with exact linear solves for (a, c); ties keep the smallest b.
inline PowerLawFit fit_power_law(std::span<const ProxyPoint> proxies, const PowerLawGrid& grid = {})
{
  detail::require(proxies.size() >= 3, "fit_power_law: need at least 3 proxy points");
  detail::require(grid.step > 0.0 && grid.b_max >= grid.b_min, "fit_power_law: invalid grid");

  std::vector<double> ts, ys, xs(proxies.size());
  for (const auto& p : proxies) {
    detail::require(p.t > 0.0, "fit_power_law: proxy abscissae must be positive");
    ts.push_back(p.t);
    ys.push_back(p.slope);
  }

  PowerLawFit best;
  bool found = false;
  const auto steps = static_cast<long>(std::floor((grid.b_max - grid.b_min) / grid.step + 1e-9));
  for (long k = 0; k <= steps; ++k) {
    // snapped so grid points such as -0.5 compare exactly against gamma_b
    const double b = std::round((grid.b_min + static_cast<double>(k) * grid.step) * 1e9) / 1e9;
    for (std::size_t i = 0; i < ts.size(); ++i) xs[i] = std::pow(ts[i], b);
    const auto lin = detail::fit_affine(xs, ys);
    if (!lin.ok) continue;
    if (!found || lin.sse < best.sse) {
      best = {lin.a, b, lin.c, lin.sse, false};
      found = true;
    }
  }

  double mean = 0.0, total_ss = 0.0, sq = 0.0;
  for (double y : ys) mean += y;
  mean /= static_cast<double>(ys.size());
  for (double y : ys) {
    total_ss += (y - mean) * (y - mean);
    sq += y * y;
  }
  // The trend explains nothing beyond rounding noise: report the constant model.
  if (!found || total_ss <= 1e-20 * sq) {
    const double b = found ? best.b : grid.b_min;
    best = {0.0, b, mean, total_ss, true};
  }
  return best;
}

enum class VerdictBranch {
  shortcut,        ///< M(T) <= M(T/2)
  growing_slope,   ///< a > 0, c > gamma_c
  power_law_tail,  ///< a > 0, b >= gamma_b, eta_c <= c <= gamma_c
  constant_slope,  ///< constant model with c > gamma_c
  none,            ///< fitted but no clause fired
};

inline std::string to_string(VerdictBranch b)
{
  switch (b) {
    case VerdictBranch::shortcut: return "shortcut";
    case VerdictBranch::growing_slope: return "growing_slope";
    case VerdictBranch::power_law_tail: return "power_law_tail";
    case VerdictBranch::constant_slope: return "constant_slope";
    default: return "none";
  }
}

struct DivergenceVerdict {
  bool divergent = false;
  bool shortcut_nondivergent = false;
  double a_hat = std::numeric_limits<double>::quiet_NaN();
  double b_hat = std::numeric_limits<double>::quiet_NaN();
  double c_hat = std::numeric_limits<double>::quiet_NaN();
  double sse = std::numeric_limits<double>::quiet_NaN();
  bool constant_model = false;
  Cutoffs cutoffs;
  VerdictBranch branch = VerdictBranch::none;
};

/// The decision rule on fitted values alone.
inline VerdictBranch apply_rule(const PowerLawFit& fit, const Cutoffs& cut)
{
  if (fit.constant_model) return fit.c > cut.gamma_c ? VerdictBranch::constant_slope : VerdictBranch::none;
  if (fit.a > 0.0 && fit.c > cut.gamma_c) return VerdictBranch::growing_slope;
  if (fit.a > 0.0 && fit.b >= cut.gamma_b && cut.eta_c <= fit.c && fit.c <= cut.gamma_c)
    return VerdictBranch::power_law_tail;
  return VerdictBranch::none;
}

inline DivergenceVerdict classify_divergence(const MagnitudeCurve& curve, std::int64_t total_iterations,
                                             const Cutoffs& cutoffs = {}, const PowerLawGrid& grid = {})
{
  const ProxyWindow window = default_window(total_iterations);
  detail::require(curve.count(window.t_hi) && curve.count(window.t_lo),
                  "classify_divergence: magnitudes at T/2 and T are required");
  DivergenceVerdict v;
  v.cutoffs = cutoffs;
  if (curve.at(window.t_hi) <= curve.at(window.t_lo)) {
    v.shortcut_nondivergent = true;
    v.branch = VerdictBranch::shortcut;
    return v;
  }
  const auto proxies = gradient_proxies(curve, window);
  const PowerLawFit fit = fit_power_law(proxies, grid);
  v.a_hat = fit.a;
  v.b_hat = fit.b;
  v.c_hat = fit.c;
  v.sse = fit.sse;
  v.constant_model = fit.constant_model;
  v.branch = apply_rule(fit, cutoffs);
  v.divergent = v.branch != VerdictBranch::none;
  return v;
}

namespace detail {

inline void require_three_modes(std::span<const VectorXd> w, std::span<const VectorXd> v, const char* who)
{
  require(w.size() == 3 && v.size() == 3, std::string(who) + ": expects three vectors per list");
  for (std::size_t d = 0; d < 3; ++d)
    require(w[d].size() == v[d].size() && w[d].size() >= 1,
            std::string(who) + ": w and v differ in length in mode " + std::to_string(d));
}

inline bool linearly_independent_pair(const VectorXd& a, const VectorXd& b)
{
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return false;
  return std::abs(a.dot(b)) / (na * nb) < 1.0 - 1e-10;
}

}  // namespace detail

/// G_gamma = gamma (w1 + v1/gamma) o (w2 + v2/gamma) o (w3 + v3/gamma) - gamma w1 o w2 o w3.
inline DenseTensor border_sequence(double gamma, std::span<const VectorXd> w, std::span<const VectorXd> v)
{
  detail::require_three_modes(w, v, "border_sequence");
  detail::require(gamma > 0.0, "border_sequence: gamma must be positive");
  std::vector<MatrixXd> fs;
  for (std::size_t d = 0; d < 3; ++d) {
    MatrixXd b(w[d].size(), 2);
    b.col(0) = w[d] + v[d] / gamma;
    b.col(1) = w[d];
    if (d == 0) {
      b.col(0) *= gamma;
      b.col(1) *= -gamma;
    }
    fs.push_back(std::move(b));
  }
  return cp_reconstruct(CpFactors(std::move(fs)));
}

/// G = v1 o w2 o w3 + w1 o v2 o w3 + w1 o w2 o v3 (rank 3, border rank 2).
inline DenseTensor degenerate_target(std::span<const VectorXd> w, std::span<const VectorXd> v)
{
  detail::require_three_modes(w, v, "degenerate_target");
  for (std::size_t d = 0; d < 3; ++d)
    detail::require(detail::linearly_independent_pair(w[d], v[d]),
                    "degenerate_target: w and v are linearly dependent in mode " + std::to_string(d));
  std::vector<MatrixXd> fs;
  for (std::size_t d = 0; d < 3; ++d) {
    MatrixXd b(w[d].size(), 3);
    for (Eigen::Index r = 0; r < 3; ++r) b.col(r) = (static_cast<std::size_t>(r) == d) ? v[d] : w[d];
    fs.push_back(std::move(b));
  }
  return cp_reconstruct(CpFactors(std::move(fs)));
}

}  // namespace cpreg
