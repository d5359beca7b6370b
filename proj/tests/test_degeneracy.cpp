#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cpreg/degeneracy.hpp"
#include "oracles.hpp"

using namespace cpreg;

namespace {

constexpr std::int64_t kT = 100000;

MagnitudeCurve sample_curve(const std::function<double(double)>& m, std::int64_t total = kT)
{
  MagnitudeCurve c;
  const auto w = default_window(total);
  for (std::int64_t t = w.t_lo; t <= w.t_hi; t += w.spacing) c[t] = m(static_cast<double>(t));
  return c;
}

std::vector<ProxyPoint> planted(double a, double b, double c)
{
  std::vector<ProxyPoint> p;
  for (std::int64_t t = kT / 2; t < kT; t += 100) p.push_back({static_cast<double>(t), a * std::pow(t, b) + c});
  return p;
}

/// The rule as written: (a>0 and c>gc) or (a>0 and b>=gb and ec<=c<=gc).
bool rule(double a, double b, double c, const Cutoffs& k)
{
  return (a > 0 && c > k.gamma_c) || (a > 0 && b >= k.gamma_b && k.eta_c <= c && c <= k.gamma_c);
}

std::vector<VectorXd> random_vectors(std::mt19937_64& gen, Eigen::Index p)
{
  std::vector<VectorXd> out;
  for (int d = 0; d < 3; ++d) out.push_back(oracle::random_matrix(gen, p, 1).col(0));
  return out;
}

std::vector<VectorXd> basis_list(Eigen::Index k)
{
  return {VectorXd::Unit(2, k), VectorXd::Unit(2, k), VectorXd::Unit(2, k)};
}

double distance(const DenseTensor& a, const DenseTensor& b) { return (a.as_vector() - b.as_vector()).norm(); }

}  // namespace

TEST(EigenDiagnostics, SingleTermIsOne)
{
  std::mt19937_64 gen(41);
  const CpFactors f(oracle::random_factors(gen, {3, 4, 2}, 1));
  EXPECT_NEAR(eigen_diagnostics(f).lambda_min_D, 1.0, 1e-12);
}

TEST(EigenDiagnostics, DuplicateTermsGiveZero)
{
  std::mt19937_64 gen(42);
  auto fs = oracle::random_factors(gen, {3, 4, 2}, 1);
  for (auto& b : fs) {
    MatrixXd wide(b.rows(), 2);
    wide << b, 2.5 * b;
    b = wide;
  }
  fs[0].col(1) *= -1.0;
  EXPECT_NEAR(eigen_diagnostics(CpFactors(fs)).lambda_min_D, 0.0, 1e-10);
}

TEST(EigenDiagnostics, TwoTermsClosedForm)
{
  std::mt19937_64 gen(43);
  for (int trial = 0; trial < 50; ++trial) {
    const auto fs = oracle::random_factors(gen, {3, 3, 3}, 2);
    double rho = 1.0;
    for (const auto& b : fs) rho *= b.col(0).dot(b.col(1)) / (b.col(0).norm() * b.col(1).norm());
    const auto diag = eigen_diagnostics(CpFactors(fs));
    EXPECT_NEAR(diag.lambda_min_D, 1.0 - std::abs(rho), 1e-12);
    ASSERT_EQ(diag.per_mode.size(), 3u);
    for (std::size_t d = 0; d < 3; ++d) {
      // 2x2 Gram [[p, q], [q, s]]: lambda_min = (p+s)/2 - sqrt(((p-s)/2)^2 + q^2)
      const double p = fs[d].col(0).squaredNorm(), s = fs[d].col(1).squaredNorm(), q = fs[d].col(0).dot(fs[d].col(1));
      const double lmin = (p + s) / 2 - std::sqrt((p - s) * (p - s) / 4 + q * q);
      EXPECT_NEAR(diag.per_mode[d], lmin / (p * s), 1e-10);
    }
    EXPECT_NEAR(diag.magnitude, oracle::magnitude(fs), 1e-12 * diag.magnitude);
    EXPECT_GE(diag.lambda_min_D, 0.0);
    EXPECT_LE(diag.lambda_min_D, 1.0);
  }
}

TEST(EigenDiagnostics, ZeroTermsAreDroppedOrRejected)
{
  std::mt19937_64 gen(44);
  auto fs = oracle::random_factors(gen, {3, 3, 3}, 2);
  fs[2].col(1).setZero();
  const auto diag = eigen_diagnostics(CpFactors(fs));
  EXPECT_EQ(diag.dropped_terms, 1u);
  EXPECT_NEAR(diag.lambda_min_D, 1.0, 1e-12);
  EXPECT_TRUE(std::isnan(diag.per_mode[2]));
  EXPECT_THROW(eigen_diagnostics(CpFactors::zeros({3, 3, 3}, 2)), Error);
}

TEST(GradientProxies, Examples)
{
  const ProxyWindow w{50000, 100000, 100};
  for (const auto& p : gradient_proxies(sample_curve([](double) { return 7.0; }), w)) EXPECT_EQ(p.slope, 0.0);
  const auto lin = gradient_proxies(sample_curve([](double t) { return 2.0 * t; }), w);
  ASSERT_EQ(lin.size(), 500u);
  EXPECT_EQ(lin.front().t, 50000.0);
  EXPECT_EQ(lin.back().t, 99900.0);
  for (const auto& p : lin) EXPECT_EQ(p.slope, 2.0);
  for (const auto& p : gradient_proxies(sample_curve([](double t) { return std::sqrt(t); }), w))
    EXPECT_NEAR(p.slope, 0.5 / std::sqrt(p.t), 0.01 * 0.5 / std::sqrt(p.t));
}

TEST(GradientProxies, MissingSamplesAreReported)
{
  auto c = sample_curve([](double t) { return t; });
  c.erase(70000);
  EXPECT_THROW(gradient_proxies(c, {50000, 100000, 100}), Error);
  EXPECT_THROW(gradient_proxies(c, {50000, 100000, 0}), Error);
}

TEST(FitPowerLaw, RecoversPlantedCurve)
{
  const auto fit = fit_power_law(planted(3.0, -0.7, 0.002));
  EXPECT_NEAR(fit.a, 3.0, 3e-3);
  EXPECT_NEAR(fit.b, -0.7, 0.005);
  EXPECT_NEAR(fit.c, 0.002, 1e-6);
  EXPECT_FALSE(fit.constant_model);
}

TEST(FitPowerLaw, PlantedGridProperty)
{
  std::mt19937_64 gen(45);
  std::uniform_int_distribution<int> bk(0, 600);
  std::uniform_real_distribution<double> av(0.1, 50.0), cv(-0.01, 0.01);
  for (int trial = 0; trial < 30; ++trial) {
    const double b = std::round((-2.0 + 0.005 * bk(gen)) * 1e9) / 1e9;
    if (std::abs(b) < 0.05) continue;  // t^b nearly constant: a and c are not separable
    const double a = av(gen), c = cv(gen);
    const auto fit = fit_power_law(planted(a, b, c));
    EXPECT_NEAR(fit.b, b, 0.005) << a << " " << b << " " << c;
    EXPECT_NEAR(fit.a, a, 1e-3 * a);
    EXPECT_NEAR(fit.c, c, 1e-6);
  }
}

TEST(FitPowerLaw, ConstantProxies)
{
  const auto fit = fit_power_law(planted(0.0, 0.0, 0.004));
  EXPECT_NEAR(fit.a, 0.0, 1e-12);
  EXPECT_NEAR(fit.c, 0.004, 1e-15);
  EXPECT_TRUE(fit.constant_model);
}

TEST(FitPowerLaw, NoisyDecayingCurve)
{
  std::mt19937_64 gen(46);
  std::normal_distribution<double> noise(0.0, 1e-6);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = planted(5.0, -0.8, 0.0001);
    for (auto& q : p) q.slope += noise(gen);
    const auto fit = fit_power_law(p);
    EXPECT_LE(fit.sse, 2.0 * static_cast<double>(p.size()) * 1e-12);
  }
}

TEST(FitPowerLaw, FinerGridNeverWorse)
{
  std::mt19937_64 gen(47);
  std::normal_distribution<double> noise(0.0, 1e-5);
  auto p = planted(2.0, -0.6237, 0.0005);
  for (auto& q : p) q.slope += noise(gen);
  const double coarse = fit_power_law(p, {-2.0, 1.0, 0.01}).sse;
  const double fine = fit_power_law(p, {-2.0, 1.0, 0.005}).sse;
  const double finer = fit_power_law(p, {-2.0, 1.0, 0.0025}).sse;
  EXPECT_LE(fine, coarse);
  EXPECT_LE(finer, fine);
}

TEST(FitPowerLaw, NeedsThreePoints)
{
  EXPECT_THROW(fit_power_law(std::vector<ProxyPoint>{{1, 1}, {2, 2}}), Error);
}

TEST(ClassifyDivergence, ConstantCurveTakesShortcut)
{
  const auto v = classify_divergence(sample_curve([](double) { return 7.0; }), kT);
  EXPECT_FALSE(v.divergent);
  EXPECT_TRUE(v.shortcut_nondivergent);
  EXPECT_EQ(v.branch, VerdictBranch::shortcut);
}

TEST(ClassifyDivergence, LinearCurveIsDivergent)
{
  const auto v = classify_divergence(sample_curve([](double t) { return 0.01 * t; }), kT);
  EXPECT_TRUE(v.divergent);
  EXPECT_NEAR(v.c_hat, 0.01, 1e-12);
}

TEST(ClassifyDivergence, SquareRootCurveIsDivergent)
{
  const auto v = classify_divergence(sample_curve([](double t) { return std::sqrt(t); }), kT);
  EXPECT_TRUE(v.divergent);
  EXPECT_GT(v.a_hat, 0.0);
  EXPECT_EQ(v.b_hat, -0.5);
  EXPECT_EQ(v.branch, VerdictBranch::power_law_tail);
}

TEST(ClassifyDivergence, SaturatingCurveIsNotDivergent)
{
  const auto v = classify_divergence(sample_curve([](double t) { return 10.0 - 5.0 * std::exp(-t / 10000.0); }), kT);
  EXPECT_FALSE(v.shortcut_nondivergent);
  EXPECT_FALSE(v.divergent);
  EXPECT_LT(v.b_hat, -1.0);
  EXPECT_NEAR(v.c_hat, 0.0, 1e-5);
}

TEST(ClassifyDivergence, ShortcutDominates)
{
  // decreasing overall but with steep positive stretches in the window
  const auto v = classify_divergence(sample_curve([](double t) { return 1e4 - 0.05 * t + 50.0 * std::sin(t / 800.0); }), kT);
  EXPECT_TRUE(v.shortcut_nondivergent);
  EXPECT_FALSE(v.divergent);
}

TEST(ClassifyDivergence, CutoffOverride)
{
  const Cutoffs huge{-0.5, 0.0, 1e9};
  EXPECT_FALSE(classify_divergence(sample_curve([](double t) { return 0.01 * t; }), kT, huge).divergent);
  const auto v = classify_divergence(sample_curve([](double t) { return std::sqrt(t); }), kT, huge);
  EXPECT_TRUE(v.divergent);
  EXPECT_EQ(v.branch, VerdictBranch::power_law_tail);
  EXPECT_EQ(v.cutoffs.gamma_c, 1e9);
}

TEST(ClassifyDivergence, ScaledWindowAtDeskScale)
{
  const auto v = classify_divergence(sample_curve([](double t) { return 0.01 * t; }, 20000), 20000);
  EXPECT_TRUE(v.divergent);
  const auto w = default_window(20000);
  EXPECT_EQ(w.t_lo, 10000);
  EXPECT_EQ(w.spacing, 20);
}

TEST(ClassifyDivergence, InsufficientCoverage)
{
  MagnitudeCurve c;
  c[100000] = 1.0;
  EXPECT_THROW(classify_divergence(c, kT), Error);
}

TEST(ApplyRule, MatchesBooleanRule)
{
  std::mt19937_64 gen(48);
  std::uniform_real_distribution<double> a(-1, 1), b(-2, 1), c(-0.003, 0.006);
  const Cutoffs k;
  for (int trial = 0; trial < 20000; ++trial) {
    PowerLawFit f{a(gen), b(gen), c(gen), 0.0, false};
    if (trial % 7 == 0) f.b = -0.5;
    if (trial % 11 == 0) f.c = k.gamma_c;
    if (trial % 13 == 0) f.c = 0.0;
    ASSERT_EQ(apply_rule(f, k) != VerdictBranch::none, rule(f.a, f.b, f.c, k));
  }
}

TEST(BorderSequence, BasisExample)
{
  const auto w = basis_list(0), v = basis_list(1);
  const auto g = degenerate_target(w, v);
  for (double gamma : {10.0, 100.0, 1000.0}) {
    const double expected = std::sqrt(3.0 / (gamma * gamma) + 1.0 / std::pow(gamma, 4));
    EXPECT_NEAR(distance(border_sequence(gamma, w, v), g), expected, 1e-9 * expected);
  }
  EXPECT_NEAR(distance(border_sequence(10.0, w, v), g), 0.173494, 1e-6);
  for (double gamma : {100.0, 1000.0}) {
    const double ratio = distance(border_sequence(10 * gamma, w, v), g) / distance(border_sequence(gamma, w, v), g);
    EXPECT_NEAR(ratio, 0.1, 0.001);
  }
}

TEST(BorderSequence, ConvergesOnRandomVectors)
{
  std::mt19937_64 gen(49);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_vectors(gen, 4), v = random_vectors(gen, 4);
    const auto g = degenerate_target(w, v);
    for (double gamma : {10.0, 100.0, 1000.0})
      EXPECT_LE(distance(border_sequence(10 * gamma, w, v), g), 0.15 * distance(border_sequence(gamma, w, v), g));
    // two rank-1 terms: every unfolding has rank at most 2
    const auto seq = border_sequence(50.0, w, v);
    for (std::size_t d = 0; d < 3; ++d) {
      Eigen::JacobiSVD<MatrixXd> svd(unfold_mode(seq, d));
      EXPECT_LT(svd.singularValues()(2), 1e-9 * svd.singularValues()(0));
    }
  }
  EXPECT_THROW(border_sequence(0.0, basis_list(0), basis_list(1)), Error);
}

TEST(DegenerateTarget, Examples)
{
  const auto g = degenerate_target(basis_list(0), basis_list(1));
  for (std::size_t k = 0; k < g.size(); ++k) {
    const bool one = k == oracle::row_major({2, 2, 2}, {1, 0, 0}) || k == oracle::row_major({2, 2, 2}, {0, 1, 0}) ||
                     k == oracle::row_major({2, 2, 2}, {0, 0, 1});
    EXPECT_EQ(g[k], one ? 1.0 : 0.0);
  }
  EXPECT_NEAR(frobenius_norm(g), std::sqrt(3.0), 1e-15);

  // cyclic symmetry when every w_d and every v_d coincide
  std::mt19937_64 gen(50);
  const VectorXd w = oracle::random_matrix(gen, 3, 1).col(0), v = oracle::random_matrix(gen, 3, 1).col(0);
  const auto s = degenerate_target(std::vector<VectorXd>{w, w, w}, std::vector<VectorXd>{v, v, v});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s({i, j, k}), s({k, i, j}), 1e-12);

  auto dependent = basis_list(0);
  EXPECT_THROW(degenerate_target(dependent, dependent), Error);
}
