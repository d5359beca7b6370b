#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cpreg/config.hpp"
#include "cpreg/experiment.hpp"

using namespace cpreg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
  const auto p = fs::temp_directory_path() / ("cpreg_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig small_config(const fs::path& out)
{
  ExperimentConfig cfg;
  cfg.synth.synth_case = SynthCase::c1a;
  cfg.synth.n = 60;
  cfg.synth.p0 = 3;
  cfg.synth.seed = 4;
  cfg.replications = 3;
  cfg.output_dir = out;
  for (const auto& m : {Method::least_squares(), Method::cp_ridge(0.1)}) {
    FitConfig fc;
    fc.rank = 2;
    fc.method = m;
    fc.max_iterations = 1000;
    fc.num_starts = 2;
    fc.trace_stride = 1;
    cfg.fits.push_back(fc);
  }
  return cfg;
}

}  // namespace

TEST(TraceFile, RoundTripIsBitExact)
{
  FitTrace t;
  t.iterations = {1, 2, 3};
  t.objective = {1.0 / 3.0, 1e-300, 12345.678901234567};
  t.magnitude = {0.1, 2.0 / 7.0, 1e17};
  const auto dir = scratch_dir("trace");
  fs::create_directories(dir);
  emit_trace(t, dir / "a.csv");
  std::ifstream in(dir / "a.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iteration,objective,magnitude,lambda_min_D");
  int lines = 1;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 4);

  const auto back = read_trace(dir / "a.csv");
  EXPECT_EQ(back.iterations, t.iterations);
  EXPECT_EQ(back.objective, t.objective);
  EXPECT_EQ(back.magnitude, t.magnitude);
  EXPECT_TRUE(back.lambda_min_D.empty());

  t.lambda_min_D = {0.5, 1e-9, 0.0};
  emit_trace(t, dir / "b.csv");
  EXPECT_EQ(read_trace(dir / "b.csv").lambda_min_D, t.lambda_min_D);
  fs::remove_all(dir);
}

TEST(TraceFile, MalformedInput)
{
  const auto dir = scratch_dir("bad_trace");
  fs::create_directories(dir);
  std::ofstream(dir / "h.csv") << "iter,obj\n1,2\n";
  EXPECT_THROW(read_trace(dir / "h.csv"), Error);
  std::ofstream(dir / "r.csv") << "iteration,objective,magnitude,lambda_min_D\n1,abc,3,\n";
  EXPECT_THROW(read_trace(dir / "r.csv"), Error);
  EXPECT_THROW(read_trace(dir / "missing.csv"), Error);
  EXPECT_THROW(emit_trace(FitTrace{}, dir / "e.csv"), Error);
  fs::remove_all(dir);
}

TEST(SummaryFile, RoundTrip)
{
  SettingSummary s;
  s.key = {SynthCase::c2a, 100, 5, 3, 3, Method::tensor_ridge(0.001)};
  s.attempted = s.completed = 10;
  s.divergent_count = 4;
  const auto dir = scratch_dir("summary");
  fs::create_directories(dir);
  write_summary(std::vector<SettingSummary>{s}, dir / "summary.csv");
  EXPECT_EQ(slurp(dir / "summary.csv"),
            "case,n,p0,R,R0,method,tuning,replications,divergent_count\n2a,100,5,3,3,tensor_ridge,0.001,10,4\n");
  const auto back = read_summary(dir / "summary.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_TRUE(back[0].key == s.key);
  EXPECT_EQ(back[0].divergent_count, 4);
  fs::remove_all(dir);
}

TEST(RenderTable, EmptyAndSingle)
{
  const auto empty = render_table({});
  EXPECT_NE(empty.find("case"), std::string::npos);
  EXPECT_NE(empty.find("(R, R0)"), std::string::npos);
  EXPECT_EQ(std::count(empty.begin(), empty.end(), '\n'), 2);

  SettingSummary s;
  s.key = {SynthCase::c1a, 200, 5, 2, 3, Method::least_squares()};
  s.completed = 10;
  s.divergent_count = 10;
  const auto one = render_table(std::vector<SettingSummary>{s});
  EXPECT_NE(one.find("LS"), std::string::npos);
  EXPECT_NE(one.find("| 10"), std::string::npos);
  EXPECT_NE(one.find("Case 1a | (200, 5) |  (2, 3)"), std::string::npos);
}

TEST(RenderTable, ColumnsAndMissingCells)
{
  std::vector<SettingSummary> v(3);
  v[0].key = {SynthCase::c1a, 200, 5, 2, 3, Method::least_squares()};
  v[1].key = {SynthCase::c1a, 200, 5, 2, 3, Method::cp_ridge(0.1)};
  v[2].key = {SynthCase::c1b, 200, 5, 2, 3, Method::tensor_ridge(0.01)};
  v[2].divergent_count = 2;
  const auto t = render_table(v);
  EXPECT_NE(t.find("lambda=0.1"), std::string::npos);
  EXPECT_NE(t.find("alpha=0.01"), std::string::npos);
  EXPECT_NE(t.find('-'), std::string::npos);
}

TEST(Config, DefaultsAndProfiles)
{
  const auto cfg = parse_experiment_config("[synth]\ncase = 2a\n");
  EXPECT_EQ(cfg.synth.synth_case, SynthCase::c2a);
  EXPECT_EQ(cfg.replications, 10);
  ASSERT_EQ(cfg.fits.size(), 1u);
  EXPECT_EQ(cfg.fits[0].max_iterations, 20000);
  EXPECT_EQ(cfg.fits[0].trace_stride, 20);
  EXPECT_EQ(cfg.fits[0].num_starts, 5);

  ConfigOverrides paper;
  paper.profile = Profile::paper;
  const auto p = parse_experiment_config("[fit]\niterations = 500\n[experiment]\nreplications = 3\n", paper);
  EXPECT_EQ(p.replications, 50);
  EXPECT_EQ(p.fits[0].max_iterations, 100000);
  EXPECT_EQ(p.fits[0].trace_stride, 100);

  const auto file_paper = parse_experiment_config("[experiment]\nprofile = paper\nreplications = 3\n");
  EXPECT_EQ(file_paper.replications, 3);
  EXPECT_EQ(file_paper.fits[0].max_iterations, 100000);
}

TEST(Config, SettingsCrossProductAndOverrides)
{
  ConfigOverrides o;
  o.seed = 77;
  o.cutoffs = Cutoffs{-0.4, 0.0, 0.002};
  const auto cfg = parse_experiment_config(
      "[experiment]\nseed = 5\n[fit]\nranks = 2, 3\nmethods = ls, cp_ridge:0.01, tensor_ridge:0.1\n"
      "iterations = 2000\n[classifier]\ncutoffs = -0.6, 0, 0.001\n",
      o);
  EXPECT_EQ(cfg.fits.size(), 6u);
  EXPECT_EQ(cfg.fits[4].rank, 3);
  EXPECT_EQ(cfg.fits[4].method, Method::cp_ridge(0.01));
  EXPECT_EQ(cfg.synth.seed, 77u);
  EXPECT_EQ(cfg.cutoffs.gamma_b, -0.4);
  EXPECT_EQ(cfg.fits[0].trace_stride, 2);
}

TEST(Config, ErrorsNameTheField)
{
  auto message = [](const std::string& text) {
    try {
      parse_experiment_config(text);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("[synth]\nn = many\n").find("synth.n"), std::string::npos);
  EXPECT_NE(message("[synth]\ncase = 9z\n").find("synth.case"), std::string::npos);
  EXPECT_NE(message("[fit]\nmethods = ls, cp_ridge:0\n").find("fit.methods"), std::string::npos);
  EXPECT_NE(message("[fit]\nmethods = lasso:1\n").find("fit.methods"), std::string::npos);
  EXPECT_NE(message("[experiment]\nreplications = 0\n").find("experiment.replications"), std::string::npos);
  EXPECT_NE(message("[classifier]\ncutoffs = 1, 2\n").find("classifier.cutoffs"), std::string::npos);
  EXPECT_NE(message("[fit]\niterations = 20000\ntrace_stride = 7\n").find("fit.trace_stride"), std::string::npos);
  EXPECT_NE(message("[typo]\nx = 1\n").find("typo"), std::string::npos);
  EXPECT_NE(message("[experiment]\nprofile = huge\n").find("experiment.profile"), std::string::npos);
}

TEST(RunExperiment, DeterministicAndConsistent)
{
  const auto out1 = scratch_dir("run1"), out2 = scratch_dir("run2");
  const auto a = run_experiment(small_config(out1));
  auto cfg2 = small_config(out2);
  cfg2.workers = 2;
  const auto b = run_experiment(cfg2);

  ASSERT_EQ(a.settings.size(), 2u);
  for (std::size_t s = 0; s < a.settings.size(); ++s) {
    EXPECT_EQ(a.settings[s].completed, 3);
    EXPECT_EQ(a.settings[s].divergent_count, b.settings[s].divergent_count);
    const auto name = a.settings[s].key.directory_name();
    int flagged = 0;
    for (int k = 0; k < 3; ++k) {
      const auto rep = "rep_" + std::to_string(k);
      EXPECT_EQ(slurp(out1 / name / rep / "trace.csv"), slurp(out2 / name / rep / "trace.csv"));
      flagged += read_verdict_divergent(out1 / name / rep / "verdict.csv");

      const auto trace = read_trace(out1 / name / rep / "trace.csv");
      ASSERT_EQ(trace.iterations.size(), 1000u);
      for (std::size_t t = 1; t < trace.objective.size(); ++t)
        ASSERT_LE(trace.objective[t], trace.objective[t - 1] * (1.0 + 1e-9) + 1e-9);
    }
    EXPECT_EQ(flagged, a.settings[s].divergent_count);
  }
  EXPECT_EQ(slurp(out1 / "summary.csv"), slurp(out2 / "summary.csv"));
  const auto rows = read_summary(out1 / "summary.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].key.directory_name(), "case1a_n60_p3_R2_ls");
  EXPECT_EQ(rows[1].key.directory_name(), "case1a_n60_p3_R2_cp_ridge_0.1");
  EXPECT_TRUE(fs::exists(out1 / "replications.csv"));
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST(RunExperiment, FailuresAreIsolated)
{
  const auto out = scratch_dir("isolate");
  auto cfg = small_config(out);
  cfg.fits.resize(1);
  cfg.fits[0].max_iterations = 100;
  cfg.fits[0].trace_stride = 1;
  const auto summary = run_experiment(cfg, [](const FitObservation& obs) {
    if (obs.replication == 1) throw std::runtime_error("injected failure");
  });
  EXPECT_EQ(summary.settings[0].attempted, 3);
  EXPECT_EQ(summary.settings[0].completed, 2);
  const auto& failed = summary.records[1];
  EXPECT_FALSE(failed.completed);
  EXPECT_EQ(failed.error, "injected failure");
  EXPECT_NE(slurp(out / "replications.csv").find("failed"), std::string::npos);
  fs::remove_all(out);
}

TEST(RunExperiment, RecordsDiagnosticsAtTenthAndEnd)
{
  auto cfg = small_config({});
  cfg.replications = 1;
  cfg.fits.resize(1);
  const auto summary = run_experiment(cfg);
  const auto& r = summary.records[0];
  ASSERT_TRUE(r.completed);
  EXPECT_EQ(r.early_iteration, 100);
  EXPECT_GE(r.final.lambda_min_D, 0.0);
  EXPECT_LE(r.final.lambda_min_D, 1.0);
  EXPECT_NEAR(r.final.magnitude, r.final_magnitude, 1e-12 * r.final_magnitude);
}
