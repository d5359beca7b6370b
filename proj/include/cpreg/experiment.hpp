#pragma once

// Replicated simulation experiments: for every replication draw a fresh
// dataset, fit every configured method with multiple starts, classify the
// winning magnitude curve and tally divergent counts per setting.
//
// Output layout (when an output directory is set):
//   <out>/<setting>/rep_<k>/trace.csv     iteration,objective,magnitude,lambda_min_D
//   <out>/<setting>/rep_<k>/verdict.csv   one row, see kVerdictHeader
//   <out>/replications.csv                every (setting, replication) with status
//   <out>/summary.csv                     case,n,p0,R,R0,method,tuning,replications,divergent_count

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "cpreg/degeneracy.hpp"
#include "cpreg/regression.hpp"
#include "cpreg/synth.hpp"

namespace cpreg {

inline constexpr const char* kTraceHeader = "iteration,objective,magnitude,lambda_min_D";
inline constexpr const char* kSummaryHeader = "case,n,p0,R,R0,method,tuning,replications,divergent_count";
inline constexpr const char* kVerdictHeader =
    "divergent,shortcut_nondivergent,branch,a_hat,b_hat,c_hat,sse,gamma_b,eta_c,gamma_c,"
    "final_objective,final_magnitude,winning_start";
inline constexpr Eigen::Index kTrueRank = 3;

/// Shortest representation that parses back to the same double.
inline std::string format_double(double x)
{
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  detail::require(ec == std::errc(), "format_double: conversion failed");
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view s)
{
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  detail::require(ec == std::errc() && ptr == s.data() + s.size(), "not a number: '" + std::string(s) + "'");
  return x;
}

inline std::int64_t parse_int(std::string_view s)
{
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  std::int64_t x = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  detail::require(ec == std::errc() && ptr == s.data() + s.size(), "not an integer: '" + std::string(s) + "'");
  return x;
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// ---------------------------------------------------------------------------
// Trace files

inline void emit_trace(const FitTrace& trace, const std::filesystem::path& path)
{
  detail::require(!trace.empty(), "emit_trace: empty trace");
  std::ofstream out(path);
  detail::require(static_cast<bool>(out), "emit_trace: cannot open " + path.string());
  out << kTraceHeader << '\n';
  const bool diag = !trace.lambda_min_D.empty();
  for (std::size_t k = 0; k < trace.iterations.size(); ++k) {
    out << trace.iterations[k] << ',' << format_double(trace.objective[k]) << ','
        << format_double(trace.magnitude[k]) << ',';
    if (diag) out << format_double(trace.lambda_min_D[k]);
    out << '\n';
  }
  detail::require(static_cast<bool>(out), "emit_trace: write failed for " + path.string());
}

inline FitTrace read_trace(const std::filesystem::path& path)
{
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "read_trace: cannot open " + path.string());
  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)), "read_trace: empty file " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  detail::require(line == kTraceHeader, "read_trace: unexpected header '" + line + "'");

  FitTrace trace;
  std::size_t lineno = 1;
  bool any_diag = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    detail::require(cells.size() == 3 || cells.size() == 4, where + "expected 4 columns");
    try {
      trace.iterations.push_back(parse_int(cells[0]));
      trace.objective.push_back(parse_double(cells[1]));
      trace.magnitude.push_back(parse_double(cells[2]));
      const bool has = cells.size() == 4 && !cells[3].empty() && cells[3] != "\r";
      any_diag = any_diag || has;
      trace.lambda_min_D.push_back(has ? parse_double(cells[3]) : std::numeric_limits<double>::quiet_NaN());
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
    if (trace.iterations.size() > 1)
      detail::require(trace.iterations.back() > trace.iterations[trace.iterations.size() - 2],
                      where + "iterations must increase");
  }
  detail::require(!trace.empty(), "read_trace: no rows in " + path.string());
  if (!any_diag) trace.lambda_min_D.clear();
  trace.final_objective = trace.objective.back();
  return trace;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  /// Its seed is the base seed; replication k uses base + k for data and fit starts.
  SynthSpec synth;
  std::vector<FitConfig> fits;
  int replications = 10;
  Cutoffs cutoffs;
  /// Empty: results are returned but nothing is written.
  std::filesystem::path output_dir;
  int workers = 1;

  void validate() const
  {
    synth.validate();
    detail::require(!fits.empty(), "experiment: fit list is empty");
    detail::require(replications >= 1, "experiment: replications must be at least 1");
    detail::require(workers >= 1, "experiment: workers must be at least 1");
    for (const auto& f : fits) f.validate();
  }
};

struct SettingKey {
  SynthCase synth_case = SynthCase::c1a;
  Eigen::Index n = 0;
  Eigen::Index p0 = 0;
  Eigen::Index rank = 0;
  Eigen::Index true_rank = kTrueRank;
  Method method;

  std::string tuning() const { return method.penalty == Penalty::none ? "0" : format_double(method.weight); }

  std::string directory_name() const
  {
    std::string s = "case" + to_string(synth_case) + "_n" + std::to_string(n) + "_p" + std::to_string(p0) + "_R" +
                    std::to_string(rank) + "_" + method.name();
    if (method.penalty != Penalty::none) s += "_" + tuning();
    return s;
  }

  auto tie() const
  {
    return std::make_tuple(static_cast<int>(synth_case), n, p0, rank, true_rank, static_cast<int>(method.penalty),
                           method.weight);
  }
  friend bool operator<(const SettingKey& a, const SettingKey& b) { return a.tie() < b.tie(); }
  friend bool operator==(const SettingKey& a, const SettingKey& b) { return a.tie() == b.tie(); }
};

struct SettingSummary {
  SettingKey key;
  int attempted = 0;
  int completed = 0;
  int divergent_count = 0;
};

struct ReplicationRecord {
  std::size_t setting = 0;
  int replication = 0;
  bool completed = false;
  std::string error;
  double final_objective = std::numeric_limits<double>::quiet_NaN();
  double final_magnitude = std::numeric_limits<double>::quiet_NaN();
  int winning_start = -1;
  DivergenceVerdict verdict;
  /// Diagnostics of the winning start at T/10 and at T.
  Iteration early_iteration = 0;
  EigenDiagnostics early;
  EigenDiagnostics final;
};

struct ReplicationSummary {
  std::vector<SettingSummary> settings;
  std::vector<ReplicationRecord> records;

  const SettingSummary* find(const SettingKey& key) const
  {
    for (const auto& s : settings)
      if (s.key == key) return &s;
    return nullptr;
  }
};

/// Passed to the optional per-fit observer (invoked under a lock).
struct FitObservation {
  std::size_t setting = 0;
  int replication = 0;
  const SynthOutput& synth;
  const FitConfig& config;
  const FitTrace& trace;
  const ReplicationRecord& record;
};

using FitObserver = std::function<void(const FitObservation&)>;

inline void write_verdict(const ReplicationRecord& rec, const std::filesystem::path& path)
{
  std::ofstream out(path);
  detail::require(static_cast<bool>(out), "write_verdict: cannot open " + path.string());
  const auto& v = rec.verdict;
  out << kVerdictHeader << '\n'
      << (v.divergent ? 1 : 0) << ',' << (v.shortcut_nondivergent ? 1 : 0) << ',' << to_string(v.branch) << ','
      << format_double(v.a_hat) << ',' << format_double(v.b_hat) << ',' << format_double(v.c_hat) << ','
      << format_double(v.sse) << ',' << format_double(v.cutoffs.gamma_b) << ',' << format_double(v.cutoffs.eta_c)
      << ',' << format_double(v.cutoffs.gamma_c) << ',' << format_double(rec.final_objective) << ','
      << format_double(rec.final_magnitude) << ',' << rec.winning_start << '\n';
  detail::require(static_cast<bool>(out), "write_verdict: write failed for " + path.string());
}

/// Reads the `divergent` flag back from a verdict file.
inline bool read_verdict_divergent(const std::filesystem::path& path)
{
  std::ifstream in(path);
  std::string header, row;
  detail::require(std::getline(in, header) && std::getline(in, row), "read_verdict: malformed " + path.string());
  const auto cells = split_csv_line(row);
  detail::require(!cells.empty(), "read_verdict: empty row in " + path.string());
  return parse_int(cells[0]) != 0;
}

inline void write_summary(std::span<const SettingSummary> settings, const std::filesystem::path& path)
{
  std::ofstream out(path);
  detail::require(static_cast<bool>(out), "write_summary: cannot open " + path.string());
  out << kSummaryHeader << '\n';
  for (const auto& s : settings) {
    const auto& k = s.key;
    out << to_string(k.synth_case) << ',' << k.n << ',' << k.p0 << ',' << k.rank << ',' << k.true_rank << ','
        << k.method.name() << ',' << k.tuning() << ',' << s.completed << ',' << s.divergent_count << '\n';
  }
  detail::require(static_cast<bool>(out), "write_summary: write failed for " + path.string());
}

inline Method parse_method(const std::string& name, double tuning)
{
  if (name == "ls") return Method::least_squares();
  if (name == "cp_ridge") return Method::cp_ridge(tuning);
  if (name == "tensor_ridge") return Method::tensor_ridge(tuning);
  throw Error("unknown method '" + name + "'");
}

inline std::vector<SettingSummary> read_summary(const std::filesystem::path& path)
{
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "read_summary: cannot open " + path.string());
  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)), "read_summary: empty file " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  detail::require(line == kSummaryHeader, "read_summary: unexpected header in " + path.string());
  std::vector<SettingSummary> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto c = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    detail::require(c.size() == 9, where + "expected 9 columns");
    try {
      SettingSummary s;
      s.key.synth_case = parse_synth_case(c[0]);
      s.key.n = parse_int(c[1]);
      s.key.p0 = parse_int(c[2]);
      s.key.rank = parse_int(c[3]);
      s.key.true_rank = parse_int(c[4]);
      s.key.method = parse_method(c[5], parse_double(c[6]));
      s.completed = s.attempted = static_cast<int>(parse_int(c[7]));
      s.divergent_count = static_cast<int>(parse_int(c[8]));
      out.push_back(s);
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
  }
  return out;
}

inline void write_replications(const ReplicationSummary& summary, const std::filesystem::path& path)
{
  std::ofstream out(path);
  detail::require(static_cast<bool>(out), "write_replications: cannot open " + path.string());
  out << "setting,replication,status,divergent,branch,a_hat,b_hat,c_hat,final_objective,final_magnitude,"
         "lambda_min_D_early,lambda_min_D_final,error\n";
  for (const auto& r : summary.records) {
    out << summary.settings[r.setting].key.directory_name() << ',' << r.replication << ','
        << (r.completed ? "ok" : "failed") << ',' << (r.verdict.divergent ? 1 : 0) << ','
        << to_string(r.verdict.branch) << ',' << format_double(r.verdict.a_hat) << ','
        << format_double(r.verdict.b_hat) << ',' << format_double(r.verdict.c_hat) << ','
        << format_double(r.final_objective) << ',' << format_double(r.final_magnitude) << ','
        << format_double(r.early.lambda_min_D) << ',' << format_double(r.final.lambda_min_D) << ',';
    std::string msg = r.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out << msg << '\n';
  }
}

namespace detail {

inline EigenDiagnostics safe_diagnostics(const CpFactors& f)
{
  try {
    return eigen_diagnostics(f);
  } catch (const Error&) {
    EigenDiagnostics d;
    d.magnitude = magnitude(f);
    return d;
  }
}

}  // namespace detail

inline ReplicationSummary run_experiment(const ExperimentConfig& config, const FitObserver& observer = {})
{
  config.validate();
  const std::size_t nfits = config.fits.size();
  const auto reps = static_cast<std::size_t>(config.replications);

  ReplicationSummary summary;
  for (const auto& f : config.fits) {
    SettingSummary s;
    s.key = {config.synth.synth_case, config.synth.n, config.synth.p0, f.rank, kTrueRank, f.method};
    summary.settings.push_back(s);
  }
  summary.records.resize(reps * nfits);

  const bool write = !config.output_dir.empty();
  if (write) std::filesystem::create_directories(config.output_dir);

  std::mutex observer_mutex;
  auto run_replication = [&](std::size_t k) {
    const std::uint64_t seed = config.synth.seed + k;
    std::optional<SynthOutput> synth;
    std::string synth_error;
    try {
      SynthSpec spec = config.synth;
      spec.seed = seed;
      synth.emplace(generate_case(spec));
    } catch (const std::exception& e) {
      synth_error = std::string("data generation: ") + e.what();
    }

    for (std::size_t f = 0; f < nfits; ++f) {
      ReplicationRecord& rec = summary.records[k * nfits + f];
      rec.setting = f;
      rec.replication = static_cast<int>(k);
      if (!synth) {
        rec.error = synth_error;
        continue;
      }
      try {
        FitConfig fc = config.fits[f];
        fc.seed = seed;
        const Iteration total = fc.max_iterations;
        rec.early_iteration = std::max<Iteration>(1, total / 10);
        fc.snapshot_iterations.push_back(rec.early_iteration);
        fc.snapshot_iterations.push_back(total);

        const FitTrace trace = fit_multi_start(synth->dataset, fc);
        rec.final_objective = trace.final_objective;
        rec.final_magnitude = magnitude(trace.final_factors);
        rec.winning_start = trace.winning_start;
        rec.verdict = classify_divergence(magnitude_curve(trace), total, config.cutoffs);
        rec.early = detail::safe_diagnostics(trace.snapshots.at(rec.early_iteration));
        rec.final = detail::safe_diagnostics(trace.final_factors);

        if (write) {
          const auto dir = config.output_dir / summary.settings[f].key.directory_name() / ("rep_" + std::to_string(k));
          std::filesystem::create_directories(dir);
          emit_trace(trace, dir / "trace.csv");
          write_verdict(rec, dir / "verdict.csv");
        }
        rec.completed = true;
        if (observer) {
          std::lock_guard lock(observer_mutex);
          observer({f, static_cast<int>(k), *synth, fc, trace, rec});
        }
      } catch (const std::exception& e) {
        rec.completed = false;
        rec.error = e.what();
      }
    }
  };

  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config.workers), reps);
  if (workers <= 1) {
    for (std::size_t k = 0; k < reps; ++k) run_replication(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < reps; k = next++) run_replication(k);
      });
  }

  for (const auto& r : summary.records) {
    auto& s = summary.settings[r.setting];
    ++s.attempted;
    if (r.completed) {
      ++s.completed;
      if (r.verdict.divergent) ++s.divergent_count;
    }
  }

  if (write) {
    write_summary(summary.settings, config.output_dir / "summary.csv");
    write_replications(summary, config.output_dir / "replications.csv");
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Table rendering

/// Grid with one row per (case, (n, p0), (R, R0)) and one column per method/tuning.
inline std::string render_table(std::span<const SettingSummary> settings)
{
  using RowKey = std::tuple<int, Eigen::Index, Eigen::Index, Eigen::Index, Eigen::Index>;
  using ColKey = std::pair<int, double>;
  std::map<RowKey, std::map<ColKey, int>> cells;
  std::map<ColKey, std::string> columns;
  for (const auto& s : settings) {
    const auto& k = s.key;
    const RowKey row{static_cast<int>(k.synth_case), k.n, k.p0, k.rank, k.true_rank};
    const ColKey col{static_cast<int>(k.method.penalty), k.method.penalty == Penalty::none ? 0.0 : k.method.weight};
    std::string label = "LS";
    if (k.method.penalty == Penalty::cp_ridge) label = "lambda=" + k.tuning();
    if (k.method.penalty == Penalty::tensor_ridge) label = "alpha=" + k.tuning();
    columns[col] = label;
    cells[row][col] += s.divergent_count;
  }

  std::vector<std::string> header = {"case", "(n, p0)", "(R, R0)"};
  for (const auto& [col, label] : columns) header.push_back(label);
  std::vector<std::vector<std::string>> rows;
  for (const auto& [row, values] : cells) {
    const auto& [c, n, p0, r, r0] = row;
    std::vector<std::string> line = {"Case " + to_string(static_cast<SynthCase>(c)),
                                     "(" + std::to_string(n) + ", " + std::to_string(p0) + ")",
                                     "(" + std::to_string(r) + ", " + std::to_string(r0) + ")"};
    for (const auto& [col, label] : columns) {
      auto it = values.find(col);
      line.push_back(it == values.end() ? "-" : std::to_string(it->second));
    }
    rows.push_back(std::move(line));
  }

  std::vector<std::size_t> width(header.size());
  for (std::size_t j = 0; j < header.size(); ++j) {
    width[j] = header[j].size();
    for (const auto& r : rows) width[j] = std::max(width[j], r[j].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) out << " | ";
      out << std::string(width[j] - r[j].size(), ' ') << r[j];
    }
    out << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 3 * (width.size() - 1), '-') << '\n';
  for (const auto& r : rows) emit(r);
  return out.str();
}

}  // namespace cpreg
