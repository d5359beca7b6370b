// cpreg_cli: run degeneracy experiments, render count tables, classify stored
// traces, and emit simulated datasets.
//
//   cpreg_cli run      --config exp.ini [--out DIR] [--profile desk|paper] [--seed N] [--cutoffs gb,ec,gc]
//   cpreg_cli table    [SUMMARY|DIR ...] [--out DIR] [--write merged.csv]
//   cpreg_cli diagnose TRACE [--iterations T] [--cutoffs gb,ec,gc]
//   cpreg_cli synth    --out data.csv [--config exp.ini] [--case 1a] [--n 200] [--p0 5] [--snr 4] [--seed N]

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cpreg/config.hpp"
#include "cpreg/experiment.hpp"

namespace fs = std::filesystem;
using namespace cpreg;

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string cutoffs;
};

ConfigOverrides overrides_from(const CommonFlags& f)
{
  ConfigOverrides o;
  if (!f.profile.empty()) o.profile = parse_profile(f.profile);
  o.seed = f.seed;
  if (!f.cutoffs.empty()) o.cutoffs = parse_cutoffs(f.cutoffs);
  if (!f.out.empty()) o.output_dir = f.out;
  return o;
}

std::string describe(const FitConfig& fc)
{
  std::string s = "R=" + std::to_string(fc.rank) + " " + fc.method.name();
  if (fc.method.penalty != Penalty::none) s += "=" + format_double(fc.method.weight);
  return s;
}

int cmd_run(const CommonFlags& flags, int workers)
{
  auto overrides = overrides_from(flags);
  if (workers > 0) overrides.workers = workers;
  ExperimentConfig cfg = load_experiment_config(flags.config, overrides);
  if (cfg.output_dir.empty()) throw Error("run: no output directory (use --out or [experiment] output)");

  std::cerr << "case " << to_string(cfg.synth.synth_case) << ", n=" << cfg.synth.n << ", p0=" << cfg.synth.p0
            << ", T=" << cfg.fits.front().max_iterations << ", " << cfg.replications << " replications, "
            << cfg.fits.size() << " fit settings, " << cfg.workers << " worker(s)\n";

  const auto summary = run_experiment(cfg, [](const FitObservation& obs) {
    const auto& v = obs.record.verdict;
    std::cerr << "  rep " << obs.replication << "  " << describe(obs.config) << "  "
              << (v.divergent ? "divergent" : "non-divergent") << " (" << to_string(v.branch) << ")  M(T)="
              << format_double(obs.record.final_magnitude) << "\n";
  });

  int failed = 0;
  for (const auto& r : summary.records)
    if (!r.completed) {
      ++failed;
      std::cerr << "  rep " << r.replication << "  " << describe(cfg.fits[r.setting]) << "  FAILED: " << r.error
                << "\n";
    }
  std::cout << render_table(summary.settings);
  std::cout << "summary: " << (cfg.output_dir / "summary.csv").string() << "\n";
  if (failed) std::cerr << failed << " fit(s) failed; see replications.csv\n";
  return failed ? 1 : 0;
}

/// Sums counts of identical settings across summary files.
std::vector<SettingSummary> merge_summaries(const std::vector<fs::path>& paths)
{
  std::vector<SettingSummary> merged;
  for (const auto& p : paths)
    for (const auto& s : read_summary(p)) {
      auto it = std::find_if(merged.begin(), merged.end(), [&](const SettingSummary& m) { return m.key == s.key; });
      if (it == merged.end()) {
        merged.push_back(s);
      } else {
        it->attempted += s.attempted;
        it->completed += s.completed;
        it->divergent_count += s.divergent_count;
      }
    }
  return merged;
}

int cmd_table(const std::vector<std::string>& inputs, const std::string& out, const std::string& write)
{
  std::vector<fs::path> paths;
  auto add = [&](const fs::path& p) {
    if (fs::is_directory(p)) {
      if (!fs::exists(p / "summary.csv")) throw Error("table: missing results, no summary.csv in " + p.string());
      paths.push_back(p / "summary.csv");
    } else {
      if (!fs::exists(p)) throw Error("table: missing results, " + p.string() + " does not exist");
      paths.push_back(p);
    }
  };
  for (const auto& s : inputs) add(s);
  if (inputs.empty()) {
    if (out.empty()) throw Error("table: give summary files or --out DIR");
    add(out);
  }
  const auto merged = merge_summaries(paths);
  std::cout << render_table(merged);
  if (!write.empty()) {
    write_summary(merged, write);
    std::cout << "summary: " << write << "\n";
  }
  return 0;
}

int cmd_diagnose(const std::string& trace_path, Iteration iterations, const std::string& cutoffs)
{
  const FitTrace trace = read_trace(trace_path);
  const Iteration total = iterations > 0 ? iterations : trace.iterations.back();
  const Cutoffs cut = cutoffs.empty() ? Cutoffs{} : parse_cutoffs(cutoffs);
  const auto v = classify_divergence(magnitude_curve(trace), total, cut);

  std::cout << "verdict: ";
  if (v.divergent)
    std::cout << "divergent\n";
  else if (v.shortcut_nondivergent)
    std::cout << "non-divergent (shortcut)\n";
  else
    std::cout << "non-divergent\n";
  std::cout << "T: " << total << "\n"
            << "a_hat: " << format_double(v.a_hat) << "\n"
            << "b_hat: " << format_double(v.b_hat) << "\n"
            << "c_hat: " << format_double(v.c_hat) << "\n"
            << "sse: " << format_double(v.sse) << "\n"
            << "branch: " << to_string(v.branch) << (v.constant_model ? " (constant slope model)" : "") << "\n"
            << "cutoffs: " << format_double(cut.gamma_b) << "," << format_double(cut.eta_c) << ","
            << format_double(cut.gamma_c) << "\n";
  return 0;
}

struct SynthFlags {
  std::string synth_case;
  std::optional<std::int64_t> n, p0;
  std::optional<double> snr;
};

int cmd_synth(const CommonFlags& flags, const SynthFlags& sf)
{
  SynthSpec spec;
  spec.seed = 1;
  if (!flags.config.empty()) spec = load_experiment_config(flags.config).synth;
  if (flags.seed) spec.seed = *flags.seed;
  if (!sf.synth_case.empty()) spec.synth_case = parse_synth_case(sf.synth_case);
  if (sf.n) spec.n = *sf.n;
  if (sf.p0) spec.p0 = *sf.p0;
  if (sf.snr) spec.snr = *sf.snr;

  const auto out = generate_case(spec);
  write_dataset_csv(out.dataset, flags.out);
  std::cout << "case " << to_string(spec.synth_case) << ", n=" << spec.n << ", p0=" << spec.p0
            << ", seed=" << spec.seed;
  if (is_noisy_case(spec.synth_case)) std::cout << ", sigma=" << format_double(out.sigma);
  std::cout << "\nwrote " << flags.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"CP low-rank tensor regression: degeneracy experiments"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  int workers = 0;
  auto* run = app.add_subcommand("run", "Run a full experiment from a config file");
  run->add_option("--config", run_flags.config, "Experiment config (INI)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", run_flags.out, "Output directory");
  run->add_option("--profile", run_flags.profile, "desk (T=20000, 10 reps) or paper (T=100000, 50 reps)")
      ->check(CLI::IsMember({"desk", "paper"}));
  run->add_option("--seed", run_flags.seed, "Base seed; replication k uses seed + k");
  run->add_option("--cutoffs", run_flags.cutoffs, "Classifier cutoffs gamma_b,eta_c,gamma_c");
  run->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  std::vector<std::string> table_inputs;
  std::string table_out, table_write;
  auto* table = app.add_subcommand("table", "Render divergent counts from summary files");
  table->add_option("inputs", table_inputs, "summary.csv files or run directories");
  table->add_option("--out", table_out, "Run directory holding summary.csv");
  table->add_option("--write", table_write, "Write the merged summary here");

  std::string trace_path, diag_cutoffs;
  Iteration diag_iterations = 0;
  auto* diagnose = app.add_subcommand("diagnose", "Classify a stored trace");
  diagnose->add_option("trace", trace_path, "trace.csv")->required()->check(CLI::ExistingFile);
  diagnose->add_option("--iterations", diag_iterations, "T (default: last recorded iteration)");
  diagnose->add_option("--cutoffs", diag_cutoffs, "Classifier cutoffs gamma_b,eta_c,gamma_c");

  CommonFlags synth_flags;
  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "Write a simulated dataset as CSV");
  synth->add_option("--out", synth_flags.out, "Dataset file")->required();
  synth->add_option("--config", synth_flags.config, "Take [synth] and seed from a config")
      ->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_flags.seed, "Seed");
  synth->add_option("--case", sf.synth_case, "1a, 1b, 2a or 2b")->check(CLI::IsMember({"1a", "1b", "2a", "2b"}));
  synth->add_option("--n", sf.n, "Sample size");
  synth->add_option("--p0", sf.p0, "Covariate side length");
  synth->add_option("--snr", sf.snr, "Signal-to-noise ratio (cases 2a, 2b)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_flags, workers);
    if (*table) return cmd_table(table_inputs, table_out, table_write);
    if (*diagnose) return cmd_diagnose(trace_path, diag_iterations, diag_cutoffs);
    if (*synth) return cmd_synth(synth_flags, sf);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
