#pragma once

// Experiment configuration files (INI syntax):
//
//   [experiment]
//   replications = 10          ; profile default when absent
//   seed = 1
//   workers = 1
//   profile = desk             ; desk | paper
//   output = out/case1a        ; run directory
//
//   [synth]
//   case = 1a                  ; 1a | 1b | 2a | 2b
//   n = 200
//   p0 = 5
//   snr = 4
//
//   [fit]
//   ranks = 2, 3
//   methods = ls, cp_ridge:0.001, cp_ridge:0.01, cp_ridge:0.1, tensor_ridge:0.01
//   iterations = 20000         ; profile default when absent
//   starts = 5
//   trace_stride = 20          ; defaults to the classifier spacing T/1000
//   diagnostics = false        ; record lambda_min(D^T D) in every trace row
//
//   [classifier]
//   cutoffs = -0.5, 0, 0.0015  ; gamma_b, eta_c, gamma_c
//
// Every fit setting is the cross product of ranks and methods.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cpreg/experiment.hpp"

namespace cpreg {

enum class Profile { desk, paper };

struct ProfileDefaults {
  Iteration iterations;
  int replications;
};

inline ProfileDefaults profile_defaults(Profile p)
{
  return p == Profile::paper ? ProfileDefaults{100000, 50} : ProfileDefaults{20000, 10};
}

inline Profile parse_profile(const std::string& s)
{
  if (s == "desk") return Profile::desk;
  if (s == "paper") return Profile::paper;
  throw Error("unknown profile '" + s + "' (expected desk or paper)");
}

inline std::string trim(std::string s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',')
{
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline Cutoffs parse_cutoffs(const std::string& s)
{
  const auto parts = split_list(s);
  detail::require(parts.size() == 3, "cutoffs: expected three values gamma_b,eta_c,gamma_c");
  Cutoffs c{parse_double(parts[0]), parse_double(parts[1]), parse_double(parts[2])};
  detail::require(c.gamma_b > -1.0, "cutoffs: gamma_b must exceed -1");
  detail::require(c.eta_c >= 0.0 && c.gamma_c > 0.0, "cutoffs: eta_c must be >= 0 and gamma_c > 0");
  return c;
}

/// "ls", "cp_ridge:0.1", "tensor_ridge:0.01".
inline Method parse_method_spec(const std::string& s)
{
  const auto colon = s.find(':');
  const std::string name = trim(s.substr(0, colon));
  if (name == "ls") {
    detail::require(colon == std::string::npos, "method 'ls' takes no tuning value");
    return Method::least_squares();
  }
  detail::require(colon != std::string::npos, "method '" + name + "' needs a tuning value, e.g. " + name + ":0.1");
  return parse_method(name, parse_double(trim(s.substr(colon + 1))));
}

/// Command-line overrides; they take precedence over the file.
struct ConfigOverrides {
  std::optional<Profile> profile;
  std::optional<std::uint64_t> seed;
  std::optional<Cutoffs> cutoffs;
  std::optional<std::string> output_dir;
  std::optional<int> workers;
};

inline ExperimentConfig experiment_config_from_tree(const boost::property_tree::ptree& tree,
                                                    const ConfigOverrides& overrides = {})
{
  namespace pt = boost::property_tree;
  auto get = [&](const std::string& path) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(path, '.'))) return trim(*v);
    return std::nullopt;
  };
  auto field = [&](const std::string& path, auto parse) {
    try {
      return parse(*get(path));
    } catch (const std::exception& e) {
      throw Error(path + ": " + e.what());
    }
  };
  auto int_field = [&](const std::string& path, std::int64_t fallback, std::int64_t min) {
    if (!get(path)) return fallback;
    const auto v = field(path, [](const std::string& s) { return parse_int(s); });
    if (v < min) throw Error(path + ": must be at least " + std::to_string(min));
    return v;
  };

  for (const auto& [section, body] : tree) {
    static const std::vector<std::string> known = {"experiment", "synth", "fit", "classifier"};
    detail::require(std::find(known.begin(), known.end(), section) != known.end(),
                    "unknown config section [" + section + "]");
  }

  Profile profile = Profile::desk;
  if (get("experiment.profile")) profile = field("experiment.profile", parse_profile);
  const bool profile_forced = overrides.profile.has_value();
  if (profile_forced) profile = *overrides.profile;
  const auto defaults = profile_defaults(profile);

  ExperimentConfig cfg;
  cfg.replications = profile_forced ? defaults.replications
                                    : static_cast<int>(int_field("experiment.replications", defaults.replications, 1));
  cfg.workers = static_cast<int>(int_field("experiment.workers", 1, 1));
  if (overrides.workers) cfg.workers = *overrides.workers;
  cfg.synth.seed = static_cast<std::uint64_t>(int_field("experiment.seed", 1, 0));
  if (get("experiment.output")) cfg.output_dir = *get("experiment.output");
  if (overrides.seed) cfg.synth.seed = *overrides.seed;

  if (get("synth.case")) cfg.synth.synth_case = field("synth.case", parse_synth_case);
  cfg.synth.n = int_field("synth.n", 200, 2);
  cfg.synth.p0 = int_field("synth.p0", 5, 2);
  if (get("synth.snr"))
    cfg.synth.snr = field("synth.snr", [](const std::string& s) {
      const double v = parse_double(s);
      detail::require(v > 0.0, "must be positive");
      return v;
    });

  const Iteration iterations =
      profile_forced ? defaults.iterations : int_field("fit.iterations", defaults.iterations, 2);
  const int starts = static_cast<int>(int_field("fit.starts", 5, 1));
  const Iteration stride_default = iterations % 1000 == 0 ? iterations / 1000 : 1;
  const Iteration stride = int_field("fit.trace_stride", stride_default, 1);
  bool diagnostics = false;
  if (get("fit.diagnostics"))
    diagnostics = field("fit.diagnostics", [](const std::string& s) {
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
      throw Error("expected true or false");
    });

  std::vector<Eigen::Index> ranks = {2};
  if (get("fit.ranks"))
    ranks = field("fit.ranks", [](const std::string& s) {
      std::vector<Eigen::Index> out;
      for (const auto& item : split_list(s)) {
        const auto r = parse_int(item);
        detail::require(r >= 1, "ranks must be positive");
        out.push_back(r);
      }
      detail::require(!out.empty(), "empty rank list");
      return out;
    });

  std::vector<Method> methods = {Method::least_squares()};
  if (get("fit.methods"))
    methods = field("fit.methods", [](const std::string& s) {
      std::vector<Method> out;
      for (const auto& item : split_list(s)) out.push_back(parse_method_spec(item));
      detail::require(!out.empty(), "empty method list");
      return out;
    });

  for (auto r : ranks)
    for (const auto& m : methods) {
      FitConfig fc;
      fc.rank = r;
      fc.method = m;
      fc.max_iterations = iterations;
      fc.num_starts = starts;
      fc.trace_stride = stride;
      fc.record_diagnostics = diagnostics;
      try {
        fc.validate();
      } catch (const Error& e) {
        throw Error(std::string("fit.methods: ") + e.what());
      }
      cfg.fits.push_back(fc);
    }

  if (get("classifier.cutoffs")) cfg.cutoffs = field("classifier.cutoffs", parse_cutoffs);
  if (overrides.cutoffs) cfg.cutoffs = *overrides.cutoffs;
  if (overrides.output_dir) cfg.output_dir = *overrides.output_dir;

  const auto spacing = default_window(iterations).spacing;
  detail::require(spacing % stride == 0, "fit.trace_stride: must divide the classifier spacing T/1000 = " +
                                             std::to_string(spacing));
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path, const ConfigOverrides& overrides = {})
{
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error("config: " + std::string(e.what()));
  }
  return experiment_config_from_tree(tree, overrides);
}

inline ExperimentConfig parse_experiment_config(const std::string& text, const ConfigOverrides& overrides = {})
{
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error("config: " + std::string(e.what()));
  }
  return experiment_config_from_tree(tree, overrides);
}

}  // namespace cpreg
