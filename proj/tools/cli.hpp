#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gpsmatch.hpp"

namespace gpsmatch::cli {

inline constexpr const char* kVersion = "0.1.0";

struct Key {
  std::string name;     // dotted config key
  std::string flag;     // long flag without dashes
  std::string fallback; // default; empty means unset
  std::string help;
  bool boolean = false;
};

inline const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"input", "input", "", "input CSV file"},
      {"schema.exposure", "exposure", "w", "exposure column"},
      {"schema.outcome", "outcome", "y", "outcome column"},
      {"schema.covariates", "covariates", "", "comma-separated covariate columns (default: all others)"},
      {"schema.offset", "offset", "", "offset (person-time) column"},
      {"schema.id", "id", "", "unit id column (default: 'id' when present)"},
      {"gps.learner", "gps", "normal", "GPS learner: normal, poly or boost"},
      {"gps.degree", "degree", "2", "polynomial degree of the GPS mean"},
      {"gps.trees", "trees", "200", "boosting rounds"},
      {"gps.learning_rate", "learning-rate", "0.1", "boosting shrinkage"},
      {"gps.min_leaf", "min-leaf", "10", "minimum units per stump leaf"},
      {"match.lambda", "lambda", "1", "weight on the GPS coordinate"},
      {"match.delta", "delta", "", "caliper (default: rate rule 2.4 * robust sd / sqrt(N))"},
      {"match.metric", "metric", "l1", "matching metric: l1 or l2"},
      {"match.m", "matches", "1", "matches per unit"},
      {"match.gps_caliper", "gps-caliper", "", "optional caliper on the standardized GPS distance"},
      {"tune.enabled", "tune", "false", "select (lambda, delta) by balance before estimating", true},
      {"tune.lambdas", "lambdas", "", "comma-separated lambda candidates"},
      {"tune.deltas", "deltas", "", "comma-separated delta candidates"},
      {"tune.utility", "utility", "corr", "tuning utility: corr or bias"},
      {"estimate.method", "method", "matching", "matching, adjustment, iptw or dr"},
      {"estimate.trim", "trim", "10", "cap on stabilized weights (iptw); 'none' disables"},
      {"estimate.outcome_degree", "outcome-degree", "3", "polynomial degree of outcome models"},
      {"smoother.kernel", "smoother", "epanechnikov", "uniform, epanechnikov or gaussian"},
      {"smoother.bandwidth", "bandwidth", "", "smoothing bandwidth (default: leave-one-out CV)"},
      {"bootstrap.reps", "reps", "200", "bootstrap replicates"},
      {"bootstrap.m", "m", "", "bootstrap subsample size (default: ceil(N^0.8))"},
      {"bootstrap.level", "level", "0.95", "confidence level"},
      {"simulate.scenarios", "scenario", "1", "comma-separated scenarios 1..6"},
      {"simulate.sizes", "n", "1000", "comma-separated sample sizes"},
      {"simulate.reps", "sim-reps", "50", "Monte-Carlo replicates per cell"},
      {"simulate.methods", "methods", "matching,adjustment,iptw,dr", "comma-separated methods"},
      {"simulate.tune", "sim-tune", "false", "tune (lambda, delta) inside each replicate", true},
      {"simulate.full_scale", "full-scale", "false", "all 6 scenarios x N in {200,1000,5000} x 500 replicates, all methods", true},
      {"seed", "seed", "", "random seed (generated and recorded when absent)"},
  };
  return k;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

/// Resolved settings: defaults, then the config file, then flags.
class Settings {
 public:
  void set(const std::string& k, const std::string& v, bool explicit_value) {
    values_[k] = v;
    if (explicit_value) explicit_.insert(k);
  }
  bool has(const std::string& k) const {
    auto it = values_.find(k);
    return it != values_.end() && !it->second.empty();
  }
  bool is_explicit(const std::string& k) const { return explicit_.count(k) > 0; }
  const std::string& str(const std::string& k) const {
    static const std::string empty;
    auto it = values_.find(k);
    return it == values_.end() ? empty : it->second;
  }
  double num(const std::string& k) const {
    const auto& s = str(k);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("setting '" + k + "' expects a number, got '" + s + "'");
    }
  }
  std::size_t count(const std::string& k) const {
    const double v = num(k);
    if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError("setting '" + k + "' expects a nonnegative integer");
    return static_cast<std::size_t>(v);
  }
  bool flag(const std::string& k) const {
    const auto& s = str(k);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0" || s.empty()) return false;
    throw ConfigError("setting '" + k + "' expects true or false");
  }
  std::optional<double> opt_num(const std::string& k) const { return has(k) ? std::optional<double>(num(k)) : std::nullopt; }
  std::vector<double> nums(const std::string& k) const {
    std::vector<double> out;
    for (const auto& item : split_list(str(k))) {
      Settings tmp;
      tmp.set(k, item, false);
      out.push_back(tmp.num(k));
    }
    return out;
  }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

/// Flat dotted keys; a manifest's "settings" object is accepted as well.
inline std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.contains("settings") && j["settings"].is_object()) j = j["settings"];
  if (!j.is_object()) throw ConfigError("config must be a JSON object of dotted keys");
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : j.items()) {
    if (v.is_string()) {
      out[k] = v.get<std::string>();
    } else if (v.is_boolean()) {
      out[k] = v.get<bool>() ? "true" : "false";
    } else if (v.is_number_integer()) {
      out[k] = std::to_string(v.get<long long>());
    } else if (v.is_number()) {
      out[k] = format_double(v.get<double>());
    } else if (v.is_array()) {
      std::string s;
      for (const auto& e : v) {
        if (!s.empty()) s += ',';
        s += e.is_string() ? e.get<std::string>() : (e.is_number_integer() ? std::to_string(e.get<long long>()) : format_double(e.get<double>()));
      }
      out[k] = s;
    } else {
      throw ConfigError("config key '" + k + "' has an unsupported value");
    }
  }
  return out;
}

struct Context {
  std::string command;
  Settings settings;
  std::filesystem::path out_dir;
  std::size_t workers = 1;
  std::vector<std::string> used_keys;
  std::vector<std::string> outputs;
  std::ostream* log = &std::cerr;

  std::ofstream open(const std::string& name) {
    std::filesystem::create_directories(out_dir);
    std::ofstream f(out_dir / name, std::ios::binary);
    if (!f) throw InputError("cannot write '" + (out_dir / name).string() + "'");
    outputs.push_back(name);
    return f;
  }
};

// ---- shared stages ----------------------------------------------------------

inline Schema schema_of(const Settings& s, bool read_outcome) {
  Schema sc;
  sc.exposure = s.str("schema.exposure");
  sc.outcome = read_outcome ? s.str("schema.outcome") : "";
  if (!read_outcome && !s.str("schema.outcome").empty()) sc.ignore.push_back(s.str("schema.outcome"));
  sc.covariates = split_list(s.str("schema.covariates"));
  sc.offset = read_outcome ? s.str("schema.offset") : "";
  if (!read_outcome && !s.str("schema.offset").empty()) sc.ignore.push_back(s.str("schema.offset"));
  sc.id = s.str("schema.id");
  return sc;
}

inline Dataset load_input(const Context& ctx, bool read_outcome) {
  if (!ctx.settings.has("input")) throw ConfigError("--input is required");
  Dataset d = load_dataset(ctx.settings.str("input"), schema_of(ctx.settings, read_outcome));
  *ctx.log << "loaded " << d.size() << " units, " << d.num_covariates() << " covariates, exposure range ["
           << format_double(d.design().min_exposure()) << ", " << format_double(d.design().max_exposure()) << "]\n";
  return d;
}

inline GpsConfig gps_config(const Settings& s) {
  GpsConfig g;
  g.learner.kind = gps_learner_from_name(s.str("gps.learner"));
  g.learner.degree = static_cast<int>(s.count("gps.degree"));
  g.learner.trees = static_cast<int>(s.count("gps.trees"));
  g.learner.learning_rate = s.num("gps.learning_rate");
  g.learner.min_leaf = static_cast<int>(s.count("gps.min_leaf"));
  return g;
}

inline MatchConfig match_config(const Settings& s, const DesignData& design) {
  MatchConfig m;
  m.lambda = s.num("match.lambda");
  m.delta = s.has("match.delta") ? s.num("match.delta") : default_caliper(design);
  m.metric = metric_from_name(s.str("match.metric"));
  m.matches_per_unit = s.count("match.m");
  m.max_gps_distance = s.opt_num("match.gps_caliper");
  m.validate();
  return m;
}

inline TuningGrid tuning_grid(const Settings& s, const DesignData& design) {
  TuningGrid g = TuningGrid::defaults(design);
  if (s.has("tune.lambdas")) g.lambdas = s.nums("tune.lambdas");
  if (s.has("tune.deltas")) g.deltas = s.nums("tune.deltas");
  g.utility = utility_from_name(s.str("tune.utility"));
  return g;
}

inline std::uint64_t resolve_seed(Context& ctx) {
  if (!ctx.settings.has("seed")) {
    std::random_device rd;
    const std::uint64_t seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    ctx.settings.set("seed", std::to_string(seed), false);
    *ctx.log << "generated seed " << seed << "\n";
  }
  const auto& s = ctx.settings.str("seed");
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("seed must be a nonnegative 64-bit integer");
  }
}

/// Design stage: GPS, optional tuning, matching and balance artifacts.
struct Design {
  GpsModel gps;
  GpsSurface surface;
  MatchConfig match;
  ExposureGrid grid;
  MatchedSet matched;
};

inline Design run_design(Context& ctx, const DesignData& design) {
  const auto& s = ctx.settings;
  GpsModel model = fit_gps(design, gps_config(s));
  GpsSurface surface = gps_surface(model, design);
  MatchConfig mc = match_config(s, design);
  if (s.flag("tune.enabled")) {
    const auto t = tune(design, surface, tuning_grid(s, design), mc.metric, ctx.workers, mc.matches_per_unit);
    auto f = ctx.open("tuning.csv");
    write_tuning_csv(f, t);
    mc.lambda = t.lambda;
    mc.delta = t.delta;
    *ctx.log << "tuned lambda " << format_double(t.lambda) << ", delta " << format_double(t.delta) << "\n";
  }
  ExposureGrid grid = make_grid(design, mc.delta);
  MatchedSet ms = build_matched_set(design, surface, grid, mc, ctx.workers);
  const auto report = balance_report(design, ms);
  {
    auto f = ctx.open("balance.json");
    f << to_json(report).dump(2) << '\n';
  }
  {
    auto f = ctx.open("balance_pre_post.csv");
    write_balance_csv(f, report);
  }
  return Design{std::move(model), std::move(surface), mc, std::move(grid), std::move(ms)};
}

inline double bandwidth_for(const Settings& s, const ErfEstimate& e, const DesignData& design, double delta) {
  if (s.has("smoother.bandwidth")) return s.num("smoother.bandwidth");
  const auto cands = default_bandwidths(delta, design.max_exposure() - design.min_exposure());
  const auto [lo, hi] = exposure_quantiles(design, 0.05, 0.95);
  return select_erf_bandwidth(e, kernel_from_name(s.str("smoother.kernel")), cands, lo, hi);
}

inline ErfEstimate matching_curve(Context& ctx, const Dataset& data, const Design& d) {
  const auto& s = ctx.settings;
  ErfEstimate e = matching_estimate(d.matched, data.outcomes());
  const Kernel k = kernel_from_name(s.str("smoother.kernel"));
  smooth_erf(e, k, bandwidth_for(s, e, data.design(), d.match.delta));
  e.variance = plug_in_variance(d.matched, data, d.surface).point_variance;
  return e;
}

inline ErfEstimate comparator_curve(Context& ctx, const Dataset& data, const Design& d, Method method) {
  const auto& s = ctx.settings;
  OutcomeModelConfig oc;
  oc.learner.degree = static_cast<int>(s.count("estimate.outcome_degree"));
  const Kernel k = kernel_from_name(s.str("smoother.kernel"));
  switch (method) {
    case Method::adjustment: return adjustment_estimate(data, d.gps, d.grid, oc);
    case Method::iptw: {
      IptwConfig ic;
      ic.trim_cap = s.str("estimate.trim") == "none" ? std::numeric_limits<double>::infinity() : s.num("estimate.trim");
      return iptw_estimate(data, d.gps, d.grid, ic);
    }
    case Method::dr: {
      DrConfig dc;
      dc.outcome = oc;
      dc.kernel = k;
      dc.bandwidth = s.opt_num("smoother.bandwidth");
      if (s.is_explicit("estimate.trim") && s.str("estimate.trim") != "none") dc.trim_cap = s.num("estimate.trim");
      return dr_estimate(data, d.gps, d.grid, dc);
    }
    case Method::matching: break;
  }
  return matching_curve(ctx, data, d);
}

inline void write_manifest(Context& ctx) {
  nlohmann::json m;
  m["tool"] = "gpsmatch";
  m["version"] = kVersion;
  m["command"] = ctx.command;
  nlohmann::json settings = nlohmann::json::object();
  for (const auto& k : ctx.used_keys) {
    if (ctx.settings.has(k)) settings[k] = ctx.settings.str(k);
  }
  m["settings"] = settings;
  m["outputs"] = ctx.outputs;
  auto f = ctx.open("manifest.json");
  f << m.dump(2) << '\n';
}

// ---- subcommands ------------------------------------------------------------

inline void cmd_estimate(Context& ctx) {
  const Dataset data = load_input(ctx, true);
  const Method method = method_from_name(ctx.settings.str("estimate.method"));
  Design d = run_design(ctx, data.design());
  ErfEstimate e = method == Method::matching ? matching_curve(ctx, data, d) : comparator_curve(ctx, data, d, method);
  {
    auto f = ctx.open("erf.csv");
    write_erf_csv(f, e);
  }
  if (data.has_offsets() && method == Method::matching) {
    const auto p = poisson_rate_fit(d.matched, data);
    nlohmann::json j{{"intercept", p.intercept}, {"slope", p.slope}, {"rate_ratio_per_10", p.rate_ratio_per_10},
                     {"iterations", p.iterations}};
    auto f = ctx.open("poisson.json");
    f << j.dump(2) << '\n';
  }
}

inline void cmd_balance(Context& ctx) {
  const Dataset data = load_input(ctx, false);
  const auto& design = data.design();
  const bool matched = ctx.settings.is_explicit("match.lambda") || ctx.settings.flag("tune.enabled");
  if (matched) {
    run_design(ctx, design);
    return;
  }
  const double delta = ctx.settings.has("match.delta") ? ctx.settings.num("match.delta") : default_caliper(design);
  const auto report = balance_report(design, make_grid(design, delta));
  {
    auto f = ctx.open("balance.json");
    f << to_json(report).dump(2) << '\n';
  }
  auto f = ctx.open("balance_pre_post.csv");
  write_balance_csv(f, report);
}

inline void cmd_tune(Context& ctx) {
  const Dataset data = load_input(ctx, false);
  const auto& s = ctx.settings;
  const auto model = fit_gps(data.design(), gps_config(s));
  const auto surface = gps_surface(model, data.design());
  const auto t = tune(data.design(), surface, tuning_grid(s, data.design()), metric_from_name(s.str("match.metric")),
                      ctx.workers, s.count("match.m"));
  auto f = ctx.open("tuning.csv");
  write_tuning_csv(f, t);
  *ctx.log << "selected lambda " << format_double(t.lambda) << ", delta " << format_double(t.delta) << ", utility "
           << format_double(t.utility) << "\n";
}

inline void cmd_bootstrap(Context& ctx) {
  const Dataset data = load_input(ctx, true);
  const auto& s = ctx.settings;
  const std::uint64_t seed = resolve_seed(ctx);
  Design d = run_design(ctx, data.design());
  PipelineConfig pc;
  pc.gps = gps_config(s);
  pc.match = d.match;
  pc.kernel = kernel_from_name(s.str("smoother.kernel"));
  pc.workers = ctx.workers;
  ErfEstimate e = matching_curve(ctx, data, d);
  PipelineResult full{d.gps, d.surface, d.grid, d.matched, e};
  BootstrapConfig bc;
  bc.replicates = s.count("bootstrap.reps");
  bc.m = s.has("bootstrap.m") ? s.count("bootstrap.m") : 0;
  bc.level = s.num("bootstrap.level");
  bc.seed = seed;
  if (s.has("smoother.bandwidth")) {
    pc.bandwidth = e.bandwidth;
    bc.refit_bandwidth = false;
  }
  const auto band = bootstrap_band(data, full, pc, bc);
  attach_band(e, band);
  auto f = ctx.open("erf.csv");
  write_erf_csv(f, e);
}

inline void cmd_simulate(Context& ctx) {
  const auto& s = ctx.settings;
  BenchmarkConfig bc;
  bc.seed = resolve_seed(ctx);
  if (s.flag("simulate.full_scale")) {
    bc.scenarios = {1, 2, 3, 4, 5, 6};
    bc.sizes = {200, 1000, 5000};
    bc.replicates = 500;
    bc.methods = all_sim_methods();
  } else {
    bc.scenarios.clear();
    for (double v : s.nums("simulate.scenarios")) bc.scenarios.push_back(static_cast<int>(v));
    bc.sizes.clear();
    for (double v : s.nums("simulate.sizes")) {
      if (!(v >= 2.0) || v != std::floor(v)) throw ConfigError("sample sizes must be integers");
      bc.sizes.push_back(static_cast<std::size_t>(v));
    }
    bc.replicates = s.count("simulate.reps");
    bc.methods.clear();
    const auto names = split_list(s.str("simulate.methods"));
    if (std::find(names.begin(), names.end(), "all") != names.end()) {
      bc.methods = all_sim_methods();
    } else {
      for (const auto& name : names) bc.methods.push_back(sim_method_from_name(name));
    }
    if (bc.methods.empty()) throw ConfigError("no simulation methods selected");
  }
  for (int sc : bc.scenarios) Scenario{sc, 50}.validate();
  for (auto n : bc.sizes) Scenario{1, n}.validate();
  bc.gps = gps_config(s);
  bc.lambda = s.num("match.lambda");
  bc.delta = s.opt_num("match.delta");
  bc.metric = metric_from_name(s.str("match.metric"));
  bc.kernel = kernel_from_name(s.str("smoother.kernel"));
  bc.tune = s.flag("simulate.tune");
  if (s.str("estimate.trim") != "none") bc.trim_cap = s.num("estimate.trim");
  bc.workers = ctx.workers;
  const auto rows = run_benchmark(bc);
  auto f = ctx.open("simreport.csv");
  write_simreport_csv(f, rows);
}

inline const std::map<std::string, std::vector<std::string>>& command_keys() {
  static const std::vector<std::string> input = {"input", "schema.exposure", "schema.outcome", "schema.covariates",
                                                 "schema.offset", "schema.id"};
  static const std::vector<std::string> gps = {"gps.learner", "gps.degree", "gps.trees", "gps.learning_rate", "gps.min_leaf"};
  static const std::vector<std::string> match = {"match.lambda", "match.delta", "match.metric", "match.m", "match.gps_caliper"};
  static const std::vector<std::string> tunek = {"tune.enabled", "tune.lambdas", "tune.deltas", "tune.utility"};
  auto cat = [](std::initializer_list<std::vector<std::string>> parts) {
    std::vector<std::string> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  };
  static const std::map<std::string, std::vector<std::string>> m = {
      {"estimate", cat({input, gps, match, tunek,
                        {"estimate.method", "estimate.trim", "estimate.outcome_degree", "smoother.kernel", "smoother.bandwidth"}})},
      {"balance", cat({input, gps, match, tunek})},
      {"tune", cat({input, gps, {"match.metric", "match.m"}, {"tune.lambdas", "tune.deltas", "tune.utility"}})},
      {"bootstrap", cat({input, gps, match, tunek,
                         {"smoother.kernel", "smoother.bandwidth", "bootstrap.reps", "bootstrap.m", "bootstrap.level", "seed"}})},
      {"simulate", cat({gps, {"match.lambda", "match.delta", "match.metric", "smoother.kernel", "estimate.trim", "simulate.scenarios",
                              "simulate.sizes", "simulate.reps", "simulate.methods", "simulate.tune", "simulate.full_scale", "seed"}})},
  };
  return m;
}

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::numerical: return 4;
  }
  return 1;
}

/// Parses arguments and runs one subcommand. Returns the process exit status.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cerr) {
  CLI::App app{"Generalized propensity score caliper matching for continuous exposures"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  struct Bound {
    std::string value;
    CLI::Option* opt = nullptr;
  };
  std::map<std::string, std::map<std::string, Bound>> bound;
  std::map<std::string, std::string> config_path, out_path;
  std::map<std::string, std::size_t> workers;
  const std::map<std::string, std::string> descriptions = {
      {"estimate", "estimate the exposure-response curve"},
      {"balance", "covariate balance before (and optionally after) matching"},
      {"tune", "select (lambda, delta) by covariate balance"},
      {"simulate", "Monte-Carlo benchmark of the estimators"},
      {"bootstrap", "m-out-of-n bootstrap bands for the matching curve"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, used] : command_keys()) {
    CLI::App* sub = app.add_subcommand(name, descriptions.at(name));
    subs[name] = sub;
    sub->add_option("--config", config_path[name], "JSON file of dotted keys (or a manifest.json)");
    sub->add_option("--out", out_path[name], "output directory")->default_str(".");
    workers[name] = default_workers();
    sub->add_option("--workers", workers[name], "worker threads")->check(CLI::PositiveNumber);
    for (const auto& key : keys()) {
      if (std::find(used.begin(), used.end(), key.name) == used.end()) continue;
      auto& b = bound[name][key.name];
      if (key.boolean) {
        b.opt = sub->add_flag("--" + key.flag, b.value, key.help);
      } else {
        b.opt = sub->add_option("--" + key.flag, b.value, key.help);
        if (!key.fallback.empty()) b.opt->default_str(key.fallback);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  Context ctx;
  ctx.command = command;
  ctx.log = &log;
  ctx.used_keys = command_keys().at(command);
  try {
    std::map<std::string, std::string> cfg;
    if (!config_path[command].empty()) cfg = read_config(config_path[command]);
    for (const auto& [k, v] : cfg) {
      if (std::none_of(keys().begin(), keys().end(), [&](const Key& key) { return key.name == k; })) {
        throw ConfigError("unknown config key '" + k + "'");
      }
    }
    for (const auto& key : keys()) {
      if (std::find(ctx.used_keys.begin(), ctx.used_keys.end(), key.name) == ctx.used_keys.end()) continue;
      const auto& b = bound[command][key.name];
      if (b.opt && b.opt->count() > 0) {
        ctx.settings.set(key.name, key.boolean ? "true" : b.value, true);
      } else if (auto it = cfg.find(key.name); it != cfg.end()) {
        ctx.settings.set(key.name, it->second, true);
      } else {
        ctx.settings.set(key.name, key.fallback, false);
      }
    }
    ctx.out_dir = out_path[command].empty() ? std::filesystem::path(".") : std::filesystem::path(out_path[command]);
    ctx.workers = workers[command];

    if (command == "estimate") cmd_estimate(ctx);
    if (command == "balance") cmd_balance(ctx);
    if (command == "tune") cmd_tune(ctx);
    if (command == "bootstrap") cmd_bootstrap(ctx);
    if (command == "simulate") cmd_simulate(ctx);
    write_manifest(ctx);
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    log << "error: " << e.what() << '\n';
    return 2;
  }
  for (const auto& o : ctx.outputs) log << "wrote " << (ctx.out_dir / o).string() << '\n';
  return 0;
}

}  // namespace gpsmatch::cli
