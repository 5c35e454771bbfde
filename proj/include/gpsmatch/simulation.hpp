#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "gpsmatch/csv.hpp"
#include "gpsmatch/data.hpp"
#include "gpsmatch/error.hpp"
#include "gpsmatch/estimators.hpp"
#include "gpsmatch/gps.hpp"
#include "gpsmatch/inference.hpp"
#include "gpsmatch/parallel.hpp"
#include "gpsmatch/pipeline.hpp"
#include "gpsmatch/tuning.hpp"

namespace gpsmatch {

struct Scenario {
  int gps_dgp = 1;  // 1..6
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  bool c5_two_point = false;  // C5 on {-2, 2} instead of {-2, ..., 2}

  void validate() const {
    if (gps_dgp < 1 || gps_dgp > 6) throw ConfigError("scenario must be 1..6");
    if (n < 50) throw ConfigError("simulated sample size must be at least 50");
  }
};

namespace sim {

inline constexpr double kGpsCoef[6] = {0.1, 0.1, -0.1, 0.2, 0.1, 0.1};
inline constexpr double kOutcomeCoef[6] = {2.0, 2.0, 3.0, -1.0, 2.0, 2.0};

/// Conditional outcome mean.
inline double outcome_mean(double w, const double* c) {
  double lin = 0.0;
  for (int k = 0; k < 6; ++k) lin += kOutcomeCoef[k] * c[k];
  return -10.0 - lin - w * (0.1 - 0.1 * c[0] + 0.1 * c[3] + 0.1 * c[4] + 0.1 * c[2] * c[2]) + 0.0169 * w * w * w;
}

inline void draw_covariates(std::mt19937_64& rng, bool two_point, double* c) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_int_distribution<int> five(-2, 2);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int k = 0; k < 4; ++k) c[k] = z(rng);
  c[4] = two_point ? (coin(rng) ? 2.0 : -2.0) : static_cast<double>(five(rng));
  c[5] = u(rng);
}

inline double draw_exposure(int dgp, std::mt19937_64& rng, const double* c) {
  double s = -0.8;
  for (int k = 0; k < 6; ++k) s += kGpsCoef[k] * c[k];
  std::normal_distribution<double> z(0.0, 1.0);
  switch (dgp) {
    case 1: return 9.0 * s + 17.0 + 5.0 * z(rng);
    case 2: {
      std::chi_squared_distribution<double> chi(2.0);
      const double num = z(rng);
      const double den = std::sqrt(chi(rng) / 2.0);
      return 15.0 * s + 22.0 + num / den;
    }
    case 3: return 9.0 * s + 1.5 * c[2] * c[2] + 15.0 + 5.0 * z(rng);
    case 4: return 49.0 * std::exp(s) / (1.0 + std::exp(s)) - 6.0 + 5.0 * z(rng);
    case 5: return 42.0 / (1.0 + std::exp(s)) - 18.0 + 5.0 * z(rng);
    case 6: return 7.0 * std::log(std::abs(s)) + 13.0 + 4.0 * z(rng);
  }
  throw ConfigError("scenario must be 1..6");
}

}  // namespace sim

/// Simulated dataset: six covariates, exposure from the scenario's GPS
/// model, Gaussian outcome with SD 10.
inline Dataset generate(const Scenario& sc) {
  sc.validate();
  auto rng = make_stream(sc.seed, static_cast<std::uint64_t>(sc.gps_dgp));
  const auto n = static_cast<Eigen::Index>(sc.n);
  Vector w(n), y(n);
  Matrix c(n, 6);
  std::normal_distribution<double> noise(0.0, 10.0);
  double row[6];
  for (Eigen::Index j = 0; j < n; ++j) {
    sim::draw_covariates(rng, sc.c5_two_point, row);
    for (int k = 0; k < 6; ++k) c(j, k) = row[k];
    w[j] = sim::draw_exposure(sc.gps_dgp, rng, row);
    y[j] = sim::outcome_mean(w[j], row) + noise(rng);
  }
  return Dataset(DesignData(std::move(w), std::move(c)), std::move(y));
}

/// E_C of the outcome mean at exposure w.
inline double true_erf(double w) { return -10.0 - 0.2 * w + 0.0169 * w * w * w; }

/// `count` points at equally spaced quantiles between `lo_q` and `hi_q` of
/// a large exposure sample from the scenario.
inline std::vector<double> evaluation_points(int gps_dgp, std::size_t count = 100, double lo_q = 0.05, double hi_q = 0.95,
                                             std::size_t reference_n = 100000, std::uint64_t seed = 20240101) {
  auto rng = make_stream(seed, static_cast<std::uint64_t>(1000 + gps_dgp));
  std::vector<double> w(reference_n);
  double row[6];
  for (auto& v : w) {
    sim::draw_covariates(rng, false, row);
    v = sim::draw_exposure(gps_dgp, rng, row);
  }
  std::sort(w.begin(), w.end());
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double q = count == 1 ? 0.5 * (lo_q + hi_q) : lo_q + (hi_q - lo_q) * static_cast<double>(i) / static_cast<double>(count - 1);
    const double pos = q * static_cast<double>(reference_n - 1);
    const auto k = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(k);
    out[i] = k + 1 < reference_n ? w[k] + frac * (w[k + 1] - w[k]) : w[k];
  }
  return out;
}

struct BiasMse {
  double abs_bias = 0.0;
  double mse = 0.0;
  bool diverged = false;
};

/// Integrated absolute bias and RMSE over equally weighted evaluation
/// points. `curves[s][i]` is replicate s at point i.
inline BiasMse abs_bias_mse(const std::vector<std::vector<double>>& curves, const std::vector<double>& truth) {
  if (curves.empty()) throw ConfigError("no replicate curves");
  BiasMse r;
  const std::size_t p = truth.size();
  const double s = static_cast<double>(curves.size());
  for (std::size_t i = 0; i < p; ++i) {
    double mean_err = 0.0, sq = 0.0;
    for (const auto& c : curves) {
      if (c.size() != p) throw SizeError("replicate curve has the wrong length");
      const double e = c[i] - truth[i];
      if (!std::isfinite(e)) r.diverged = true;
      mean_err += e;
      sq += e * e;
    }
    r.abs_bias += std::abs(mean_err / s);
    r.mse += std::sqrt(sq / s);
  }
  r.abs_bias /= static_cast<double>(p);
  r.mse /= static_cast<double>(p);
  if (r.diverged) r.abs_bias = r.mse = std::numeric_limits<double>::infinity();
  return r;
}

/// Benchmark methods. The plain weighting estimators are untrimmed; the
/// `_trim` variants cap the stabilized weight at 10.
enum class SimMethod { matching, adjustment, iptw, dr, iptw_trim, dr_trim };

inline std::string to_string(SimMethod m) {
  switch (m) {
    case SimMethod::matching: return "matching";
    case SimMethod::adjustment: return "adjustment";
    case SimMethod::iptw: return "iptw";
    case SimMethod::dr: return "dr";
    case SimMethod::iptw_trim: return "iptw_trim";
    case SimMethod::dr_trim: return "dr_trim";
  }
  return "?";
}

inline SimMethod sim_method_from_name(const std::string& s) {
  for (auto m : {SimMethod::matching, SimMethod::adjustment, SimMethod::iptw, SimMethod::dr, SimMethod::iptw_trim,
                 SimMethod::dr_trim}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown simulation method '" + s + "'");
}

inline std::vector<SimMethod> all_sim_methods() {
  return {SimMethod::matching, SimMethod::adjustment, SimMethod::iptw, SimMethod::dr, SimMethod::iptw_trim, SimMethod::dr_trim};
}

struct BenchmarkConfig {
  std::vector<int> scenarios{1};
  std::vector<std::size_t> sizes{1000};
  std::vector<SimMethod> methods{SimMethod::matching};
  std::size_t replicates = 50;
  std::uint64_t seed = 1;
  GpsConfig gps;
  double lambda = 1.0;
  std::optional<double> delta;  // default_caliper when absent
  double caliper_scale = 2.4;
  bool tune = false;
  Metric metric = Metric::l1;
  Kernel kernel = Kernel::epanechnikov;
  double trim_cap = 10.0;
  std::size_t eval_points = 100;
  std::size_t workers = 1;
};

struct BenchmarkRow {
  int scenario = 1;
  std::size_t n = 0;
  SimMethod method = SimMethod::matching;
  BiasMse metrics;
  std::size_t failures = 0;
  std::vector<std::vector<double>> curves;  // per replicate, NaN rows for failures
};

/// Curve of one method on one dataset at the evaluation points.
inline std::vector<double> method_curve(SimMethod method, const Dataset& data, const std::vector<double>& points,
                                        const BenchmarkConfig& cfg) {
  std::vector<double> out(points.size(), kNaN);
  if (method == SimMethod::matching) {
    PipelineConfig pc;
    pc.gps = cfg.gps;
    pc.kernel = cfg.kernel;
    pc.match.metric = cfg.metric;
    pc.match.lambda = cfg.lambda;
    pc.match.delta = cfg.delta ? *cfg.delta : default_caliper(data.design(), cfg.caliper_scale);
    if (cfg.tune) {
      const auto model = fit_gps(data.design(), cfg.gps);
      const auto surface = gps_surface(model, data.design());
      const auto t = tune(data.design(), surface, TuningGrid::defaults(data.design()), cfg.metric);
      pc.match.lambda = t.lambda;
      pc.match.delta = t.delta;
    }
    const auto res = run_matching_pipeline(data, pc);
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = res.erf.smoothed_at(points[i]).value_or(kNaN);
    return out;
  }
  const auto model = fit_gps(data.design(), cfg.gps);
  const double span = data.design().max_exposure() - data.design().min_exposure();
  const double delta = cfg.delta ? *cfg.delta : default_caliper(data.design(), cfg.caliper_scale);
  const auto bws = default_bandwidths(delta, span);
  auto fill = [&](const auto& fit) {
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = fit.evaluate(points[i]);
  };
  switch (method) {
    case SimMethod::adjustment: fill(AdjustmentFit(data, model)); break;
    case SimMethod::iptw:
    case SimMethod::iptw_trim: {
      IptwConfig ic;
      ic.trim_cap = method == SimMethod::iptw ? std::numeric_limits<double>::infinity() : cfg.trim_cap;
      fill(IptwFit(data, model, ic, bws));
      break;
    }
    case SimMethod::dr:
    case SimMethod::dr_trim: {
      DrConfig dc;
      dc.kernel = cfg.kernel;
      if (method == SimMethod::dr_trim) dc.trim_cap = cfg.trim_cap;
      fill(DrFit(data, model, dc, bws));
      break;
    }
    default: break;
  }
  return out;
}

/// Seed of replicate s of a (scenario, N) cell.
inline std::uint64_t replicate_seed(std::uint64_t seed, int scenario, std::size_t n, std::size_t s) {
  return splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(scenario)) ^ n) ^ s;
}

/// Monte-Carlo benchmark. Replicates run in parallel; each replicate's data
/// depends only on (seed, scenario, N, s). A method fails on a replicate
/// when it throws or returns a non-finite value; any failure flags it as
/// diverged, as does an integrated bias or RMSE above 1000.
inline std::vector<BenchmarkRow> run_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.replicates < 1) throw ConfigError("benchmark needs at least one replicate");
  if (cfg.methods.empty()) throw ConfigError("benchmark needs at least one method");
  std::vector<BenchmarkRow> rows;
  for (int sc : cfg.scenarios) {
    const auto points = evaluation_points(sc, cfg.eval_points);
    std::vector<double> truth(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) truth[i] = true_erf(points[i]);
    for (auto n : cfg.sizes) {
      const std::size_t first = rows.size();
      for (auto m : cfg.methods) {
        BenchmarkRow r;
        r.scenario = sc;
        r.n = n;
        r.method = m;
        r.curves.assign(cfg.replicates, std::vector<double>(points.size(), kNaN));
        rows.push_back(std::move(r));
      }
      parallel_for(cfg.replicates, cfg.workers, [&](std::size_t s) {
        Scenario scen{sc, n, replicate_seed(cfg.seed, sc, n, s)};
        const Dataset data = generate(scen);
        for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
          try {
            rows[first + k].curves[s] = method_curve(cfg.methods[k], data, points, cfg);
          } catch (const Error&) {
          }
        }
      });
      for (std::size_t k = first; k < rows.size(); ++k) {
        auto& r = rows[k];
        for (const auto& c : r.curves) {
          if (std::any_of(c.begin(), c.end(), [](double v) { return !std::isfinite(v); })) ++r.failures;
        }
        r.metrics = abs_bias_mse(r.curves, truth);
        if (r.metrics.abs_bias > 1000.0 || r.metrics.mse > 1000.0) r.metrics.diverged = true;
      }
    }
  }
  return rows;
}

/// scenario, N, method, abs_bias, mse, diverged_flag ("*" when diverged).
inline void write_simreport_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows) {
  out << "scenario,N,method,abs_bias,mse,diverged_flag\n";
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.n << ',' << to_string(r.method) << ',';
    if (r.metrics.diverged) {
      out << "*,*,*\n";
    } else {
      out << format_double(r.metrics.abs_bias) << ',' << format_double(r.metrics.mse) << ",\n";
    }
  }
}

}  // namespace gpsmatch
