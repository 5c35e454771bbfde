#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "gpsmatch/balance.hpp"
#include "gpsmatch/csv.hpp"
#include "gpsmatch/data.hpp"
#include "gpsmatch/gps.hpp"
#include "gpsmatch/matching.hpp"
#include "gpsmatch/parallel.hpp"

namespace gpsmatch {

enum class Utility { avg_abs_corr, avg_blocked_std_bias };

inline Utility utility_from_name(const std::string& s) {
  if (s == "corr" || s == "avg_abs_corr") return Utility::avg_abs_corr;
  if (s == "bias" || s == "avg_blocked_std_bias") return Utility::avg_blocked_std_bias;
  throw ConfigError("unknown utility '" + s + "' (expected corr or bias)");
}

inline std::string to_string(Utility u) { return u == Utility::avg_abs_corr ? "corr" : "bias"; }

struct TuningGrid {
  std::vector<double> lambdas;
  std::vector<double> deltas;
  Utility utility = Utility::avg_abs_corr;

  /// lambda in {0, 0.1, ..., 1}; delta giving 10, 20, 50 and 100 levels.
  static TuningGrid defaults(const DesignData& design) {
    TuningGrid g;
    for (int i = 0; i <= 10; ++i) g.lambdas.push_back(i / 10.0);
    const double span = design.max_exposure() - design.min_exposure();
    for (int levels : {10, 20, 50, 100}) g.deltas.push_back(span / (2.0 * levels));
    return g;
  }
};

struct TuningRow {
  double lambda = 0.0;
  double delta = 0.0;
  double utility = std::numeric_limits<double>::quiet_NaN();
  bool feasible = false;
};

struct TuningResult {
  double lambda = 0.0;
  double delta = 0.0;
  double utility = 0.0;
  std::vector<TuningRow> table;
};

inline double balance_utility(const BalanceReport& r, Utility u) {
  return u == Utility::avg_abs_corr ? r.avg_abs_corr : r.avg_blocked_std_bias;
}

/// Grid search over (lambda, delta) for the best post-matching balance.
/// Only design data is consulted. Ties prefer larger lambda, then smaller
/// delta.
inline TuningResult tune(const DesignData& design, const GpsSurface& surface, const TuningGrid& grid, Metric metric,
                         std::size_t workers = 1, std::size_t matches_per_unit = 1) {
  if (grid.lambdas.empty() || grid.deltas.empty()) throw ConfigError("tuning grid needs lambda and delta candidates");
  for (double l : grid.lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambda candidates must lie in [0, 1]");
  }
  const double half_span = (design.max_exposure() - design.min_exposure()) / 2.0;
  for (double d : grid.deltas) {
    if (!(d > 0.0 && d < half_span)) throw CaliperError("delta candidate " + format_double(d) + " is outside (0, range/2)");
  }

  TuningResult res;
  for (double d : grid.deltas) {
    for (double l : grid.lambdas) res.table.push_back({l, d});
  }
  parallel_for(res.table.size(), workers, [&](std::size_t i) {
    auto& row = res.table[i];
    MatchConfig mc;
    mc.lambda = row.lambda;
    mc.delta = row.delta;
    mc.metric = metric;
    mc.matches_per_unit = matches_per_unit;
    try {
      const auto ms = build_matched_set(design, surface, make_grid(design, row.delta), mc);
      const auto report = balance_of(design, matched_units(ms));
      row.utility = balance_utility(report, grid.utility);
      row.feasible = std::isfinite(row.utility);
    } catch (const PipelineError&) {
      row.feasible = false;
    } catch (const OrthogonalizationError&) {
      row.feasible = false;
    }
  });

  const TuningRow* best = nullptr;
  for (const auto& row : res.table) {
    if (!row.feasible) continue;
    if (!best || row.utility < best->utility ||
        (row.utility == best->utility &&
         (row.lambda > best->lambda || (row.lambda == best->lambda && row.delta < best->delta)))) {
      best = &row;
    }
  }
  if (!best) throw TuningError("every (lambda, delta) candidate produced an empty or unusable matched set");
  res.lambda = best->lambda;
  res.delta = best->delta;
  res.utility = best->utility;
  return res;
}

inline void write_tuning_csv(std::ostream& out, const TuningResult& r) {
  out << "lambda,delta,utility\n";
  for (const auto& row : r.table) {
    out << format_double(row.lambda) << ',' << format_double(row.delta) << ',';
    if (row.feasible) out << format_double(row.utility);
    out << '\n';
  }
}

}  // namespace gpsmatch
