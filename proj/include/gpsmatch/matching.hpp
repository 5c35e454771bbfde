#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gpsmatch/csv.hpp"
#include "gpsmatch/data.hpp"
#include "gpsmatch/error.hpp"
#include "gpsmatch/gps.hpp"
#include "gpsmatch/parallel.hpp"

namespace gpsmatch {

enum class Metric { l1, l2 };

inline Metric metric_from_name(const std::string& s) {
  if (s == "l1" || s == "L1") return Metric::l1;
  if (s == "l2" || s == "L2") return Metric::l2;
  throw ConfigError("unknown metric '" + s + "' (expected l1 or l2)");
}

inline std::string to_string(Metric m) { return m == Metric::l1 ? "l1" : "l2"; }

struct MatchConfig {
  double lambda = 1.0;  // weight on the GPS coordinate, 1 - lambda on exposure
  double delta = 1.0;   // exposure caliper
  Metric metric = Metric::l1;
  std::size_t matches_per_unit = 1;
  // Optional second caliper on the standardized GPS distance. Targets with
  // no candidate inside it stay unmatched at that level.
  std::optional<double> max_gps_distance;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw CaliperError("caliper must be positive");
    if (matches_per_unit < 1) throw ConfigError("matches per unit must be at least 1");
    if (max_gps_distance && !(*max_gps_distance >= 0.0)) throw ConfigError("GPS caliper must be nonnegative");
  }
};

/// Min-max scaling onto [0, 1].
inline std::vector<double> standardize(std::span<const double> values) {
  if (values.empty()) throw StandardizationError("cannot standardize an empty vector");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw StandardizationError("cannot standardize a constant vector");
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) / (hi - lo);
  return out;
}

inline double match_distance(Metric metric, double lambda, double de, double dw) {
  const double a = lambda * de;
  const double b = (1.0 - lambda) * dw;
  return metric == Metric::l1 ? std::abs(a) + std::abs(b) : std::sqrt(a * a + b * b);
}

/// Matches at one exposure level. `targets` lists the units that received
/// matches (every unit unless a GPS caliper excluded some); `matches` holds
/// M observed-unit indices per target, nearest first.
struct LevelMatches {
  std::size_t level_index = 0;
  double level = 0.0;
  std::size_t matches_per_unit = 1;
  std::vector<std::size_t> targets;
  std::vector<std::size_t> matches;
  std::vector<std::pair<std::size_t, std::size_t>> multiplicity;  // (unit, K), sorted by unit

  std::span<const std::size_t> matches_of(std::size_t target_pos) const {
    return std::span<const std::size_t>(matches).subspan(target_pos * matches_per_unit, matches_per_unit);
  }

  std::size_t multiplicity_of(std::size_t unit) const {
    auto it = std::lower_bound(multiplicity.begin(), multiplicity.end(), std::pair<std::size_t, std::size_t>{unit, 0});
    return it != multiplicity.end() && it->first == unit ? it->second : 0;
  }

  std::size_t total_multiplicity() const {
    std::size_t s = 0;
    for (const auto& [unit, k] : multiplicity) s += k;
    return s;
  }
};

struct MatchedSet {
  ExposureGrid grid;
  MatchConfig config;
  std::size_t n_units = 0;
  std::vector<LevelMatches> levels;  // matched levels in grid order
  std::vector<std::size_t> unmatched_levels;

  const LevelMatches* find(std::size_t level_index) const {
    for (const auto& l : levels) {
      if (l.level_index == level_index) return &l;
    }
    return nullptr;
  }
};

/// Nearest-neighbour caliper matching of every unit's counterfactual
/// (GPS, exposure) at `level` against the observed units whose exposure lies
/// within `delta` of it. Returns nothing when fewer than M candidates exist.
inline std::optional<LevelMatches> match_at_level(double level, const DesignData& design, const GpsSurface& surface,
                                                  const MatchConfig& config) {
  config.validate();
  if (surface.degenerate) throw StandardizationError("GPS surface is degenerate (all observed GPS equal)");
  if (surface.size() != design.size()) throw InputError("GPS surface and data differ in size");

  const double w_lo = design.min_exposure();
  const double w_span = design.max_exposure() - w_lo;
  const double e_lo = surface.min;
  const double e_span = surface.max - surface.min;
  const std::size_t m = config.matches_per_unit;

  struct Candidate {
    std::size_t unit;
    double e_std;
    double w_std;
  };
  std::vector<Candidate> cands;
  for (std::size_t j = 0; j < design.size(); ++j) {
    const double w = design.exposure(j);
    if (w >= level - config.delta && w <= level + config.delta) {
      cands.push_back({j, (surface.observed_gps[static_cast<Eigen::Index>(j)] - e_lo) / e_span, (w - w_lo) / w_span});
    }
  }
  if (cands.size() < m) return std::nullopt;

  LevelMatches out;
  out.level = level;
  out.matches_per_unit = m;
  out.targets.reserve(design.size());
  out.matches.reserve(design.size() * m);
  std::vector<std::size_t> counts(cands.size(), 0);
  const double target_w = (level - w_lo) / w_span;

  std::vector<std::pair<double, std::size_t>> best;  // (distance, candidate position)
  best.reserve(m + 1);
  for (std::size_t t = 0; t < design.size(); ++t) {
    const double target_e = std::clamp((surface.counterfactual(t, level) - e_lo) / e_span, 0.0, 1.0);
    best.clear();
    for (std::size_t c = 0; c < cands.size(); ++c) {
      const double de = cands[c].e_std - target_e;
      if (config.max_gps_distance && std::abs(de) > *config.max_gps_distance) continue;
      const double d = match_distance(config.metric, config.lambda, de, cands[c].w_std - target_w);
      if (best.size() == m && !(d < best.back().first)) continue;
      // Candidates arrive in index order, so strict comparison keeps the
      // lowest index among equal distances.
      auto pos = std::upper_bound(best.begin(), best.end(), d,
                                  [](double v, const std::pair<double, std::size_t>& e) { return v < e.first; });
      best.insert(pos, {d, c});
      if (best.size() > m) best.pop_back();
    }
    if (best.size() < m) continue;
    out.targets.push_back(t);
    for (const auto& [d, c] : best) {
      out.matches.push_back(cands[c].unit);
      ++counts[c];
    }
  }
  if (out.targets.empty()) return std::nullopt;
  for (std::size_t c = 0; c < cands.size(); ++c) {
    if (counts[c] > 0) out.multiplicity.emplace_back(cands[c].unit, counts[c]);
  }
  return out;
}

/// Matching at every grid level. Levels are independent and may run on
/// several workers; the result does not depend on the schedule.
inline MatchedSet build_matched_set(const DesignData& design, const GpsSurface& surface, const ExposureGrid& grid,
                                    const MatchConfig& config, std::size_t workers = 1) {
  config.validate();
  if (surface.degenerate) throw StandardizationError("GPS surface is degenerate (all observed GPS equal)");
  std::vector<std::optional<LevelMatches>> slots(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) {
    slots[i] = match_at_level(grid.level(i), design, surface, config);
    if (slots[i]) slots[i]->level_index = i;
  });
  MatchedSet ms;
  ms.grid = grid;
  ms.config = config;
  ms.n_units = design.size();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (slots[i]) {
      ms.levels.push_back(std::move(*slots[i]));
    } else {
      ms.unmatched_levels.push_back(i);
    }
  }
  if (ms.levels.empty()) throw PipelineError("no grid level has a candidate within the caliper; nothing is estimable");
  return ms;
}

/// Imputed counterfactual outcome of each target at a level (mean over its
/// M matches).
inline std::vector<double> imputed_outcomes(const LevelMatches& level, const Vector& outcomes) {
  std::vector<double> out(level.targets.size());
  for (std::size_t t = 0; t < level.targets.size(); ++t) {
    double s = 0.0;
    for (auto u : level.matches_of(t)) s += outcomes[static_cast<Eigen::Index>(u)];
    out[t] = s / static_cast<double>(level.matches_per_unit);
  }
  return out;
}

/// One row per (level, target, match): level, target_id, matched_id,
/// matched_exposure, imputed_outcome, multiplicity.
inline void write_matched_set_csv(std::ostream& out, const MatchedSet& ms, const Dataset& data) {
  out << "level,target_id,matched_id,matched_exposure,imputed_outcome,multiplicity\n";
  for (const auto& lv : ms.levels) {
    std::vector<double> imputed;
    if (data.has_outcomes()) imputed = imputed_outcomes(lv, data.outcomes());
    for (std::size_t t = 0; t < lv.targets.size(); ++t) {
      for (auto u : lv.matches_of(t)) {
        out << format_double(lv.level) << ',' << data.unit_ids()[lv.targets[t]] << ',' << data.unit_ids()[u] << ','
            << format_double(data.design().exposure(u)) << ',';
        if (!imputed.empty()) out << format_double(imputed[t]);
        out << ',' << lv.multiplicity_of(u) << '\n';
      }
    }
  }
}

}  // namespace gpsmatch
