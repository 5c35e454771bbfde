#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "gpsmatch/balance.hpp"
#include "gpsmatch/data.hpp"
#include "gpsmatch/estimators.hpp"
#include "gpsmatch/gps.hpp"
#include "gpsmatch/matching.hpp"
#include "gpsmatch/smoothing.hpp"

namespace gpsmatch {

/// Linearly interpolated sample quantiles of a sorted vector.
inline double sorted_quantile(const std::vector<double>& w, double q) {
  const double pos = q * static_cast<double>(w.size() - 1);
  const auto k = static_cast<std::size_t>(pos);
  return k + 1 < w.size() ? w[k] + (pos - static_cast<double>(k)) * (w[k + 1] - w[k]) : w[k];
}

inline std::pair<double, double> exposure_quantiles(const DesignData& design, double lo, double hi) {
  std::vector<double> w(design.exposures().data(), design.exposures().data() + design.exposures().size());
  std::sort(w.begin(), w.end());
  return {sorted_quantile(w, lo), sorted_quantile(w, hi)};
}

/// Caliper shrinking like N^(-1/2), scaled by a robust exposure spread
/// (IQR / 1.349) and capped below half the observed range.
inline double default_caliper(const DesignData& design, double scale = 2.4) {
  const auto [q1, q3] = exposure_quantiles(design, 0.25, 0.75);
  double spread = (q3 - q1) / 1.349;
  const double span = design.max_exposure() - design.min_exposure();
  if (!(spread > 0.0)) spread = span / 4.0;
  return std::min(scale * spread / std::sqrt(static_cast<double>(design.size())), 0.45 * span);
}

struct PipelineConfig {
  GpsConfig gps;
  MatchConfig match;
  Kernel kernel = Kernel::epanechnikov;
  std::optional<double> bandwidth;  // LOO-CV over the default range when absent
  double score_trim = 0.05;         // LOO scores levels between these exposure quantiles
  std::size_t workers = 1;
};

struct PipelineResult {
  GpsModel gps;
  GpsSurface surface;
  ExposureGrid grid;
  MatchedSet matched;
  ErfEstimate erf;
};

/// GPS fit, matching on the grid and smoothing. `grid` overrides the grid
/// implied by the data range and the caliper.
inline PipelineResult run_matching_pipeline(const Dataset& data, const PipelineConfig& cfg,
                                            const std::optional<ExposureGrid>& grid = std::nullopt) {
  cfg.match.validate();
  GpsModel model = fit_gps(data.design(), cfg.gps);
  GpsSurface surface = gps_surface(model, data.design());
  ExposureGrid g = grid ? *grid : make_grid(data.design(), cfg.match.delta);
  MatchedSet ms = build_matched_set(data.design(), surface, g, cfg.match, cfg.workers);
  ErfEstimate erf = matching_estimate(ms, data.outcomes());
  double h = 0.0;
  if (cfg.bandwidth) {
    h = *cfg.bandwidth;
  } else {
    const auto cands = default_bandwidths(cfg.match.delta, g.upper() - g.origin());
    const auto [lo, hi] = exposure_quantiles(data.design(), cfg.score_trim, 1.0 - cfg.score_trim);
    h = select_erf_bandwidth(erf, cfg.kernel, cands, lo, hi);
  }
  smooth_erf(erf, cfg.kernel, h);
  return PipelineResult{std::move(model), std::move(surface), std::move(g), std::move(ms), std::move(erf)};
}

}  // namespace gpsmatch
