#pragma once

// Straightforward reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "gpsmatch.hpp"

namespace oracle {

/// Exhaustive scan: for every unit as target, every in-caliper candidate is
/// scored and the M best kept, ties broken by unit index.
inline std::vector<std::vector<std::size_t>> brute_force_matches(double level, const gpsmatch::DesignData& d,
                                                                 const gpsmatch::GpsSurface& s,
                                                                 const gpsmatch::MatchConfig& cfg) {
  const std::size_t n = d.size();
  double e_lo = s.observed_gps[0], e_hi = s.observed_gps[0], w_lo = d.exposure(0), w_hi = d.exposure(0);
  for (std::size_t j = 0; j < n; ++j) {
    e_lo = std::min(e_lo, s.observed_gps[static_cast<Eigen::Index>(j)]);
    e_hi = std::max(e_hi, s.observed_gps[static_cast<Eigen::Index>(j)]);
    w_lo = std::min(w_lo, d.exposure(j));
    w_hi = std::max(w_hi, d.exposure(j));
  }
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    double te = (s.counterfactual(t, level) - e_lo) / (e_hi - e_lo);
    te = te < 0.0 ? 0.0 : (te > 1.0 ? 1.0 : te);
    const double tw = (level - w_lo) / (w_hi - w_lo);
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t j = 0; j < n; ++j) {
      // Closed window [level - delta, level + delta].
      if (d.exposure(j) < level - cfg.delta || d.exposure(j) > level + cfg.delta) continue;
      const double de = (s.observed_gps[static_cast<Eigen::Index>(j)] - e_lo) / (e_hi - e_lo) - te;
      const double dw = (d.exposure(j) - w_lo) / (w_hi - w_lo) - tw;
      const double a = cfg.lambda * de, b = (1.0 - cfg.lambda) * dw;
      const double dist = cfg.metric == gpsmatch::Metric::l1 ? std::abs(a) + std::abs(b) : std::sqrt(a * a + b * b);
      scored.emplace_back(dist, j);
    }
    std::sort(scored.begin(), scored.end());
    for (std::size_t k = 0; k < std::min(cfg.matches_per_unit, scored.size()); ++k) out[t].push_back(scored[k].second);
  }
  return out;
}

/// Weighted Pearson correlation.
inline double weighted_pearson(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& w) {
  double sw = 0, mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    mx += w[i] * x[i];
    my += w[i] * y[i];
  }
  mx /= sw;
  my /= sw;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += w[i] * (x[i] - mx) * (y[i] - my);
    sxx += w[i] * (x[i] - mx) * (x[i] - mx);
    syy += w[i] * (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Random small dataset with a confounded exposure.
inline gpsmatch::DesignData random_design(std::size_t n, std::size_t q, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  gpsmatch::Matrix c(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  gpsmatch::Vector w(static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < c.cols(); ++k) {
      c(j, k) = z(rng);
      s += 0.6 * c(j, k);
    }
    w[j] = 10.0 + 2.0 * s + 2.0 * z(rng);
  }
  return gpsmatch::DesignData(w, c);
}

}  // namespace oracle
