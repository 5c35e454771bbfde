#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "gpsmatch/data.hpp"
#include "gpsmatch/error.hpp"
#include "gpsmatch/parallel.hpp"
#include "gpsmatch/pipeline.hpp"

namespace gpsmatch {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for stream `index` of a master seed.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(a >> 32)};
  return std::mt19937_64(seq);
}

inline std::size_t default_subsample(std::size_t n) {
  return static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n), 0.8) - 1e-9));
}

struct BootstrapConfig {
  std::size_t replicates = 200;
  std::size_t m = 0;  // 0 means ceil(N^0.8)
  std::uint64_t seed = 1;
  double level = 0.95;
  bool refit_bandwidth = true;  // rerun LOO bandwidth selection per replicate

  std::size_t subsample(std::size_t n) const { return m == 0 ? default_subsample(n) : m; }

  void validate(std::size_t n) const {
    if (replicates < 2) throw ConfigError("bootstrap needs at least 2 replicates");
    const auto mm = subsample(n);
    if (mm < 2 || mm > n) throw ConfigError("bootstrap subsample size must lie in [2, N]");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  }
};

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

/// Per-level band; undefined entries are NaN.
struct BootstrapBand {
  std::vector<double> levels;
  std::vector<double> estimate;
  std::vector<double> sd;
  std::vector<double> ci_lo, ci_hi;
  std::vector<std::size_t> successes;
  std::size_t subsample = 0;
  double z = 0.0;
};

/// m-out-of-n bootstrap of the smoothed matching curve. Each replicate
/// refits the GPS, rematches on the full-data grid with the full-data
/// caliper and scale, and smooths again.
inline BootstrapBand bootstrap_band(const Dataset& data, const PipelineResult& full, const PipelineConfig& cfg,
                                    const BootstrapConfig& bc) {
  const std::size_t n = data.size();
  bc.validate(n);
  const std::size_t m = bc.subsample(n);
  const std::size_t levels = full.grid.size();
  PipelineConfig rep_cfg = cfg;
  if (!bc.refit_bandwidth) rep_cfg.bandwidth = full.erf.bandwidth;
  rep_cfg.workers = 1;

  std::vector<std::vector<double>> curves(bc.replicates);
  parallel_for(bc.replicates, cfg.workers, [&](std::size_t b) {
    auto rng = make_stream(bc.seed, b);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> rows(m);
    for (auto& r : rows) r = pick(rng);
    curves[b].assign(levels, kNaN);
    try {
      const auto res = run_matching_pipeline(data.subset(rows), rep_cfg, full.grid);
      curves[b] = res.erf.smoothed;
    } catch (const Error&) {
      // Failed replicate: every level missing.
    }
  });

  BootstrapBand band;
  band.levels = full.grid.levels();
  band.estimate = full.erf.smoothed;
  band.subsample = m;
  band.z = normal_quantile(0.5 + bc.level / 2.0);
  band.sd.assign(levels, kNaN);
  band.ci_lo.assign(levels, kNaN);
  band.ci_hi.assign(levels, kNaN);
  band.successes.assign(levels, 0);
  const double rescale = std::sqrt(static_cast<double>(m) / static_cast<double>(n));
  for (std::size_t i = 0; i < levels; ++i) {
    double s = 0.0, ss = 0.0;
    std::size_t k = 0;
    for (const auto& c : curves) {
      if (std::isfinite(c[i])) {
        ++k;
        s += c[i];
      }
    }
    band.successes[i] = k;
    if (k < 2 || 2 * k < bc.replicates || !std::isfinite(band.estimate[i])) continue;
    const double mean = s / static_cast<double>(k);
    for (const auto& c : curves) {
      if (std::isfinite(c[i])) ss += (c[i] - mean) * (c[i] - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(k - 1));
    band.sd[i] = sd;
    const double half = band.z * rescale * sd;
    band.ci_lo[i] = band.estimate[i] - half;
    band.ci_hi[i] = band.estimate[i] + half;
  }
  return band;
}

inline void attach_band(ErfEstimate& e, const BootstrapBand& band) {
  e.ci_lo = band.ci_lo;
  e.ci_hi = band.ci_hi;
}

}  // namespace gpsmatch
