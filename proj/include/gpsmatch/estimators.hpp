#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gpsmatch/csv.hpp"
#include "gpsmatch/data.hpp"
#include "gpsmatch/error.hpp"
#include "gpsmatch/gps.hpp"
#include "gpsmatch/matching.hpp"
#include "gpsmatch/regression.hpp"
#include "gpsmatch/smoothing.hpp"

namespace gpsmatch {

enum class Method { matching, adjustment, iptw, dr };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::matching: return "matching";
    case Method::adjustment: return "adjustment";
    case Method::iptw: return "iptw";
    case Method::dr: return "dr";
  }
  return "?";
}

inline Method method_from_name(const std::string& s) {
  if (s == "matching") return Method::matching;
  if (s == "adjustment") return Method::adjustment;
  if (s == "iptw") return Method::iptw;
  if (s == "dr") return Method::dr;
  throw ConfigError("unknown method '" + s + "'");
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Exposure-response curve on the grid levels. Undefined entries are NaN.
struct ErfEstimate {
  Method method = Method::matching;
  std::vector<double> levels;
  std::vector<double> point;
  std::vector<double> smoothed;
  Kernel kernel = Kernel::epanechnikov;
  double bandwidth = kNaN;
  std::vector<double> variance;  // Var of the point estimate; empty if not computed
  std::vector<double> ci_lo, ci_hi;

  /// Smoothed curve anywhere, from the defined point estimates.
  std::optional<double> smoothed_at(double w) const {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (std::isfinite(point[i])) {
        x.push_back(levels[i]);
        y.push_back(point[i]);
      }
    }
    return KernelSmoother(x, y, kernel).evaluate(w, bandwidth);
  }
};

// ---- matching estimator ---------------------------------------------------

/// mu(w_i) = sum_j K_i(j) Y_j / (T M), T the number of matched targets.
inline double level_mean_by_multiplicity(const LevelMatches& lv, const Vector& outcomes) {
  double s = 0.0;
  for (const auto& [u, k] : lv.multiplicity) s += static_cast<double>(k) * outcomes[static_cast<Eigen::Index>(u)];
  return s / static_cast<double>(lv.targets.size() * lv.matches_per_unit);
}

/// The same quantity as the mean of the imputed outcomes.
inline double level_mean_by_imputation(const LevelMatches& lv, const Vector& outcomes) {
  const auto imputed = imputed_outcomes(lv, outcomes);
  double s = 0.0;
  for (double v : imputed) s += v;
  return s / static_cast<double>(imputed.size());
}

inline ErfEstimate matching_estimate(const MatchedSet& ms, const Vector& outcomes) {
  if (static_cast<std::size_t>(outcomes.size()) != ms.n_units) throw SizeError("outcome length differs from matched data");
  ErfEstimate e;
  e.method = Method::matching;
  e.levels = ms.grid.levels();
  e.point.assign(e.levels.size(), kNaN);
  e.smoothed.assign(e.levels.size(), kNaN);
  for (const auto& lv : ms.levels) e.point[lv.level_index] = level_mean_by_multiplicity(lv, outcomes);
  return e;
}

/// Nadaraya-Watson smoothing of the level estimates, evaluated at the levels.
inline void smooth_erf(ErfEstimate& e, Kernel kernel, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < e.levels.size(); ++i) {
    if (std::isfinite(e.point[i])) {
      x.push_back(e.levels[i]);
      y.push_back(e.point[i]);
    }
  }
  if (x.size() < 2) throw PipelineError("smoothing needs at least 2 estimated levels");
  e.kernel = kernel;
  e.bandwidth = bandwidth;
  const KernelSmoother sm(x, y, kernel);
  e.smoothed.assign(e.levels.size(), kNaN);
  for (std::size_t i = 0; i < e.levels.size(); ++i) {
    if (auto v = sm.evaluate(e.levels[i], bandwidth)) e.smoothed[i] = *v;
  }
}

/// Leave-one-out bandwidth over the estimated levels, scored on the levels
/// inside [lo, hi].
inline double select_erf_bandwidth(const ErfEstimate& e, Kernel kernel, std::span<const double> candidates,
                                   double lo = -std::numeric_limits<double>::infinity(),
                                   double hi = std::numeric_limits<double>::infinity()) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < e.levels.size(); ++i) {
    if (std::isfinite(e.point[i])) {
      x.push_back(e.levels[i]);
      y.push_back(e.point[i]);
    }
  }
  if (x.size() < 2) throw PipelineError("bandwidth selection needs at least 2 estimated levels");
  return KernelSmoother(x, y, kernel).select_bandwidth(candidates, lo, hi);
}

// ---- plug-in variance -----------------------------------------------------

/// (1/N) sum_j delta K(j)^2 sigma2, with a common sigma2 for the block.
inline double plug_in_variance_term(double delta, std::span<const double> multiplicities, double sigma2, std::size_t n) {
  double s = 0.0;
  for (double k : multiplicities) s += k * k;
  return delta * s * sigma2 / static_cast<double>(n);
}

/// Residual variance of Y after a linear fit on (w, GPS) over the units in
/// the caliper block; falls back to the plain sample variance when the
/// block is too small or the local design is rank deficient.
inline double block_residual_variance(const std::vector<std::size_t>& units, const Dataset& data, const GpsSurface& surface) {
  const auto n = static_cast<Eigen::Index>(units.size());
  if (n < 2) return kNaN;
  Vector y(n);
  Matrix x(n, 3);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto u = units[static_cast<std::size_t>(r)];
    y[r] = data.outcomes()[static_cast<Eigen::Index>(u)];
    x(r, 0) = 1.0;
    x(r, 1) = data.design().exposure(u);
    x(r, 2) = surface.observed_gps[static_cast<Eigen::Index>(u)];
  }
  if (n >= 4) {
    // Centre and scale so the rank test is not fooled by units.
    for (Eigen::Index k = 1; k < 3; ++k) {
      const double mu = x.col(k).mean();
      const double sd = std::sqrt((x.col(k).array() - mu).square().mean());
      x.col(k) = sd > 0.0 ? Vector((x.col(k).array() - mu) / sd) : Vector(Vector::Zero(n));
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    qr.setThreshold(1e-10);
    const auto rank = qr.rank();
    if (n - rank >= 1) {
      const Vector beta = qr.solve(y);
      const Vector r = y - x * beta;
      return r.squaredNorm() / static_cast<double>(n - rank);
    }
  }
  const double mu = y.mean();
  return (y.array() - mu).square().sum() / static_cast<double>(n - 1);
}

/// Plug-in asymptotic variance Sigma_2 per level (NaN where undefined), and
/// the implied variance of the point estimate Sigma_2 / (N delta).
struct PlugInVariance {
  std::vector<double> sigma2_asymptotic;
  std::vector<double> point_variance;
};

inline PlugInVariance plug_in_variance(const MatchedSet& ms, const Dataset& data, const GpsSurface& surface) {
  const double delta = ms.config.delta;
  PlugInVariance out;
  out.sigma2_asymptotic.assign(ms.grid.size(), kNaN);
  out.point_variance.assign(ms.grid.size(), kNaN);
  for (const auto& lv : ms.levels) {
    std::vector<std::size_t> block;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double w = data.design().exposure(j);
      if (w >= lv.level - delta && w <= lv.level + delta) block.push_back(j);
    }
    const double s2 = block_residual_variance(block, data, surface);
    if (!std::isfinite(s2)) continue;
    std::vector<double> ks;
    for (const auto& [u, k] : lv.multiplicity) ks.push_back(static_cast<double>(k) / static_cast<double>(lv.matches_per_unit));
    const double sig = plug_in_variance_term(delta, ks, s2, lv.targets.size());
    out.sigma2_asymptotic[lv.level_index] = sig;
    out.point_variance[lv.level_index] = sig / (static_cast<double>(lv.targets.size()) * delta);
  }
  return out;
}

// ---- GPS adjustment -------------------------------------------------------

struct OutcomeModelConfig {
  LearnerConfig learner{LearnerKind::polynomial, 3, true, 200, 0.1, 10};
};

/// E[Y | w, GPS] fitted on the observed data; the curve averages the fit
/// over every unit's counterfactual GPS at w.
class AdjustmentFit {
 public:
  AdjustmentFit(const Dataset& data, const GpsModel& gps, const OutcomeModelConfig& cfg = {})
      : gps_(gps), cond_means_(gps.conditional_means(data.design().covariates())) {
    const auto n = static_cast<Eigen::Index>(data.size());
    Matrix x(n, 2);
    for (Eigen::Index j = 0; j < n; ++j) {
      x(j, 0) = data.design().exposures()[j];
      x(j, 1) = gps.density_at_mean(x(j, 0), cond_means_[j]);
    }
    model_ = fit_mean_model(x, data.outcomes(), cfg.learner, nullptr, {"w", "gps"});
  }

  double evaluate(double w) const {
    const auto n = cond_means_.size();
    Matrix x(n, 2);
    for (Eigen::Index j = 0; j < n; ++j) {
      x(j, 0) = w;
      x(j, 1) = gps_.density_at_mean(w, cond_means_[j]);
    }
    return predict(model_, x).mean();
  }

  const MeanModel& outcome_model() const { return model_; }

 private:
  GpsModel gps_;
  Vector cond_means_;
  MeanModel model_;
};

inline ErfEstimate curve_on_grid(Method method, const ExposureGrid& grid, const auto& fit) {
  ErfEstimate e;
  e.method = method;
  e.levels = grid.levels();
  e.point.resize(e.levels.size());
  for (std::size_t i = 0; i < e.levels.size(); ++i) e.point[i] = fit.evaluate(e.levels[i]);
  e.smoothed = e.point;
  return e;
}

inline ErfEstimate adjustment_estimate(const Dataset& data, const GpsModel& gps, const ExposureGrid& grid,
                                       const OutcomeModelConfig& cfg = {}) {
  return curve_on_grid(Method::adjustment, grid, AdjustmentFit(data, gps, cfg));
}

// ---- IPTW -----------------------------------------------------------------

/// Marginal exposure density at each observed w_j, estimated as the average
/// of e(w_j, c_k) over the sample covariates.
inline Vector marginal_exposure_density(const DesignData& design, const GpsModel& gps, const Vector& cond_means) {
  const auto n = static_cast<Eigen::Index>(design.size());
  Vector out(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double w = design.exposures()[j];
    double s = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) s += gps.density_at_mean(w, cond_means[k]);
    out[j] = s / static_cast<double>(n);
  }
  return out;
}

/// Untrimmed stabilized weights f_W(w_j) / e(w_j, c_j).
inline Vector stabilized_weights(const DesignData& design, const GpsModel& gps) {
  const Vector means = gps.conditional_means(design.covariates());
  const Vector num = marginal_exposure_density(design, gps, means);
  Vector w(num.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = num[j] / gps.density_at_mean(design.exposures()[j], means[j]);
  return w;
}

inline Vector trim_weights(Vector w, double cap) {
  if (!(cap > 0.0)) throw ConfigError("trim cap must be positive");
  return w.cwiseMin(cap);
}

enum class IptwOutcome { cubic, kernel };

struct IptwConfig {
  double trim_cap = 10.0;  // infinity disables trimming
  IptwOutcome outcome = IptwOutcome::cubic;
  Kernel kernel = Kernel::epanechnikov;
  std::optional<double> bandwidth;  // kernel outcome only; LOO-CV when absent
  double gps_floor = kDefaultGpsFloor;
};

inline void require_positivity(const DesignData& design, const GpsModel& gps, double floor, const char* who) {
  const Vector means = gps.conditional_means(design.covariates());
  for (std::size_t j = 0; j < design.size(); ++j) {
    if (gps.density_at_mean(design.exposure(j), means[static_cast<Eigen::Index>(j)]) <= floor) {
      throw PositivityError(std::string(who) + ": estimated GPS of unit " + std::to_string(j) + " is below the floor " +
                            format_double(floor));
    }
  }
}

/// Weighted regression of Y on W with stabilized, optionally trimmed,
/// inverse-GPS weights.
class IptwFit {
 public:
  IptwFit(const Dataset& data, const GpsModel& gps, const IptwConfig& cfg, std::span<const double> bandwidths = {}) {
    if (!std::isfinite(cfg.trim_cap)) require_positivity(data.design(), gps, cfg.gps_floor, "iptw");
    weights_ = stabilized_weights(data.design(), gps);
    if (std::isfinite(cfg.trim_cap)) weights_ = trim_weights(weights_, cfg.trim_cap);
    if (!weights_.allFinite()) throw FitError("iptw: non-finite weights");
    const Vector& w = data.design().exposures();
    if (cfg.outcome == IptwOutcome::cubic) {
      model_ = fit_polynomial(w, data.outcomes(), 3, true, &weights_, {"w"});
    } else {
      const Vector& y = data.outcomes();
      smoother_ = KernelSmoother(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())),
                                 std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), cfg.kernel,
                                 std::span<const double>(weights_.data(), static_cast<std::size_t>(weights_.size())));
      if (cfg.bandwidth) {
        bandwidth_ = *cfg.bandwidth;
      } else {
        if (bandwidths.empty()) throw ConfigError("iptw: kernel outcome needs a bandwidth or candidates");
        bandwidth_ = smoother_->select_bandwidth(bandwidths);
      }
    }
  }

  double evaluate(double w) const {
    if (model_) {
      Matrix x(1, 1);
      x(0, 0) = w;
      return predict(*model_, x)[0];
    }
    return smoother_->evaluate(w, bandwidth_).value_or(kNaN);
  }

  const Vector& weights() const { return weights_; }

 private:
  Vector weights_;
  std::optional<MeanModel> model_;
  std::optional<KernelSmoother> smoother_;
  double bandwidth_ = kNaN;
};

inline ErfEstimate iptw_estimate(const Dataset& data, const GpsModel& gps, const ExposureGrid& grid,
                                 const IptwConfig& cfg = {}) {
  const auto bws = default_bandwidths(grid.delta(), grid.upper() - grid.origin());
  return curve_on_grid(Method::iptw, grid, IptwFit(data, gps, cfg, bws));
}

// ---- doubly robust --------------------------------------------------------

struct DrConfig {
  OutcomeModelConfig outcome;
  std::optional<double> trim_cap;  // cap on the stabilized weight; none by default
  Kernel kernel = Kernel::epanechnikov;
  std::optional<double> bandwidth;
  double gps_floor = kDefaultGpsFloor;
};

/// Pseudo-outcomes
///   zeta_j = (Y_j - mu(W_j, C_j)) / e(W_j, C_j) * mean_k e(W_j, c_k) + mean_k mu(W_j, c_k)
/// for a fitted GPS and an outcome model over (w, c).
inline Vector dr_pseudo_outcomes(const Dataset& data, const GpsModel& gps, const MeanModel& outcome,
                                 std::optional<double> trim_cap = std::nullopt) {
  const auto& d = data.design();
  const auto n = static_cast<Eigen::Index>(d.size());
  const auto q = static_cast<Eigen::Index>(d.num_covariates());
  const Vector means = gps.conditional_means(d.covariates());
  const Vector marginal = marginal_exposure_density(d, gps, means);
  Matrix x(n, q + 1);
  x.rightCols(q) = d.covariates();
  x.col(0) = d.exposures();
  const Vector mu_obs = predict(outcome, x);
  Vector zeta(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    x.col(0).setConstant(d.exposures()[j]);
    const double mu_int = predict(outcome, x).mean();
    double ratio = marginal[j] / gps.density_at_mean(d.exposures()[j], means[j]);
    if (trim_cap) ratio = std::min(ratio, *trim_cap);
    zeta[j] = (data.outcomes()[j] - mu_obs[j]) * ratio + mu_int;
  }
  return zeta;
}

class DrFit {
 public:
  DrFit(const Dataset& data, const GpsModel& gps, const DrConfig& cfg, std::span<const double> bandwidths = {}) {
    if (!cfg.trim_cap) require_positivity(data.design(), gps, cfg.gps_floor, "dr");
    const auto& d = data.design();
    const auto q = static_cast<Eigen::Index>(d.num_covariates());
    Matrix x(static_cast<Eigen::Index>(d.size()), q + 1);
    x.col(0) = d.exposures();
    x.rightCols(q) = d.covariates();
    std::vector<std::string> names{"w"};
    for (const auto& s : d.covariate_names()) names.push_back(s);
    outcome_ = fit_mean_model(x, data.outcomes(), cfg.outcome.learner, nullptr, names);
    pseudo_ = dr_pseudo_outcomes(data, gps, outcome_, cfg.trim_cap);
    if (!pseudo_.allFinite()) throw FitError("dr: non-finite pseudo-outcomes");
    const Vector& w = d.exposures();
    smoother_ = KernelSmoother(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())),
                               std::span<const double>(pseudo_.data(), static_cast<std::size_t>(pseudo_.size())), cfg.kernel);
    if (cfg.bandwidth) {
      bandwidth_ = *cfg.bandwidth;
    } else {
      if (bandwidths.empty()) throw ConfigError("dr: needs a bandwidth or candidates");
      bandwidth_ = smoother_.select_bandwidth(bandwidths);
    }
  }

  double evaluate(double w) const { return smoother_.evaluate(w, bandwidth_).value_or(kNaN); }
  const Vector& pseudo_outcomes() const { return pseudo_; }
  const MeanModel& outcome_model() const { return outcome_; }
  double bandwidth() const { return bandwidth_; }

 private:
  MeanModel outcome_;
  Vector pseudo_;
  KernelSmoother smoother_;
  double bandwidth_ = kNaN;
};

inline ErfEstimate dr_estimate(const Dataset& data, const GpsModel& gps, const ExposureGrid& grid, const DrConfig& cfg = {}) {
  const auto bws = default_bandwidths(grid.delta(), grid.upper() - grid.origin());
  DrFit fit(data, gps, cfg, bws);
  ErfEstimate e = curve_on_grid(Method::dr, grid, fit);
  e.kernel = cfg.kernel;
  e.bandwidth = fit.bandwidth();
  return e;
}

// ---- Poisson rate regression ----------------------------------------------

struct PoissonFit {
  double intercept = 0.0;
  double slope = 0.0;
  double rate_ratio_per_10 = 1.0;  // exp(10 * slope)
  int iterations = 0;
};

/// log E[y] = a + b x + log(offset), weighted, by damped Newton-Raphson.
inline PoissonFit poisson_regression(std::span<const double> x, std::span<const double> y, std::span<const double> offset,
                                     std::span<const double> weights, int max_iter = 100) {
  const std::size_t n = x.size();
  if (y.size() != n || offset.size() != n || weights.size() != n) throw SizeError("poisson: inputs differ in length");
  double sw = 0.0, swy = 0.0, swo = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(y[i] >= 0.0) || y[i] != std::floor(y[i])) throw TypeError("poisson: outcomes must be nonnegative integers");
    if (!(offset[i] > 0.0)) throw TypeError("poisson: offsets must be positive");
    sw += weights[i];
    swy += weights[i] * y[i];
    swo += weights[i] * offset[i];
  }
  if (!(swy > 0.0)) throw FitError("poisson: all counts are zero");
  auto loglik = [&](double a, double b) {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double eta = a + b * x[i] + std::log(offset[i]);
      ll += weights[i] * (y[i] * eta - std::exp(eta));
    }
    return ll;
  };
  double a = std::log(swy / swo), b = 0.0;
  double ll = loglik(a, b);
  for (int it = 1; it <= max_iter; ++it) {
    double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double mu = std::exp(a + b * x[i] + std::log(offset[i]));
      const double r = weights[i] * (y[i] - mu);
      const double wm = weights[i] * mu;
      g0 += r;
      g1 += r * x[i];
      h00 += wm;
      h01 += wm * x[i];
      h11 += wm * x[i] * x[i];
    }
    const double det = h00 * h11 - h01 * h01;
    if (!(std::abs(det) > 0.0)) throw FitError("poisson: singular information matrix");
    const double da = (h11 * g0 - h01 * g1) / det;
    const double db = (h00 * g1 - h01 * g0) / det;
    double step = 1.0;
    double na = a + da, nb = b + db, nll = loglik(na, nb);
    while (!(nll >= ll - 1e-12 * std::abs(ll)) && step > 1e-8) {
      step *= 0.5;
      na = a + step * da;
      nb = b + step * db;
      nll = loglik(na, nb);
    }
    const bool done = std::abs(step * da) <= 1e-12 * (1.0 + std::abs(a)) && std::abs(step * db) <= 1e-12 * (1.0 + std::abs(b));
    a = na;
    b = nb;
    ll = nll;
    if (done) return PoissonFit{a, b, std::exp(10.0 * b), it};
  }
  throw ConvergenceError("poisson: Newton-Raphson did not converge in " + std::to_string(max_iter) + " iterations");
}

/// Poisson rate regression on the matched observations: each matched unit
/// contributes its count and offset at the level exposure, weighted by its
/// multiplicity.
inline PoissonFit poisson_rate_fit(const MatchedSet& ms, const Dataset& data) {
  std::vector<double> x, y, off, wt;
  for (const auto& lv : ms.levels) {
    for (const auto& [u, k] : lv.multiplicity) {
      const auto uu = static_cast<Eigen::Index>(u);
      x.push_back(lv.level);
      y.push_back(data.outcomes()[uu]);
      off.push_back(data.offsets()[uu]);
      wt.push_back(static_cast<double>(k));
    }
  }
  return poisson_regression(x, y, off, wt);
}

// ---- export ---------------------------------------------------------------

/// w, point, smoothed, variance, ci_lo, ci_hi, method; undefined cells empty.
inline void write_erf_csv(std::ostream& out, const ErfEstimate& e) {
  auto cell = [&](const std::vector<double>& v, std::size_t i) {
    if (i < v.size() && std::isfinite(v[i])) out << format_double(v[i]);
  };
  out << "w,point,smoothed,variance,ci_lo,ci_hi,method\n";
  for (std::size_t i = 0; i < e.levels.size(); ++i) {
    out << format_double(e.levels[i]) << ',';
    cell(e.point, i);
    out << ',';
    cell(e.smoothed, i);
    out << ',';
    cell(e.variance, i);
    out << ',';
    cell(e.ci_lo, i);
    out << ',';
    cell(e.ci_hi, i);
    out << ',' << to_string(e.method) << '\n';
  }
}

}  // namespace gpsmatch
