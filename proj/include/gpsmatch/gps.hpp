#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "json.hpp"

#include "gpsmatch/data.hpp"
#include "gpsmatch/error.hpp"
#include "gpsmatch/regression.hpp"

namespace gpsmatch {

/// Learner for the conditional mean of the exposure; the residual density is
/// Gaussian with a global standard deviation in every case.
struct GpsConfig {
  LearnerConfig learner;
};

inline std::string gps_learner_name(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::linear: return "normal-linear";
    case LearnerKind::polynomial: return "polynomial-normal";
    case LearnerKind::boosted_stumps: return "boosted-stumps-normal";
  }
  return "?";
}

inline LearnerKind gps_learner_from_name(const std::string& name) {
  if (name == "normal-linear" || name == "normal" || name == "linear") return LearnerKind::linear;
  if (name == "polynomial-normal" || name == "poly" || name == "polynomial") return LearnerKind::polynomial;
  if (name == "boosted-stumps-normal" || name == "boost" || name == "boosted-stumps") return LearnerKind::boosted_stumps;
  throw ConfigError("unknown GPS learner '" + name + "'");
}

struct TrainingSummary {
  std::size_t n = 0;
  std::size_t q = 0;
  double log_likelihood = 0.0;
};

/// Fitted conditional density e(w, c) = N(w; m(c), sigma^2).
class GpsModel {
 public:
  GpsModel() = default;
  GpsModel(LearnerKind kind, MeanModel mean, double residual_sd, TrainingSummary summary)
      : kind_(kind), mean_(std::move(mean)), residual_sd_(residual_sd), summary_(summary) {
    if (!(residual_sd_ > 0.0) || !std::isfinite(residual_sd_)) throw DegeneracyError("residual sd must be positive");
  }

  LearnerKind kind() const { return kind_; }
  const MeanModel& mean_model() const { return mean_; }
  double residual_sd() const { return residual_sd_; }
  const TrainingSummary& training_summary() const { return summary_; }
  std::size_t num_covariates() const { return summary_.q; }

  template <typename Row>
  double conditional_mean(const Row& c) const {
    return predict_one(mean_, c);
  }

  Vector conditional_means(const Matrix& covariates) const { return predict(mean_, covariates); }

  /// Density of the exposure at `w` for a unit whose conditional mean is
  /// `mean`. Never returns zero: underflow is clamped to the smallest
  /// normal double.
  double density_at_mean(double w, double mean) const {
    const double z = (w - mean) / residual_sd_;
    const double d = std::exp(-0.5 * z * z) / (std::sqrt(2.0 * std::numbers::pi) * residual_sd_);
    return std::max(d, std::numeric_limits<double>::min());
  }

  double log_density_at_mean(double w, double mean) const {
    const double z = (w - mean) / residual_sd_;
    return -0.5 * z * z - std::log(std::sqrt(2.0 * std::numbers::pi) * residual_sd_);
  }

 private:
  LearnerKind kind_ = LearnerKind::linear;
  MeanModel mean_;
  double residual_sd_ = 1.0;
  TrainingSummary summary_;
};

inline GpsModel fit_gps(const DesignData& design, const GpsConfig& cfg = {}) {
  const auto& lc = cfg.learner;
  if (lc.kind == LearnerKind::boosted_stumps) {
    if (lc.trees < 1) throw ConfigError("boosted stumps need at least one tree");
    if (!(lc.learning_rate > 0.0 && lc.learning_rate <= 1.0)) throw ConfigError("learning rate must lie in (0, 1]");
  }
  const Matrix& c = design.covariates();
  const Vector& w = design.exposures();
  MeanModel mean = fit_mean_model(c, w, lc, nullptr, design.covariate_names());
  const Vector resid = w - predict(mean, c);
  const double n = static_cast<double>(design.size());
  const double sigma = std::sqrt(resid.squaredNorm() / n);
  const double w_sd = std::sqrt((w.array() - w.mean()).square().sum() / n);
  if (!(sigma > 1e-10 * w_sd)) {
    throw DegeneracyError("GPS model fits the exposure exactly (residual sd " + std::to_string(sigma) + ")");
  }
  TrainingSummary summary{design.size(), design.num_covariates(),
                          -0.5 * n * (std::log(2.0 * std::numbers::pi * sigma * sigma) + 1.0)};
  return GpsModel(lc.kind, std::move(mean), sigma, summary);
}

/// e(w, c) for a single exposure/covariate pair.
template <typename Row>
double evaluate_gps(const GpsModel& model, double w, const Row& c) {
  if (!std::isfinite(w)) throw InputError("exposure must be finite");
  if (static_cast<std::size_t>(c.size()) != model.num_covariates()) {
    throw InputError("covariate vector has " + std::to_string(c.size()) + " entries, model expects " +
                     std::to_string(model.num_covariates()));
  }
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    if (!std::isfinite(c[k])) throw InputError("covariates must be finite");
  }
  return model.density_at_mean(w, model.conditional_mean(c));
}

/// Estimated GPS at every observed (w_j, c_j), with the extremes used for
/// standardization.
struct GpsSurface {
  GpsModel model;
  Vector observed_gps;
  Vector conditional_means;  // m(c_j), cached for counterfactual evaluation
  double min = 0.0;
  double max = 0.0;
  bool degenerate = false;

  std::size_t size() const { return static_cast<std::size_t>(observed_gps.size()); }

  /// Counterfactual GPS e(w, c_j) of unit j at exposure w.
  double counterfactual(std::size_t j, double w) const {
    return model.density_at_mean(w, conditional_means[static_cast<Eigen::Index>(j)]);
  }
};

inline GpsSurface gps_surface(const GpsModel& model, const DesignData& design) {
  if (design.num_covariates() != model.num_covariates()) {
    throw InputError("GPS model was fitted on " + std::to_string(model.num_covariates()) + " covariates, data has " +
                     std::to_string(design.num_covariates()));
  }
  GpsSurface s;
  s.model = model;
  s.conditional_means = model.conditional_means(design.covariates());
  const auto n = static_cast<Eigen::Index>(design.size());
  s.observed_gps.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    s.observed_gps[j] = model.density_at_mean(design.exposures()[j], s.conditional_means[j]);
  }
  s.min = s.observed_gps.minCoeff();
  s.max = s.observed_gps.maxCoeff();
  s.degenerate = !(s.max > s.min);
  return s;
}

/// Overlap diagnostics: a level is flagged when any observed GPS inside its
/// block falls below the floor.
inline AssumptionReport check_overlap(const GpsSurface& surface, const DesignData& design, const ExposureGrid& grid,
                                      double gps_floor = kDefaultGpsFloor) {
  AssumptionReport r;
  r.gps_floor = gps_floor;
  r.overlap_flags.assign(grid.size(), false);
  for (std::size_t j = 0; j < design.size(); ++j) {
    if (surface.observed_gps[static_cast<Eigen::Index>(j)] < gps_floor) r.overlap_flags[grid.block_of(design.exposure(j))] = true;
  }
  return r;
}

// ---- JSON -----------------------------------------------------------------

namespace detail {

inline nlohmann::json vec_to_json(const Vector& v) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vec_from_json(const nlohmann::json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::json mean_model_to_json(const MeanModel& model) {
  return std::visit(
      [](const auto& m) -> nlohmann::json {
        using M = std::decay_t<decltype(m)>;
        nlohmann::json j;
        if constexpr (std::is_same_v<M, LinearModel>) {
          j["type"] = "linear";
          j["intercept"] = m.intercept;
          j["coefficients"] = detail::vec_to_json(m.coefficients);
        } else if constexpr (std::is_same_v<M, PolynomialModel>) {
          j["type"] = "polynomial";
          j["degree"] = m.degree;
          j["terms"] = m.terms;
          j["center"] = detail::vec_to_json(m.center);
          j["scale"] = detail::vec_to_json(m.scale);
          j["intercept"] = m.intercept;
          j["coefficients"] = detail::vec_to_json(m.coefficients);
        } else {
          j["type"] = "boosted-stumps";
          j["inputs"] = m.inputs;
          j["base"] = m.base;
          j["learning_rate"] = m.learning_rate;
          auto stumps = nlohmann::json::array();
          for (const auto& s : m.stumps) stumps.push_back({s.feature, s.threshold, s.left, s.right});
          j["stumps"] = std::move(stumps);
        }
        return j;
      },
      model);
}

inline MeanModel mean_model_from_json(const nlohmann::json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "linear") {
    return LinearModel{j.at("intercept").get<double>(), detail::vec_from_json(j.at("coefficients"))};
  }
  if (type == "polynomial") {
    PolynomialModel m;
    m.degree = j.at("degree").get<int>();
    m.terms = j.at("terms").get<std::vector<std::vector<int>>>();
    m.center = detail::vec_from_json(j.at("center"));
    m.scale = detail::vec_from_json(j.at("scale"));
    m.intercept = j.at("intercept").get<double>();
    m.coefficients = detail::vec_from_json(j.at("coefficients"));
    return m;
  }
  if (type == "boosted-stumps") {
    StumpEnsemble m;
    m.inputs = j.at("inputs").get<std::size_t>();
    m.base = j.at("base").get<double>();
    m.learning_rate = j.at("learning_rate").get<double>();
    for (const auto& s : j.at("stumps")) {
      m.stumps.push_back(Stump{s.at(0).get<int>(), s.at(1).get<double>(), s.at(2).get<double>(), s.at(3).get<double>()});
    }
    return m;
  }
  throw InputError("unknown mean model type '" + type + "'");
}

inline nlohmann::json to_json(const GpsModel& model) {
  nlohmann::json j;
  j["learner"] = gps_learner_name(model.kind());
  j["residual_sd"] = model.residual_sd();
  j["training"] = {{"n", model.training_summary().n},
                   {"q", model.training_summary().q},
                   {"log_likelihood", model.training_summary().log_likelihood}};
  j["mean"] = mean_model_to_json(model.mean_model());
  return j;
}

inline GpsModel gps_model_from_json(const nlohmann::json& j) {
  const auto& t = j.at("training");
  TrainingSummary s{t.at("n").get<std::size_t>(), t.at("q").get<std::size_t>(), t.at("log_likelihood").get<double>()};
  return GpsModel(gps_learner_from_name(j.at("learner").get<std::string>()), mean_model_from_json(j.at("mean")),
                  j.at("residual_sd").get<double>(), s);
}

}  // namespace gpsmatch
