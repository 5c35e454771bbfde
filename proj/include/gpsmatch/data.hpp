#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gpsmatch/error.hpp"

namespace gpsmatch {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Exposures and pre-exposure covariates: everything the design stage may
/// look at. There is deliberately no outcome column here.
class DesignData {
 public:
  DesignData() = default;

  DesignData(Vector exposures, Matrix covariates, std::vector<std::string> covariate_names = {})
      : exposures_(std::move(exposures)),
        covariates_(std::move(covariates)),
        covariate_names_(std::move(covariate_names)) {
    validate();
  }

  std::size_t size() const { return static_cast<std::size_t>(exposures_.size()); }
  std::size_t num_covariates() const { return static_cast<std::size_t>(covariates_.cols()); }

  const Vector& exposures() const { return exposures_; }
  const Matrix& covariates() const { return covariates_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  double exposure(std::size_t j) const { return exposures_[static_cast<Eigen::Index>(j)]; }
  auto covariate_row(std::size_t j) const { return covariates_.row(static_cast<Eigen::Index>(j)); }

  double min_exposure() const { return exposures_.minCoeff(); }
  double max_exposure() const { return exposures_.maxCoeff(); }

 private:
  void validate() {
    const auto n = exposures_.size();
    if (n < 2) throw SizeError("dataset needs at least 2 units, got " + std::to_string(n));
    if (covariates_.rows() != n) {
      throw SizeError("covariate matrix has " + std::to_string(covariates_.rows()) +
                      " rows but there are " + std::to_string(n) + " exposures");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::isfinite(exposures_[j])) {
        throw ParseError("non-finite exposure at unit " + std::to_string(j));
      }
    }
    if (!covariates_.allFinite()) throw ParseError("non-finite covariate value");
    if (!(max_exposure() > min_exposure())) {
      throw SizeError("exposure range is empty: all exposures equal " + std::to_string(min_exposure()));
    }
    if (covariate_names_.empty()) {
      for (Eigen::Index k = 0; k < covariates_.cols(); ++k) covariate_names_.push_back("c" + std::to_string(k + 1));
    }
    if (covariate_names_.size() != static_cast<std::size_t>(covariates_.cols())) {
      throw SizeError("covariate name count does not match covariate columns");
    }
    for (Eigen::Index k = 0; k < covariates_.cols(); ++k) {
      const auto col = covariates_.col(k);
      const double mean = col.mean();
      const double ss = (col.array() - mean).square().sum();
      if (!(ss > 0.0)) {
        throw SizeError("covariate '" + covariate_names_[static_cast<std::size_t>(k)] + "' has zero variance");
      }
    }
  }

  Vector exposures_;
  Matrix covariates_;
  std::vector<std::string> covariate_names_;
};

/// The full observational table: design data plus the analysis-stage
/// columns (outcomes, optional offsets) and unit identifiers.
class Dataset {
 public:
  Dataset() = default;

  explicit Dataset(DesignData design, std::optional<Vector> outcomes = std::nullopt,
                   std::optional<Vector> offsets = std::nullopt, std::vector<std::string> unit_ids = {})
      : design_(std::move(design)),
        outcomes_(std::move(outcomes)),
        offsets_(std::move(offsets)),
        unit_ids_(std::move(unit_ids)) {
    const auto n = static_cast<Eigen::Index>(design_.size());
    if (outcomes_) {
      if (outcomes_->size() != n) throw SizeError("outcome column length differs from exposures");
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!std::isfinite((*outcomes_)[j])) throw ParseError("non-finite outcome at unit " + std::to_string(j));
      }
    }
    if (offsets_) {
      if (offsets_->size() != n) throw SizeError("offset column length differs from exposures");
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!std::isfinite((*offsets_)[j]) || !((*offsets_)[j] > 0.0)) {
          throw ParseError("offset must be positive and finite at unit " + std::to_string(j));
        }
      }
    }
    if (unit_ids_.empty()) {
      unit_ids_.reserve(design_.size());
      for (std::size_t j = 0; j < design_.size(); ++j) unit_ids_.push_back(std::to_string(j + 1));
    }
    if (unit_ids_.size() != design_.size()) throw SizeError("unit id count differs from exposures");
  }

  const DesignData& design() const { return design_; }
  std::size_t size() const { return design_.size(); }
  std::size_t num_covariates() const { return design_.num_covariates(); }

  bool has_outcomes() const { return outcomes_.has_value(); }
  bool has_offsets() const { return offsets_.has_value(); }

  const Vector& outcomes() const {
    if (!outcomes_) throw SchemaError("dataset has no outcome column");
    return *outcomes_;
  }
  const Vector& offsets() const {
    if (!offsets_) throw SchemaError("dataset has no offset column");
    return *offsets_;
  }
  const std::vector<std::string>& unit_ids() const { return unit_ids_; }

  /// Rows picked by index; duplicates allowed (resampling).
  Dataset subset(std::span<const std::size_t> rows) const {
    const auto m = static_cast<Eigen::Index>(rows.size());
    Vector w(m);
    Matrix c(m, design_.covariates().cols());
    std::vector<std::string> ids;
    ids.reserve(rows.size());
    std::optional<Vector> y, off;
    if (outcomes_) y = Vector(m);
    if (offsets_) off = Vector(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto j = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
      w[r] = design_.exposures()[j];
      c.row(r) = design_.covariates().row(j);
      if (y) (*y)[r] = (*outcomes_)[j];
      if (off) (*off)[r] = (*offsets_)[j];
      ids.push_back(unit_ids_[static_cast<std::size_t>(j)]);
    }
    return Dataset(DesignData(std::move(w), std::move(c), design_.covariate_names()), std::move(y), std::move(off),
                   std::move(ids));
  }

  Dataset with_outcomes(Vector outcomes) const {
    return Dataset(design_, std::move(outcomes), offsets_, unit_ids_);
  }

 private:
  DesignData design_;
  std::optional<Vector> outcomes_;
  std::optional<Vector> offsets_;
  std::vector<std::string> unit_ids_;
};

/// Equidistant exposure levels w_i = w0 + (2i - 1) delta, i = 1..I, each the
/// centre of a block of half-width delta.
class ExposureGrid {
 public:
  ExposureGrid() = default;

  ExposureGrid(double origin, double upper, double delta) : origin_(origin), upper_(upper), delta_(delta) {
    if (!std::isfinite(origin) || !std::isfinite(upper) || !(upper > origin)) {
      throw CaliperError("exposure range must satisfy w1 > w0");
    }
    if (!std::isfinite(delta) || !(delta > 0.0)) throw CaliperError("caliper must be positive");
    if (!(delta < (upper - origin) / 2.0)) {
      throw CaliperError("caliper " + std::to_string(delta) + " must be below half the exposure range " +
                         std::to_string((upper - origin) / 2.0));
    }
    count_ = static_cast<std::size_t>(std::floor((upper - origin) / (2.0 * delta) + 0.5));
    levels_.resize(count_);
    for (std::size_t i = 0; i < count_; ++i) levels_[i] = origin + static_cast<double>(2 * i + 1) * delta;
  }

  double origin() const { return origin_; }
  double upper() const { return upper_; }
  double delta() const { return delta_; }
  std::size_t size() const { return count_; }
  const std::vector<double>& levels() const { return levels_; }
  double level(std::size_t i) const { return levels_[i]; }

  /// Block index of an exposure. Blocks are [w_i - delta, w_i + delta) with
  /// the last one closed; values past the last block fall into it and
  /// values below w0 into the first.
  std::size_t block_of(double w) const {
    const double width = 2.0 * delta_;
    double raw = std::floor((w - origin_) / width);
    if (!(raw > 0.0)) return 0;
    auto idx = static_cast<std::size_t>(std::min(raw, static_cast<double>(count_ - 1)));
    // Repair floor() rounding at block edges.
    while (idx > 0 && w < levels_[idx] - delta_) --idx;
    while (idx + 1 < count_ && w >= levels_[idx] + delta_) ++idx;
    return idx;
  }

 private:
  double origin_ = 0.0;
  double upper_ = 1.0;
  double delta_ = 0.25;
  std::size_t count_ = 0;
  std::vector<double> levels_;
};

inline ExposureGrid make_grid(double w0, double w1, double delta) { return ExposureGrid(w0, w1, delta); }

/// Grid over the empirical exposure range of the data.
inline ExposureGrid make_grid(const DesignData& design, double delta) {
  return ExposureGrid(design.min_exposure(), design.max_exposure(), delta);
}

inline ExposureGrid make_grid(const Dataset& data, double delta) { return make_grid(data.design(), delta); }

constexpr double kDefaultGpsFloor = 1e-10;

struct AssumptionReport {
  std::vector<bool> overlap_flags;  // per level: some GPS in the block below the floor
  double gps_floor = kDefaultGpsFloor;
  std::vector<std::size_t> unmatched_levels;

  bool any_overlap_flag() const { return std::find(overlap_flags.begin(), overlap_flags.end(), true) != overlap_flags.end(); }
};

}  // namespace gpsmatch
