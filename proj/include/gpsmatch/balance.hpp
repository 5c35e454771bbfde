#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpsmatch/csv.hpp"
#include "gpsmatch/data.hpp"
#include "gpsmatch/error.hpp"
#include "gpsmatch/matching.hpp"

namespace gpsmatch {

/// A multiset of observed units, each entry tagged with the block (grid
/// level) it represents and its multiplicity n_ik.
struct WeightedUnits {
  std::size_t num_blocks = 0;
  std::vector<std::size_t> block;
  std::vector<std::size_t> unit;
  std::vector<double> weight;

  std::size_t size() const { return unit.size(); }
  void add(std::size_t b, std::size_t u, double w) {
    block.push_back(b);
    unit.push_back(u);
    weight.push_back(w);
  }
};

/// Raw data: every unit once, in the block containing its exposure.
inline WeightedUnits raw_units(const DesignData& design, const ExposureGrid& grid) {
  WeightedUnits wu;
  wu.num_blocks = grid.size();
  for (std::size_t j = 0; j < design.size(); ++j) wu.add(grid.block_of(design.exposure(j)), j, 1.0);
  return wu;
}

/// Matched data: unit k appears in level i's block with weight K_i(k).
inline WeightedUnits matched_units(const MatchedSet& ms) {
  WeightedUnits wu;
  wu.num_blocks = ms.grid.size();
  for (const auto& lv : ms.levels) {
    for (const auto& [u, k] : lv.multiplicity) wu.add(lv.level_index, u, static_cast<double>(k));
  }
  return wu;
}

/// Centred and whitened covariates and exposure, one row per weighted entry.
struct Orthogonalized {
  Matrix c_star;
  Vector w_star;
  Vector weights;
  std::vector<std::size_t> block;
  std::size_t num_blocks = 0;
};

/// Whitens with the symmetric inverse square root of the weighted covariance
/// (weights normalised to sum to one).
inline Orthogonalized orthogonalize(const Matrix& c, const Vector& w, const Vector& weights,
                                    const std::vector<std::string>& names = {}) {
  const auto n = c.rows();
  const auto q = c.cols();
  if (n == 0 || w.size() != n || weights.size() != n) throw SizeError("orthogonalize: inconsistent input sizes");
  if (q == 0) throw OrthogonalizationError("no covariates to orthogonalize");
  const double total = weights.sum();
  if (!(total > 0.0)) throw OrthogonalizationError("weights sum to zero");

  const Eigen::RowVectorXd c_bar = (weights.transpose() * c) / total;
  const Matrix centred = c.rowwise() - c_bar;
  const Matrix s_c = (centred.transpose() * weights.asDiagonal() * centred) / total;
  const double w_bar = weights.dot(w) / total;
  const Vector w_centred = w.array() - w_bar;
  const double s_w = weights.dot(w_centred.cwiseProduct(w_centred)) / total;
  if (!(s_w > 0.0)) throw OrthogonalizationError("weighted exposure variance is zero");

  Eigen::SelfAdjointEigenSolver<Matrix> eig(s_c);
  if (eig.info() != Eigen::Success) throw OrthogonalizationError("eigendecomposition of covariate covariance failed");
  const Vector& vals = eig.eigenvalues();  // ascending
  const double largest = vals[q - 1];
  if (!(vals[0] > 0.0) || largest / vals[0] > 1e12) {
    std::string dir;
    const Vector v = eig.eigenvectors().col(0);
    for (Eigen::Index k = 0; k < q; ++k) {
      if (std::abs(v[k]) < 1e-6) continue;
      if (!dir.empty()) dir += " + ";
      dir += format_double(v[k]) + "*" + (static_cast<std::size_t>(k) < names.size() ? names[static_cast<std::size_t>(k)] : "c" + std::to_string(k + 1));
    }
    throw OrthogonalizationError("covariate covariance is singular or near-singular; null direction: " + dir);
  }
  const Matrix inv_root = eig.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();

  Orthogonalized out;
  out.c_star = centred * inv_root;  // inv_root is symmetric
  out.w_star = w_centred / std::sqrt(s_w);
  out.weights = weights;
  return out;
}

inline Orthogonalized orthogonalize(const DesignData& design, const WeightedUnits& units) {
  const auto n = static_cast<Eigen::Index>(units.size());
  Matrix c(n, static_cast<Eigen::Index>(design.num_covariates()));
  Vector w(n), wt(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto u = units.unit[static_cast<std::size_t>(r)];
    c.row(r) = design.covariate_row(u);
    w[r] = design.exposure(u);
    wt[r] = units.weight[static_cast<std::size_t>(r)];
  }
  Orthogonalized o = orthogonalize(c, w, wt, design.covariate_names());
  o.block = units.block;
  o.num_blocks = units.num_blocks;
  return o;
}

/// |weighted mean of C*_k W*| per covariate; lies in [0, 1].
inline Vector absolute_correlation(const Orthogonalized& o) {
  const double total = o.weights.sum();
  Vector r = ((o.c_star.transpose() * o.weights.cwiseProduct(o.w_star)) / total).cwiseAbs();
  return r.cwiseMin(1.0);
}

/// Per block i and covariate k: |mean of C*_k inside block i - mean outside|
/// (weighted). Rows of empty blocks are NaN.
inline Matrix blocked_std_bias(const Orthogonalized& o) {
  const auto blocks = o.num_blocks;
  if (blocks < 2) throw BlockError("blocked standardized bias needs at least 2 blocks, got " + std::to_string(blocks));
  if (o.block.size() != static_cast<std::size_t>(o.c_star.rows())) throw BlockError("block labels missing");
  const auto q = o.c_star.cols();
  Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(blocks), q);
  Vector wsum = Vector::Zero(static_cast<Eigen::Index>(blocks));
  for (Eigen::Index r = 0; r < o.c_star.rows(); ++r) {
    const auto b = static_cast<Eigen::Index>(o.block[static_cast<std::size_t>(r)]);
    sums.row(b) += o.weights[r] * o.c_star.row(r);
    wsum[b] += o.weights[r];
  }
  const Eigen::RowVectorXd all = sums.colwise().sum();
  const double all_w = wsum.sum();
  Matrix out(static_cast<Eigen::Index>(blocks), q);
  for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(blocks); ++b) {
    const double outside_w = all_w - wsum[b];
    if (!(wsum[b] > 0.0) || !(outside_w > 0.0)) {
      out.row(b).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.row(b) = (sums.row(b) / wsum[b] - (all - sums.row(b)) / outside_w).cwiseAbs();
  }
  return out;
}

struct BalanceThresholds {
  double correlation = 0.1;  // epsilon_1
  double block_bias = 0.2;   // epsilon_2
};

struct BalanceReport {
  std::vector<std::string> covariate_names;
  Vector abs_corr;
  double avg_abs_corr = 0.0;
  Matrix blocked_std_bias;     // I x q, NaN rows for empty blocks; empty when I < 2
  Vector block_avg_std_bias;   // per block mean over covariates
  double avg_blocked_std_bias = std::numeric_limits<double>::quiet_NaN();
  BalanceThresholds thresholds;
  std::vector<bool> covariate_pass;  // abs_corr < epsilon_1
  std::vector<bool> block_present;
  std::vector<bool> block_pass;      // every entry < epsilon_2

  bool all_covariates_pass() const {
    for (bool b : covariate_pass) {
      if (!b) return false;
    }
    return true;
  }
};

inline BalanceReport balance_of(const DesignData& design, const WeightedUnits& units, const BalanceThresholds& th = {}) {
  const Orthogonalized o = orthogonalize(design, units);
  BalanceReport r;
  r.covariate_names = design.covariate_names();
  r.thresholds = th;
  r.abs_corr = absolute_correlation(o);
  r.avg_abs_corr = r.abs_corr.mean();
  for (Eigen::Index k = 0; k < r.abs_corr.size(); ++k) r.covariate_pass.push_back(r.abs_corr[k] < th.correlation);
  if (units.num_blocks >= 2) {
    r.blocked_std_bias = blocked_std_bias(o);
    const auto blocks = r.blocked_std_bias.rows();
    r.block_avg_std_bias = Vector::Constant(blocks, std::numeric_limits<double>::quiet_NaN());
    double acc = 0.0;
    std::size_t present = 0;
    for (Eigen::Index b = 0; b < blocks; ++b) {
      const bool ok = !std::isnan(r.blocked_std_bias(b, 0));
      r.block_present.push_back(ok);
      if (!ok) {
        r.block_pass.push_back(false);
        continue;
      }
      r.block_avg_std_bias[b] = r.blocked_std_bias.row(b).mean();
      acc += r.block_avg_std_bias[b];
      ++present;
      r.block_pass.push_back((r.blocked_std_bias.row(b).array() < th.block_bias).all());
    }
    if (present > 0) r.avg_blocked_std_bias = acc / static_cast<double>(present);
  }
  return r;
}

/// Pre-matching (unit weights) and optional post-matching (multiplicity
/// weights) reports over the same blocks.
struct BalanceComparison {
  BalanceReport pre;
  std::optional<BalanceReport> post;
};

inline BalanceComparison balance_report(const DesignData& design, const MatchedSet& matched,
                                        const BalanceThresholds& th = {}) {
  if (matched.levels.empty()) throw PipelineError("matched set is empty");
  return {balance_of(design, raw_units(design, matched.grid), th), balance_of(design, matched_units(matched), th)};
}

inline BalanceComparison balance_report(const DesignData& design, const ExposureGrid& grid,
                                        const BalanceThresholds& th = {}) {
  return {balance_of(design, raw_units(design, grid), th), std::nullopt};
}

inline nlohmann::json to_json(const BalanceReport& r) {
  auto nan_safe = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["covariates"] = r.covariate_names;
  auto corr = nlohmann::json::array();
  for (Eigen::Index k = 0; k < r.abs_corr.size(); ++k) corr.push_back(r.abs_corr[k]);
  j["abs_corr"] = corr;
  j["avg_abs_corr"] = r.avg_abs_corr;
  j["covariate_pass"] = r.covariate_pass;
  auto blocks = nlohmann::json::array();
  for (Eigen::Index b = 0; b < r.blocked_std_bias.rows(); ++b) {
    auto row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < r.blocked_std_bias.cols(); ++k) row.push_back(nan_safe(r.blocked_std_bias(b, k)));
    blocks.push_back({{"block", b}, {"present", static_cast<bool>(r.block_present[static_cast<std::size_t>(b)])},
                      {"pass", static_cast<bool>(r.block_pass[static_cast<std::size_t>(b)])},
                      {"avg", nan_safe(r.block_avg_std_bias[b])}, {"std_bias", row}});
  }
  j["blocked_std_bias"] = blocks;
  j["avg_blocked_std_bias"] = nan_safe(r.avg_blocked_std_bias);
  j["thresholds"] = {{"correlation", r.thresholds.correlation}, {"block_bias", r.thresholds.block_bias}};
  return j;
}

inline nlohmann::json to_json(const BalanceComparison& c) {
  nlohmann::json j;
  j["pre"] = to_json(c.pre);
  j["post"] = c.post ? to_json(*c.post) : nlohmann::json(nullptr);
  return j;
}

/// covariate, pre_abs_corr, post_abs_corr (post empty without matching).
inline void write_balance_csv(std::ostream& out, const BalanceComparison& c) {
  out << "covariate,pre_abs_corr,post_abs_corr\n";
  for (std::size_t k = 0; k < c.pre.covariate_names.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    out << c.pre.covariate_names[k] << ',' << format_double(c.pre.abs_corr[kk]) << ',';
    if (c.post) out << format_double(c.post->abs_corr[kk]);
    out << '\n';
  }
}

}  // namespace gpsmatch
