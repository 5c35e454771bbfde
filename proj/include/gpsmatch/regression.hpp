#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gpsmatch/data.hpp"
#include "gpsmatch/error.hpp"

namespace gpsmatch {

enum class LearnerKind { linear, polynomial, boosted_stumps };

inline std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::linear: return "linear";
    case LearnerKind::polynomial: return "polynomial";
    case LearnerKind::boosted_stumps: return "boosted-stumps";
  }
  return "?";
}

struct LearnerConfig {
  LearnerKind kind = LearnerKind::linear;
  // polynomial
  int degree = 2;
  bool interactions = true;
  // boosted stumps
  int trees = 200;
  double learning_rate = 0.1;
  int min_leaf = 10;
};

struct LinearModel {
  double intercept = 0.0;
  Vector coefficients;  // one per input column
};

/// OLS on monomials of the (internally standardized) inputs.
struct PolynomialModel {
  int degree = 1;
  std::vector<std::vector<int>> terms;  // exponent per input, constant term excluded
  Vector center;
  Vector scale;
  double intercept = 0.0;
  Vector coefficients;  // one per term
};

struct Stump {
  int feature = 0;
  double threshold = 0.0;
  double left = 0.0;   // added when x[feature] < threshold
  double right = 0.0;  // added otherwise
};

struct StumpEnsemble {
  std::size_t inputs = 0;
  double base = 0.0;
  double learning_rate = 0.1;
  std::vector<Stump> stumps;
};

using MeanModel = std::variant<LinearModel, PolynomialModel, StumpEnsemble>;

namespace detail {

/// All exponent vectors over `p` inputs with total degree in [1, degree];
/// without interactions only pure powers are kept.
inline std::vector<std::vector<int>> monomial_terms(int p, int degree, bool interactions) {
  std::vector<std::vector<int>> out;
  if (!interactions) {
    for (int e = 1; e <= degree; ++e) {
      for (int k = 0; k < p; ++k) {
        std::vector<int> t(static_cast<std::size_t>(p), 0);
        t[static_cast<std::size_t>(k)] = e;
        out.push_back(std::move(t));
      }
    }
    return out;
  }
  std::vector<int> current(static_cast<std::size_t>(p), 0);
  // Enumerate by total degree, then lexicographically, for a stable order.
  for (int total = 1; total <= degree; ++total) {
    auto recurse = [&](auto&& self, int k, int remaining) -> void {
      if (k == p - 1) {
        current[static_cast<std::size_t>(k)] = remaining;
        out.push_back(current);
        current[static_cast<std::size_t>(k)] = 0;
        return;
      }
      for (int e = remaining; e >= 0; --e) {
        current[static_cast<std::size_t>(k)] = e;
        self(self, k + 1, remaining - e);
      }
      current[static_cast<std::size_t>(k)] = 0;
    };
    if (p > 0) recurse(recurse, 0, total);
  }
  return out;
}

inline std::string term_name(const std::vector<int>& term, const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t k = 0; k < term.size(); ++k) {
    if (term[k] == 0) continue;
    if (!s.empty()) s += "*";
    s += k < names.size() ? names[k] : "x" + std::to_string(k + 1);
    if (term[k] > 1) s += "^" + std::to_string(term[k]);
  }
  return s;
}

inline Matrix polynomial_features(const PolynomialModel& m, const Matrix& x) {
  const auto n = x.rows();
  const auto p = x.cols();
  const auto t = static_cast<Eigen::Index>(m.terms.size());
  Matrix f(n, t);
  std::vector<double> powers(static_cast<std::size_t>(p * (m.degree + 1)));
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index k = 0; k < p; ++k) {
      const double z = (x(r, k) - m.center[k]) / m.scale[k];
      double acc = 1.0;
      for (int e = 0; e <= m.degree; ++e) {
        powers[static_cast<std::size_t>(k * (m.degree + 1) + e)] = acc;
        acc *= z;
      }
    }
    for (Eigen::Index i = 0; i < t; ++i) {
      double v = 1.0;
      const auto& term = m.terms[static_cast<std::size_t>(i)];
      for (Eigen::Index k = 0; k < p; ++k) {
        const int e = term[static_cast<std::size_t>(k)];
        if (e != 0) v *= powers[static_cast<std::size_t>(k * (m.degree + 1) + e)];
      }
      f(r, i) = v;
    }
  }
  return f;
}

/// Weighted least squares with an intercept. Rank deficiency is an error
/// that names the columns the pivoted QR could not resolve.
inline std::pair<double, Vector> least_squares(const Matrix& x, const Vector& y, const Vector* weights,
                                               const std::vector<std::string>& names) {
  const auto n = x.rows();
  const auto p = x.cols();
  if (n < p + 1) {
    throw FitError("least squares needs at least " + std::to_string(p + 1) + " observations, got " + std::to_string(n));
  }
  Matrix design(n, p + 1);
  design.col(0).setOnes();
  design.rightCols(p) = x;
  Vector rhs = y;
  if (weights) {
    const Vector sw = weights->array().sqrt().matrix();
    design = sw.asDiagonal() * design;
    rhs = sw.asDiagonal() * rhs;
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < p + 1) {
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < p + 1; ++i) {
      const auto c = perm[i];
      if (!cols.empty()) cols += ", ";
      cols += c == 0 ? std::string("intercept")
                     : (static_cast<std::size_t>(c - 1) < names.size() ? names[static_cast<std::size_t>(c - 1)]
                                                                       : "x" + std::to_string(c));
    }
    throw FitError("singular design matrix; collinear columns: " + cols);
  }
  const Vector beta = qr.solve(rhs);
  return {beta[0], beta.tail(p)};
}

}  // namespace detail

inline LinearModel fit_linear(const Matrix& x, const Vector& y, const Vector* weights = nullptr,
                              const std::vector<std::string>& names = {}) {
  auto [b0, b] = detail::least_squares(x, y, weights, names);
  return LinearModel{b0, std::move(b)};
}

inline PolynomialModel fit_polynomial(const Matrix& x, const Vector& y, int degree, bool interactions = true,
                                      const Vector* weights = nullptr, const std::vector<std::string>& names = {}) {
  if (degree < 1) throw ConfigError("polynomial degree must be at least 1");
  PolynomialModel m;
  m.degree = degree;
  const auto p = x.cols();
  m.terms = detail::monomial_terms(static_cast<int>(p), degree, interactions);
  m.center = x.colwise().mean().transpose();
  m.scale.resize(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const double sd = std::sqrt((x.col(k).array() - m.center[k]).square().mean());
    m.scale[k] = sd > 0.0 ? sd : 1.0;
  }
  std::vector<std::string> term_names;
  for (const auto& t : m.terms) term_names.push_back(detail::term_name(t, names));
  const Matrix f = detail::polynomial_features(m, x);
  auto [b0, b] = detail::least_squares(f, y, weights, term_names);
  m.intercept = b0;
  m.coefficients = std::move(b);
  return m;
}

/// Gradient boosting of depth-1 regression trees under squared error.
/// Split search is exhaustive over presorted features, so the fit is a
/// deterministic function of the data.
inline StumpEnsemble fit_boosted_stumps(const Matrix& x, const Vector& y, int trees, double learning_rate,
                                        int min_leaf = 10, const Vector* weights = nullptr) {
  if (trees < 0) throw ConfigError("tree count must be nonnegative");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("learning rate must lie in (0, 1]");
  const auto n = x.rows();
  const auto p = x.cols();
  Vector w = weights ? *weights : Vector::Ones(n);
  const double wsum = w.sum();
  if (!(wsum > 0.0)) throw FitError("weights sum to zero");

  StumpEnsemble model;
  model.inputs = static_cast<std::size_t>(p);
  model.learning_rate = learning_rate;
  model.base = w.dot(y) / wsum;
  Vector fitted = Vector::Constant(n, model.base);

  std::vector<std::vector<Eigen::Index>> order(static_cast<std::size_t>(p));
  for (Eigen::Index k = 0; k < p; ++k) {
    auto& o = order[static_cast<std::size_t>(k)];
    o.resize(static_cast<std::size_t>(n));
    std::iota(o.begin(), o.end(), Eigen::Index{0});
    std::stable_sort(o.begin(), o.end(), [&](auto a, auto b) { return x(a, k) < x(b, k); });
  }

  const auto leaf = static_cast<Eigen::Index>(std::max(1, min_leaf));
  for (int t = 0; t < trees; ++t) {
    const Vector r = y - fitted;
    const Vector wr = w.cwiseProduct(r);
    const double total_wr = wr.sum();
    double best_gain = 0.0;
    std::optional<Stump> best;
    for (Eigen::Index k = 0; k < p; ++k) {
      const auto& o = order[static_cast<std::size_t>(k)];
      double left_w = 0.0, left_wr = 0.0;
      for (Eigen::Index i = 0; i + 1 < n; ++i) {
        const auto idx = o[static_cast<std::size_t>(i)];
        left_w += w[idx];
        left_wr += wr[idx];
        const double here = x(idx, k);
        const double next = x(o[static_cast<std::size_t>(i + 1)], k);
        if (!(next > here)) continue;
        if (i + 1 < leaf || n - i - 1 < leaf) continue;
        const double right_w = wsum - left_w;
        if (!(left_w > 0.0 && right_w > 0.0)) continue;
        const double right_wr = total_wr - left_wr;
        const double gain = left_wr * left_wr / left_w + right_wr * right_wr / right_w - total_wr * total_wr / wsum;
        if (gain > best_gain * (1.0 + 1e-12) + 1e-300) {
          best_gain = gain;
          best = Stump{static_cast<int>(k), 0.5 * (here + next), left_wr / left_w, right_wr / right_w};
        }
      }
    }
    if (!best) break;
    best->left *= learning_rate;
    best->right *= learning_rate;
    for (Eigen::Index j = 0; j < n; ++j) fitted[j] += x(j, best->feature) < best->threshold ? best->left : best->right;
    model.stumps.push_back(*best);
  }
  return model;
}

inline MeanModel fit_mean_model(const Matrix& x, const Vector& y, const LearnerConfig& cfg,
                                const Vector* weights = nullptr, const std::vector<std::string>& names = {}) {
  switch (cfg.kind) {
    case LearnerKind::linear: return fit_linear(x, y, weights, names);
    case LearnerKind::polynomial: return fit_polynomial(x, y, cfg.degree, cfg.interactions, weights, names);
    case LearnerKind::boosted_stumps:
      return fit_boosted_stumps(x, y, cfg.trees, cfg.learning_rate, cfg.min_leaf, weights);
  }
  throw ConfigError("unknown learner");
}

/// Batch prediction, one row of `x` per prediction.
inline Vector predict(const MeanModel& model, const Matrix& x) {
  return std::visit(
      [&](const auto& m) -> Vector {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LinearModel>) {
          return (x * m.coefficients).array() + m.intercept;
        } else if constexpr (std::is_same_v<M, PolynomialModel>) {
          return (detail::polynomial_features(m, x) * m.coefficients).array() + m.intercept;
        } else {
          Vector out = Vector::Constant(x.rows(), m.base);
          for (const auto& s : m.stumps) {
            for (Eigen::Index j = 0; j < x.rows(); ++j) out[j] += x(j, s.feature) < s.threshold ? s.left : s.right;
          }
          return out;
        }
      },
      model);
}

template <typename Row>
double predict_one(const MeanModel& model, const Row& row) {
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    double v = lin->intercept;
    for (Eigen::Index k = 0; k < lin->coefficients.size(); ++k) v += lin->coefficients[k] * row[k];
    return v;
  }
  if (const auto* ens = std::get_if<StumpEnsemble>(&model)) {
    double v = ens->base;
    for (const auto& s : ens->stumps) v += row[s.feature] < s.threshold ? s.left : s.right;
    return v;
  }
  Matrix x(1, row.size());
  for (Eigen::Index k = 0; k < row.size(); ++k) x(0, k) = row[k];
  return predict(model, x)[0];
}

inline std::size_t num_inputs(const MeanModel& model) {
  return std::visit(
      [](const auto& m) -> std::size_t {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LinearModel>) {
          return static_cast<std::size_t>(m.coefficients.size());
        } else if constexpr (std::is_same_v<M, PolynomialModel>) {
          return static_cast<std::size_t>(m.center.size());
        } else {
          return m.inputs;
        }
      },
      model);
}

}  // namespace gpsmatch
