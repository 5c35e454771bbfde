#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpsmatch/error.hpp"

namespace gpsmatch {

enum class Kernel { uniform, epanechnikov, gaussian };

inline Kernel kernel_from_name(const std::string& s) {
  if (s == "uniform") return Kernel::uniform;
  if (s == "epanechnikov") return Kernel::epanechnikov;
  if (s == "gaussian") return Kernel::gaussian;
  throw ConfigError("unknown smoother '" + s + "' (expected uniform, epanechnikov or gaussian)");
}

inline std::string to_string(Kernel k) {
  switch (k) {
    case Kernel::uniform: return "uniform";
    case Kernel::epanechnikov: return "epanechnikov";
    case Kernel::gaussian: return "gaussian";
  }
  return "?";
}

/// Symmetric densities supported on [-1, 1]; the Gaussian is truncated there
/// and renormalised.
inline double kernel_weight(Kernel k, double u) {
  const double a = std::abs(u);
  if (a > 1.0) return 0.0;
  switch (k) {
    case Kernel::uniform: return 0.5;
    case Kernel::epanechnikov: return 0.75 * (1.0 - u * u);
    case Kernel::gaussian: {
      // 1 / (sqrt(2 pi) * (2 Phi(1) - 1))
      constexpr double norm = 0.5843685672568167;
      return norm * std::exp(-0.5 * u * u);
    }
  }
  return 0.0;
}

/// Nadaraya-Watson regression over a fixed sample, sorted once so each
/// evaluation only visits points inside the kernel window.
class KernelSmoother {
 public:
  KernelSmoother() = default;

  KernelSmoother(std::span<const double> x, std::span<const double> y, Kernel kernel,
                 std::span<const double> weights = {})
      : kernel_(kernel) {
    if (x.size() != y.size() || (!weights.empty() && weights.size() != x.size())) {
      throw InputError("smoother inputs differ in length");
    }
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    x_.reserve(x.size());
    y_.reserve(x.size());
    w_.reserve(x.size());
    for (auto i : order) {
      x_.push_back(x[i]);
      y_.push_back(y[i]);
      w_.push_back(weights.empty() ? 1.0 : weights[i]);
    }
  }

  std::size_t size() const { return x_.size(); }
  Kernel kernel() const { return kernel_; }

  /// Weighted local average at x0; nothing when every weight vanishes.
  std::optional<double> evaluate(double x0, double h) const { return evaluate_impl(x0, h, std::nullopt); }

  /// Leave-one-out cross-validation score (mean squared error) over the
  /// points with x in [lo, hi]; infinite if any of them has no neighbours
  /// at this bandwidth.
  double loo_score(double h, double lo = -std::numeric_limits<double>::infinity(),
                   double hi = std::numeric_limits<double>::infinity()) const {
    double sse = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < x_.size(); ++i) {
      if (x_[i] < lo || x_[i] > hi) continue;
      ++used;
      const auto pred = evaluate_impl(x_[i], h, i);
      if (!pred) return std::numeric_limits<double>::infinity();
      const double r = y_[i] - *pred;
      sse += r * r;
    }
    return used == 0 ? std::numeric_limits<double>::infinity() : sse / static_cast<double>(used);
  }

  /// The candidate with the smallest LOO score (earliest on ties); the
  /// largest candidate if none is usable.
  double select_bandwidth(std::span<const double> candidates, double lo = -std::numeric_limits<double>::infinity(),
                          double hi = std::numeric_limits<double>::infinity()) const {
    if (candidates.empty()) throw ConfigError("no bandwidth candidates");
    double best_h = candidates.back();
    double best = std::numeric_limits<double>::infinity();
    for (double h : candidates) {
      const double s = loo_score(h, lo, hi);
      if (s < best) {
        best = s;
        best_h = h;
      }
    }
    return best_h;
  }

 private:
  std::optional<double> evaluate_impl(double x0, double h, std::optional<std::size_t> skip) const {
    if (!(h > 0.0)) throw ConfigError("bandwidth must be positive");
    auto lo = std::lower_bound(x_.begin(), x_.end(), x0 - h);
    auto hi = std::upper_bound(x_.begin(), x_.end(), x0 + h);
    double num = 0.0, den = 0.0;
    for (auto it = lo; it != hi; ++it) {
      const auto i = static_cast<std::size_t>(it - x_.begin());
      if (skip && *skip == i) continue;
      const double k = w_[i] * kernel_weight(kernel_, (x_[i] - x0) / h);
      num += k * y_[i];
      den += k;
    }
    if (!(den > 0.0)) return std::nullopt;
    return num / den;
  }

  Kernel kernel_ = Kernel::epanechnikov;
  std::vector<double> x_, y_, w_;
};

/// `count` log-spaced values from lo to hi inclusive.
inline std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi >= lo) || count == 0) throw ConfigError("invalid log-spaced range");
  std::vector<double> out(count);
  if (count == 1 || hi == lo) {
    std::fill(out.begin(), out.end(), lo);
    return out;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

/// Default search range for the smoother bandwidth: [2 delta, range / 4],
/// 20 log-spaced candidates.
inline std::vector<double> default_bandwidths(double delta, double exposure_span) {
  const double lo = 2.0 * delta;
  const double hi = std::max(lo, exposure_span / 4.0);
  return log_spaced(lo, hi, 20);
}

}  // namespace gpsmatch
