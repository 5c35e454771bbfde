#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gpsmatch.hpp"

using namespace gpsmatch;

namespace {

Dataset from_csv(const std::string& text, const Schema& schema = {}) {
  std::istringstream in(text);
  return read_dataset(in, schema);
}

DesignData random_design(std::size_t n, std::size_t q, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Matrix c(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  Vector w(static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < c.cols(); ++k) {
      c(j, k) = z(rng);
      s += 0.5 * c(j, k);
    }
    w[j] = 3.0 + s + z(rng);
  }
  return DesignData(w, c);
}

}  // namespace

// ---- data model ---------------------------------------------------------

TEST(Csv, ParsesThreeRows) {
  const auto d = from_csv("w,y,c1,c2\n1,2,3,4\n2,3,4,5\n3,4,5,7\n");
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.num_covariates(), 2u);
  EXPECT_DOUBLE_EQ(d.outcomes()[2], 4.0);
  EXPECT_DOUBLE_EQ(d.design().covariates()(2, 1), 7.0);
  EXPECT_EQ(d.design().covariate_names(), (std::vector<std::string>{"c1", "c2"}));
}

TEST(Csv, BlankExposureCitesRow) {
  try {
    from_csv("w,y,c1\n1,2,3\n,3,4\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
    EXPECT_EQ(e.category(), ErrorCategory::data);
  }
}

TEST(Csv, MissingColumnIsSchemaError) { EXPECT_THROW(from_csv("x,y,c1\n1,2,3\n"), SchemaError); }

TEST(Csv, SimulatedDataRoundTripsBitForBit) {
  const Dataset a = generate(Scenario{1, 200, 7});
  std::stringstream buf;
  write_dataset(buf, a);
  const Dataset b = read_dataset(buf, Schema{});
  ASSERT_EQ(a.size(), b.size());
  ASSERT_EQ(a.num_covariates(), b.num_covariates());
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(a.size()); ++j) {
    EXPECT_EQ(a.design().exposures()[j], b.design().exposures()[j]);
    EXPECT_EQ(a.outcomes()[j], b.outcomes()[j]);
    for (Eigen::Index k = 0; k < 6; ++k) EXPECT_EQ(a.design().covariates()(j, k), b.design().covariates()(j, k));
  }
  EXPECT_EQ(a.unit_ids(), b.unit_ids());
}

TEST(Csv, IgnoredOutcomeIsNeverRead) {
  Schema s;
  s.outcome = "";
  s.ignore = {"y"};
  const auto d = from_csv("w,y,c1\n1,oops,3\n2,,4\n3,5,1\n", s);
  EXPECT_FALSE(d.has_outcomes());
  EXPECT_EQ(d.num_covariates(), 1u);
}

TEST(Grid, HandExamples) {
  const auto g = make_grid(0.0, 10.0, 1.0);
  EXPECT_EQ(g.size(), 5u);
  EXPECT_EQ(g.levels(), (std::vector<double>{1, 3, 5, 7, 9}));
  const auto h = make_grid(0.0, 9.9, 1.0);
  EXPECT_EQ(h.size(), 5u);
  EXPECT_EQ(h.levels(), (std::vector<double>{1, 3, 5, 7, 9}));
}

TEST(Grid, HundredLevelsAtDeltaPointSixteen) {
  const auto g = make_grid(0.0, 32.0, 0.16);
  EXPECT_EQ(g.size(), 100u);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g.level(i) - g.level(i - 1), 0.32, 1e-12);
}

TEST(Grid, BlockOfMatchesLevelWindows) {
  const auto g = make_grid(0.0, 10.0, 1.0);
  EXPECT_EQ(g.block_of(0.0), 0u);
  EXPECT_EQ(g.block_of(1.99), 0u);
  EXPECT_EQ(g.block_of(2.0), 1u);
  EXPECT_EQ(g.block_of(10.0), 4u);
}

TEST(Grid, InvalidCaliperIsConfigError) {
  EXPECT_THROW(make_grid(0.0, 10.0, 0.0), CaliperError);
  EXPECT_THROW(make_grid(0.0, 10.0, 6.0), CaliperError);
  try {
    make_grid(0.0, 10.0, -1.0);
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::config);
  }
}

// ---- GPS ----------------------------------------------------------------

TEST(Gps, ExactlyLinearExposureIsDegenerate) {
  Matrix c(4, 1);
  c << 1, 2, 3, 5;
  Vector w = 2.0 * c.col(0);
  EXPECT_THROW(fit_gps(DesignData(w, c)), DegeneracyError);
}

TEST(Gps, NormalLinearMatchesNormalEquations) {
  Matrix c(5, 2);
  c << 0.3, 1.2, -1.0, 0.4, 2.2, -0.7, 0.8, 0.1, -0.5, -1.9;
  Vector w(5);
  w << 1.7, 0.2, 3.9, 2.5, -0.4;
  const auto model = fit_gps(DesignData(w, c));
  const auto* lin = std::get_if<LinearModel>(&model.mean_model());
  ASSERT_NE(lin, nullptr);

  // (X'X) b = X'w solved by Gaussian elimination on the 3x3 system.
  double a[3][4] = {};
  for (int r = 0; r < 5; ++r) {
    const double x[3] = {1.0, c(r, 0), c(r, 1)};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) a[i][j] += x[i] * x[j];
      a[i][3] += x[i] * w[r];
    }
  }
  for (int p = 0; p < 3; ++p) {
    for (int r = p + 1; r < 3; ++r) {
      const double f = a[r][p] / a[p][p];
      for (int k = p; k < 4; ++k) a[r][k] -= f * a[p][k];
    }
  }
  double b[3];
  for (int p = 2; p >= 0; --p) {
    double s = a[p][3];
    for (int k = p + 1; k < 3; ++k) s -= a[p][k] * b[k];
    b[p] = s / a[p][p];
  }
  EXPECT_NEAR(lin->intercept, b[0], 1e-10);
  EXPECT_NEAR(lin->coefficients[0], b[1], 1e-10);
  EXPECT_NEAR(lin->coefficients[1], b[2], 1e-10);
}

TEST(Gps, ScenarioOneRecoversCoefficients) {
  const Dataset d = generate(Scenario{1, 5000, 11});
  const auto model = fit_gps(d.design());
  const auto* lin = std::get_if<LinearModel>(&model.mean_model());
  ASSERT_NE(lin, nullptr);
  // Standard errors from sigma^2 (C'C)^-1 with centred covariates.
  const Matrix& c = d.design().covariates();
  const Matrix centred = c.rowwise() - c.colwise().mean();
  const Matrix cov_inv = (centred.transpose() * centred).inverse();
  const double s = model.residual_sd();
  for (int k = 0; k < 6; ++k) {
    const double truth = 9.0 * sim::kGpsCoef[k];
    const double se = s * std::sqrt(cov_inv(k, k));
    EXPECT_NEAR(lin->coefficients[k], truth, 3.0 * se) << "coefficient " << k;
  }
}

TEST(Gps, DensityAtModeAndFormula) {
  const DesignData d = random_design(60, 2, 3);
  const auto model = fit_gps(d);
  const Eigen::RowVector2d c0(0.4, -0.2);
  const double m = model.conditional_mean(c0);
  const double s = model.residual_sd();
  EXPECT_DOUBLE_EQ(evaluate_gps(model, m, c0), 1.0 / std::sqrt(2.0 * std::numbers::pi * s * s));

  const auto* lin = std::get_if<LinearModel>(&model.mean_model());
  ASSERT_NE(lin, nullptr);
  const double pairs[3][3] = {{2.0, 0.1, 0.3}, {5.5, -1.2, 0.8}, {-1.0, 2.0, -2.0}};
  for (const auto& p : pairs) {
    const double mean = lin->intercept + lin->coefficients[0] * p[1] + lin->coefficients[1] * p[2];
    const double expect = std::exp(-(p[0] - mean) * (p[0] - mean) / (2.0 * s * s)) / (s * std::sqrt(2.0 * std::numbers::pi));
    EXPECT_NEAR(evaluate_gps(model, p[0], Eigen::RowVector2d(p[1], p[2])), expect, 1e-14);
  }
}

TEST(Gps, DensityIntegratesToOne) {
  const DesignData d = random_design(80, 2, 5);
  const auto model = fit_gps(d);
  const Eigen::RowVector2d c0(-0.3, 1.1);
  const double m = model.conditional_mean(c0);
  const double s = model.residual_sd();
  // Composite Simpson over +-8 sd.
  const int n = 4000;
  const double a = m - 8 * s, b = m + 8 * s, h = (b - a) / n;
  double acc = evaluate_gps(model, a, c0) + evaluate_gps(model, b, c0);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * evaluate_gps(model, a + i * h, c0);
  EXPECT_NEAR(acc * h / 3.0, 1.0, 1e-6);
}

TEST(Gps, InvalidCovariatesRejected) {
  const auto model = fit_gps(random_design(30, 2, 1));
  EXPECT_THROW(evaluate_gps(model, 1.0, Eigen::RowVector3d(1, 2, 3)), InputError);
  EXPECT_THROW(evaluate_gps(model, std::nan(""), Eigen::RowVector2d(1, 2)), InputError);
}

TEST(GpsSurface, EntriesEqualPointwiseEvaluation) {
  Matrix c(4, 1);
  c << 0.5, -1.0, 2.0, 0.0;
  Vector w(4);
  w << 1.0, 0.2, 2.9, 1.4;
  const DesignData d(w, c);
  const auto model = fit_gps(d);
  const auto s = gps_surface(model, d);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_DOUBLE_EQ(s.observed_gps[static_cast<Eigen::Index>(j)], evaluate_gps(model, d.exposure(j), d.covariate_row(j)));
  }
  EXPECT_FALSE(s.degenerate);
}

TEST(GpsSurface, ConstantSurfaceIsDegenerate) {
  Matrix c(4, 1);
  c << 1, -1, 1, -1;
  Vector w(4);
  w << 2, 4, 4, 2;  // every exposure one unit from the mean
  const DesignData d(w, c);
  LinearModel flat;
  flat.intercept = 3.0;
  flat.coefficients = Vector::Zero(1);
  const GpsModel model(LearnerKind::linear, flat, 1.5, TrainingSummary{4, 1, 0.0});
  const auto s = gps_surface(model, d);
  EXPECT_TRUE(s.degenerate);
  EXPECT_DOUBLE_EQ(s.min, s.max);
  EXPECT_THROW(build_matched_set(d, s, make_grid(d, 0.5), MatchConfig{}), StandardizationError);
}

TEST(GpsSurface, ScenarioTwoSpansOrdersOfMagnitude) {
  const Dataset d = generate(Scenario{2, 1000, 4});
  const auto s = gps_surface(fit_gps(d.design()), d.design());
  EXPECT_GT(s.max / s.min, 1e3);
}

TEST(Gps, BoostedStumpsFitsSignal) {
  const Dataset d = generate(Scenario{1, 1000, 9});
  GpsConfig cfg;
  cfg.learner.kind = LearnerKind::boosted_stumps;
  const auto model = fit_gps(d.design(), cfg);
  const Vector& w = d.design().exposures();
  const double total_sd = std::sqrt((w.array() - w.mean()).square().mean());
  EXPECT_LT(model.residual_sd(), total_sd);
}

TEST(Gps, JsonRoundTrip) {
  const DesignData d = random_design(50, 3, 2);
  for (auto kind : {LearnerKind::linear, LearnerKind::polynomial, LearnerKind::boosted_stumps}) {
    GpsConfig cfg;
    cfg.learner.kind = kind;
    cfg.learner.trees = 20;
    const auto model = fit_gps(d, cfg);
    const auto back = gps_model_from_json(to_json(model));
    for (std::size_t j = 0; j < d.size(); ++j) {
      EXPECT_DOUBLE_EQ(evaluate_gps(back, d.exposure(j), d.covariate_row(j)), evaluate_gps(model, d.exposure(j), d.covariate_row(j)));
    }
  }
}

// ---- standardization -------------------------------------------------------

TEST(Standardize, Endpoints) {
  const std::vector<double> v{2, 4, 6};
  EXPECT_EQ(standardize(v), (std::vector<double>{0, 0.5, 1}));
}

TEST(Standardize, ConstantIsError) {
  const std::vector<double> v{5, 5, 5};
  EXPECT_THROW(standardize(v), StandardizationError);
}

TEST(Standardize, RandomVectorOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-50, 50);
  std::vector<double> v(10);
  for (auto& x : v) x = u(rng);
  const auto out = standardize(v);
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out[i], (v[i] - lo) / (hi - lo), 1e-15);
}
