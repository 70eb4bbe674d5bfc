#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>
#include <numbers>

#include "oracles/naive_cox.hpp"
#include "persurv/coxph.hpp"
#include "persurv/distributions.hpp"
#include "persurv/error.hpp"
#include "persurv/rng.hpp"

using namespace persurv;

namespace {

SurvivalRecord rec(double time, bool event, std::vector<double> z, std::string id = "") {
  return {std::move(id), time, event, std::move(z)};
}

// Random dataset with integer times (so ties occur) and p covariates.
std::vector<SurvivalRecord> cox_data(SplitMix64& rng, std::size_t n, std::size_t p,
                                        double coef = 0.7) {
  std::vector<SurvivalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(p);
    double eta = 0;
    for (auto& v : z) {
      v = rng.normal();
      eta += coef * v;
    }
    const double t = std::ceil(rng.exponential(0.2 * std::exp(eta)) * 3.0);
    out.push_back(rec(t, rng.uniform() < 0.75, z, "s" + std::to_string(i)));
  }
  out.front().event = true;
  return out;
}

double erf_series(double x) {
  double sum = 0, term = x;
  for (int n = 0; n < 200; ++n) {
    sum += term / (2 * n + 1);
    term *= -x * x / (n + 1);
  }
  return 2.0 / std::sqrt(std::numbers::pi) * sum;
}

CoxFit manual_fit(std::vector<double> coef, Eigen::MatrixXd cov, CovariateLayout layout) {
  CoxFit f;
  f.coefficients = Eigen::Map<Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
  f.covariance = std::move(cov);
  f.layout = layout;
  f.converged = true;
  return f;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(Distributions, NormalTailAgainstErfSeries) {
  for (double z : {0.0, 0.3, 1.0, 1.959964, 2.5, 3.2}) {
    EXPECT_NEAR(normal_sf(z), 0.5 * (1.0 - erf_series(z / std::sqrt(2.0))), 1e-12) << z;
  }
  EXPECT_NEAR(2.0 * normal_sf(1.959964), 0.05, 1e-6);
}

TEST(Distributions, ChiSquareClosedForms) {
  // Even df: Q(k, y) = e^-y sum_{i<k} y^i / i!.
  for (int k = 1; k <= 6; ++k) {
    for (double x : {0.1, 1.0, 4.0, 9.4877, 20.0, 60.0}) {
      const double y = x / 2;
      double sum = 0, term = 1;
      for (int i = 0; i < k; ++i) {
        sum += term;
        term *= y / (i + 1);
      }
      EXPECT_NEAR(chi_square_sf(x, 2 * k), std::exp(-y) * sum, 1e-12) << k << " " << x;
    }
  }
  // df 1 and 3 through the normal tail.
  for (double x : {0.05, 0.7, 3.84, 12.0}) {
    const double tail = 1.0 - erf_series(std::sqrt(x / 2.0));
    EXPECT_NEAR(chi_square_sf(x, 1), tail, 1e-12);
    EXPECT_NEAR(chi_square_sf(x, 3), tail + std::sqrt(2 * x / std::numbers::pi) * std::exp(-x / 2), 1e-12);
  }
  EXPECT_NEAR(chi_square_sf(9.4877, 4), 0.05, 1e-4);
  EXPECT_EQ(chi_square_sf(0, 3), 1.0);
}

TEST(PartialLikelihood, NullModelDistinctTimes) {
  std::vector<SurvivalRecord> d{rec(1, true, {0.3}), rec(2, true, {-1}), rec(3, true, {2})};
  EXPECT_NEAR(log_partial_likelihood(d, vec({0})), -std::log(6.0), 1e-15);
}

TEST(PartialLikelihood, EfronTieHandValues) {
  // Two deaths at t=1 among three at risk, beta = 0:
  // log 3 + log(3 - 1/2 * 2) = log 6 (Breslow would give log 9).
  std::vector<SurvivalRecord> d{rec(1, true, {1}), rec(1, true, {0}), rec(2, true, {0})};
  EXPECT_NEAR(log_partial_likelihood(d, vec({0})), -std::log(6.0), 1e-15);
  // beta = log 2: risks 2, 1, 1; tie group contributes
  // log 2 - log 4 - log(4 - 3/2) and the last death log 1, total log 0.2.
  EXPECT_NEAR(log_partial_likelihood(d, vec({std::log(2.0)})), std::log(0.2), 1e-14);
}

TEST(PartialLikelihood, MatchesNaiveOracle) {
  SplitMix64 rng(RngSeed{3});
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 2 + rng.below(29);
    const auto p = 1 + rng.below(4);
    const auto data = cox_data(rng, n, p);
    std::vector<double> b(p);
    for (auto& v : b) v = rng.normal();
    const double ref = oracle::naive_efron(data, b);
    EXPECT_NEAR(log_partial_likelihood(data, Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(p))), ref,
                1e-10 * (1 + std::abs(ref)));
  }
}

TEST(PartialLikelihood, NoTiesEqualsTextbookForm) {
  SplitMix64 rng(RngSeed{4});
  for (int trial = 0; trial < 20; ++trial) {
    auto data = cox_data(rng, 15, 2);
    for (std::size_t i = 0; i < data.size(); ++i) data[i].time = static_cast<double>(i * 7 % 15) + 1;
    const Eigen::VectorXd b = vec({rng.normal(), rng.normal()});
    double ll = 0;
    for (const auto& r : data) {
      if (!r.event) continue;
      double s = 0;
      for (const auto& o : data) {
        if (o.time >= r.time) s += std::exp(b[0] * o.covariates[0] + b[1] * o.covariates[1]);
      }
      ll += b[0] * r.covariates[0] + b[1] * r.covariates[1] - std::log(s);
    }
    EXPECT_NEAR(log_partial_likelihood(data, b), ll, 1e-11 * (1 + std::abs(ll)));
  }
}

TEST(PartialLikelihood, GradientAndInformationMatchFiniteDifferences) {
  SplitMix64 rng(RngSeed{5});
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 3 + rng.below(28);
    const auto p = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto data = cox_data(rng, n, static_cast<std::size_t>(p));
    Eigen::VectorXd b(p);
    for (auto& v : b) v = 0.5 * rng.normal();
    const auto pl = efron_derivatives(data, b);
    EXPECT_NEAR(pl.value, log_partial_likelihood(data, b), 1e-12 * (1 + std::abs(pl.value)));
    for (Eigen::Index j = 0; j < p; ++j) {
      Eigen::VectorXd up = b, down = b;
      up[j] += h;
      down[j] -= h;
      const double fd = (log_partial_likelihood(data, up) - log_partial_likelihood(data, down)) / (2 * h);
      EXPECT_LE(std::abs(fd - pl.gradient[j]), 1e-6 * std::max(1.0, std::abs(pl.gradient[j])));
      const auto gu = efron_derivatives(data, up).gradient;
      const auto gd = efron_derivatives(data, down).gradient;
      for (Eigen::Index k = 0; k < p; ++k) {
        const double fd2 = -(gu[k] - gd[k]) / (2 * h);
        EXPECT_LE(std::abs(fd2 - pl.information(j, k)), 1e-6 * std::max(1.0, std::abs(pl.information(j, k))));
      }
    }
  }
}

TEST(PartialLikelihood, Errors) {
  std::vector<SurvivalRecord> censored{rec(1, false, {1}), rec(2, false, {0})};
  try {
    log_partial_likelihood(censored, vec({0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoEvents);
  }
  std::vector<SurvivalRecord> ragged{rec(1, true, {1}), rec(2, false, {0, 1})};
  try {
    log_partial_likelihood(ragged, vec({0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
  std::vector<SurvivalRecord> ok{rec(1, true, {1}), rec(2, false, {0})};
  EXPECT_THROW(log_partial_likelihood(ok, vec({0, 1})), Error);
}

TEST(FitCox, FourSubjectGridOracle) {
  std::vector<SurvivalRecord> d{rec(1, true, {1}), rec(2, true, {0}), rec(3, true, {1}), rec(4, true, {0})};
  auto fit = fit_cox(d);
  ASSERT_TRUE(fit.converged);
  const double ref = oracle::grid_argmax([&](double b) { return oracle::naive_efron(d, {b}); }, -10, 10, 1e-6);
  EXPECT_NEAR(fit.coefficients[0], ref, 2e-6);
  EXPECT_NEAR(fit.log_partial_likelihood, oracle::naive_efron(d, {fit.coefficients[0]}), 1e-12);
  EXPECT_NEAR(fit.null_log_partial_likelihood, -std::log(24.0), 1e-12);
}

TEST(FitCox, OneCovariateGridOracle) {
  SplitMix64 rng(RngSeed{6});
  int checked = 0;
  while (checked < 20) {
    auto data = cox_data(rng, 10 + rng.below(30), 1);
    CoxFit fit;
    try {
      fit = fit_cox(data);
    } catch (const Error&) {
      continue;
    }
    const double ref = oracle::grid_argmax([&](double b) { return oracle::naive_efron(data, {b}); }, -10, 10, 1e-6);
    EXPECT_NEAR(fit.coefficients[0], ref, 1e-4);
    ++checked;
  }
}

TEST(FitCox, SeparatedDataIsNonIdentifiable) {
  std::vector<SurvivalRecord> d{rec(1, true, {1}), rec(2, true, {1}), rec(3, true, {0}), rec(4, true, {0})};
  try {
    fit_cox(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonIdentifiable);
  }
}

TEST(FitCox, ConstantCovariateIsNonIdentifiable) {
  std::vector<SurvivalRecord> d{rec(1, true, {0, 1}), rec(2, false, {0, 0}), rec(3, true, {0, 1}), rec(4, true, {0, 0})};
  try {
    fit_cox(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonIdentifiable);
  }
  // Variation only before the first event never enters a risk set.
  std::vector<SurvivalRecord> early{rec(0.5, false, {5}), rec(1, true, {0}), rec(2, true, {0})};
  EXPECT_THROW(fit_cox(early), Error);
}

TEST(FitCox, NoEvents) {
  std::vector<SurvivalRecord> d{rec(1, false, {1}), rec(2, false, {0})};
  try {
    fit_cox(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoEvents);
  }
}

TEST(FitCox, ConvergedFitsHaveSmallGradientAndPositiveInformation) {
  SplitMix64 rng(RngSeed{8});
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = static_cast<std::size_t>(1 + rng.below(4));
    auto data = cox_data(rng, 40 + rng.below(60), p, 0.4);
    CoxFit fit;
    try {
      fit = fit_cox(data);
    } catch (const Error&) {
      continue;
    }
    ASSERT_TRUE(fit.converged);
    const auto pl = efron_derivatives(data, fit.coefficients);
    // Gradient on the original scale, relative to the covariate spread.
    EXPECT_LE(pl.gradient.cwiseAbs().maxCoeff(), 1e-5);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> info(pl.information);
    EXPECT_GT(info.eigenvalues().minCoeff(), 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> cov(fit.covariance);
    EXPECT_GT(cov.eigenvalues().minCoeff(), -1e-8);
    EXPECT_LE((fit.covariance - fit.covariance.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((fit.covariance * pl.information - Eigen::MatrixXd::Identity(pl.information.rows(), pl.information.cols()))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-6);
  }
}

TEST(FitCox, TimeShiftInvarianceIsBitExact) {
  SplitMix64 rng(RngSeed{9});
  for (int trial = 0; trial < 20; ++trial) {
    auto data = cox_data(rng, 30, 2, 0.5);
    CoxFit base;
    try {
      base = fit_cox(data);
    } catch (const Error&) {
      continue;
    }
    for (auto& r : data) r.time += 1024.0;
    const auto shifted = fit_cox(data);
    EXPECT_EQ(base.coefficients, shifted.coefficients);
    EXPECT_EQ(base.log_partial_likelihood, shifted.log_partial_likelihood);
  }
}

TEST(FitCox, InvariantToRecordOrder) {
  SplitMix64 rng(RngSeed{10});
  auto data = cox_data(rng, 40, 2, 0.5);
  const auto a = fit_cox(data);
  std::reverse(data.begin(), data.end());
  const auto b = fit_cox(data);
  EXPECT_LE((a.coefficients - b.coefficients).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Wald, Examples) {
  Eigen::MatrixXd one(1, 1);
  one << 0.25;
  auto zero = wald_tests(manual_fit({0.0}, one, {1, 0, 0}));
  EXPECT_EQ(zero.p[0], 1.0);

  auto f = manual_fit({1.959964 * 0.5}, one, {1, 0, 0});
  auto w = wald_tests(f);
  EXPECT_NEAR(w.z[0], 1.959964, 1e-12);
  EXPECT_NEAR(w.p[0], 0.05, 1e-6);
  EXPECT_NEAR(w.statistic, w.z[0] * w.z[0], 1e-12);
  EXPECT_EQ(w.df, 1u);
  EXPECT_NEAR(w.p_value, w.p[0], 1e-12);

  Eigen::MatrixXd bad(1, 1);
  bad << 0.0;
  try {
    wald_tests(manual_fit({1.0}, bad, {1, 0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingularCovariance);
  }
}

TEST(BlockTest, Examples) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(5, 5);
  auto zero = block_chisq_test(manual_fit({0.7, 0, 0, 0, 0}, cov, {1, 2, 2}));
  EXPECT_EQ(zero.statistic, 0.0);
  EXPECT_EQ(zero.p_value, 1.0);
  EXPECT_EQ(zero.df, 4u);

  const double c = std::sqrt(9.4877 / 4.0);
  auto t = block_chisq_test(manual_fit({5.0, c, c, c, c}, cov, {1, 2, 2}));
  EXPECT_NEAR(t.statistic, 9.4877, 1e-12);
  EXPECT_NEAR(t.p_value, 0.05, 1e-4);

  Eigen::MatrixXd cov2(2, 2);
  cov2 << 0.5, 0.1, 0.1, 0.3;
  auto single = manual_fit({0.4, -0.9}, cov2, {1, 1, 0});
  EXPECT_NEAR(block_chisq_test(single).statistic, std::pow(wald_tests(single).z[1], 2), 1e-12);
  EXPECT_THROW(block_chisq_test(manual_fit({1.0}, Eigen::MatrixXd::Identity(1, 1), {1, 0, 0})), Error);
}

TEST(Aic, Examples) {
  auto f = manual_fit({0, 0, 0}, Eigen::MatrixXd::Identity(3, 3), {0, 1, 2});
  f.log_partial_likelihood = -10;
  EXPECT_EQ(aic(f, 1, 2), 26);
  auto clin = manual_fit({0}, Eigen::MatrixXd::Identity(1, 1), {1, 0, 0});
  clin.log_partial_likelihood = -7.5;
  EXPECT_EQ(aic(clin, 0, 0), 15);
  clin.log_partial_likelihood = -8;
  EXPECT_GT(aic(clin, 0, 0), 15);
  EXPECT_THROW(aic(f, 1, 1), Error);
}

TEST(Aic, SelectionMatchesDirectComputationAndSkipsNoise) {
  SplitMix64 rng(RngSeed{12});
  // Clinical age, dim0 = (signal, noise), dim1 = (noise, noise). Every
  // subject has a twin with the noise scores negated, so the partial
  // likelihood is even in the noise coefficients: their maximiser is 0 and
  // each noise FPC adds exactly 2 to the AIC.
  const std::size_t half = 80;
  std::vector<std::array<double, 5>> x;
  std::vector<SurvivalRecord> base;
  for (std::size_t i = 0; i < half; ++i) {
    std::array<double, 5> v;
    for (auto& c : v) c = rng.normal();
    const double t = rng.exponential(0.1 * std::exp(0.5 * v[0] + 1.2 * v[1]));
    const bool event = i == 0 || rng.uniform() < 0.8;
    for (double sign : {1.0, -1.0}) {
      x.push_back({v[0], v[1], sign * v[2], sign * v[3], sign * v[4]});
      base.push_back(rec(t, event, {}, "p" + std::to_string(base.size())));
    }
  }
  auto provider = [&](std::size_t q, std::size_t r) {
    CoxDataset ds;
    ds.layout = {1, q, r};
    for (std::size_t i = 0; i < base.size(); ++i) {
      SurvivalRecord rr = base[i];
      rr.covariates = {x[i][0]};
      for (std::size_t j = 0; j < q; ++j) rr.covariates.push_back(x[i][1 + j]);
      for (std::size_t k = 0; k < r; ++k) rr.covariates.push_back(x[i][3 + k]);
      ds.records.push_back(std::move(rr));
    }
    return ds;
  };
  const auto sel = select_fpcs_aic(provider, 2, 2);
  ASSERT_EQ(sel.candidates.size(), 9u);
  double best = INFINITY;
  std::size_t bq = 0, br = 0;
  std::map<std::pair<std::size_t, std::size_t>, double> direct;
  for (std::size_t q = 0; q <= 2; ++q) {
    for (std::size_t r = 0; r <= 2; ++r) {
      const auto ds = provider(q, r);
      const double a = aic(fit_cox(ds.records, ds.layout), q, r);
      direct[{q, r}] = a;
      if (a < best) {
        best = a;
        bq = q;
        br = r;
      }
    }
  }
  for (const auto& c : sel.candidates) {
    ASSERT_TRUE(c.aic.has_value());
    EXPECT_EQ(*c.aic, direct.at({c.q, c.r}));
  }
  EXPECT_EQ(sel.q, bq);
  EXPECT_EQ(sel.r, br);
  EXPECT_EQ(sel.q, 1u);
  EXPECT_EQ(sel.r, 0u);
  for (std::size_t r = 0; r <= 2; ++r) {
    EXPECT_NEAR(direct.at({1, r}), direct.at({1, 0}) + 2.0 * static_cast<double>(r), 1e-7);
    EXPECT_NEAR(direct.at({2, r}), direct.at({1, 0}) + 2.0 + 2.0 * static_cast<double>(r), 1e-7);
  }

  const auto only = select_fpcs_aic(provider, 0, 0);
  EXPECT_EQ(only.q, 0u);
  EXPECT_EQ(only.r, 0u);
  EXPECT_EQ(only.candidates.size(), 1u);
}

TEST(Aic, AllFitsFailed) {
  auto provider = [](std::size_t, std::size_t) {
    return CoxDataset{{rec(1, false, {1}), rec(2, false, {0})}, {1, 0, 0}};
  };
  try {
    select_fpcs_aic(provider, 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAllFitsFailed);
  }
}

TEST(PredictRisk, Examples) {
  auto f = manual_fit({1, -1}, Eigen::MatrixXd::Identity(2, 2), {2, 0, 0});
  const std::vector<double> zero{0, 0}, z{2, 3};
  EXPECT_EQ(predict_risk(f, zero), 0);
  EXPECT_EQ(predict_risk(f, z), -1);
  EXPECT_LT(predict_risk(f, std::vector<double>{1, 0}), predict_risk(f, std::vector<double>{2, 0}));
  EXPECT_THROW(predict_risk(f, std::vector<double>{1}), Error);
}

TEST(FitReport, HasCoefficientTable) {
  std::vector<SurvivalRecord> d{rec(1, true, {1}), rec(2, true, {0}), rec(3, true, {1}), rec(4, true, {0})};
  const auto fit = fit_cox(d);
  const std::vector<std::string> names{"age"};
  const auto j = fit_report_json(fit, names);
  EXPECT_EQ(j["coefficients"][0]["name"], "age");
  EXPECT_NEAR(j["coefficients"][0]["exp_coefficient"].get<double>(), std::exp(fit.coefficients[0]), 1e-12);
  EXPECT_TRUE(j.contains("wald"));
}
