#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "persurv/survival.hpp"

namespace persurv {

// Column blocks of the covariate vector: clinical Z, then q dimension-0
// scores, then r dimension-1 scores.
struct CovariateLayout {
  std::size_t clinical = 0;
  std::size_t dim0 = 0;
  std::size_t dim1 = 0;

  std::size_t total() const noexcept { return clinical + dim0 + dim1; }
  std::size_t functional() const noexcept { return dim0 + dim1; }
  bool operator==(const CovariateLayout&) const = default;
};

struct CoxOptions {
  double tol = 1e-9;            // relative change of the log partial likelihood
  double gradient_tol = 1e-6;   // max-norm, standardised covariate scale
  double step_tol = 1e-6;       // max-norm of the last Newton step, same scale
  int max_iter = 100;
  double divergence_bound = 50; // |beta| on the standardised scale
};

struct CoxFit {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;  // inverse observed information
  double log_partial_likelihood = 0.0;
  double null_log_partial_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  CovariateLayout layout;
  std::size_t n_subjects = 0;
  std::size_t n_events = 0;
};

// Log partial likelihood with Efron's correction for tied event times, its
// gradient and the observed information (negative Hessian).
struct PartialLikelihood {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd information;
};

double log_partial_likelihood(std::span<const SurvivalRecord> data, const Eigen::VectorXd& beta);
PartialLikelihood efron_derivatives(std::span<const SurvivalRecord> data,
                                    const Eigen::VectorXd& beta);

// Newton-Raphson with step halving on the Efron log partial likelihood.
// Covariates are standardised internally; the returned coefficients and
// covariance are on the original scale. Throws NonIdentifiable for a
// covariate that is constant over the subjects at risk at the first event,
// when the standardised information becomes numerically singular (below
// 1e-8 per event), or when a standardised coefficient leaves
// [-bound, bound].
CoxFit fit_cox(std::span<const SurvivalRecord> data, const CovariateLayout& layout,
               const CoxOptions& options = {});
inline CoxFit fit_cox(std::span<const SurvivalRecord> data, const CoxOptions& options = {}) {
  const std::size_t p = data.empty() ? 0 : data.front().covariates.size();
  return fit_cox(data, CovariateLayout{p, 0, 0}, options);
}

struct WaldResult {
  std::vector<double> z;
  std::vector<double> p;
  double statistic = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
};

WaldResult wald_tests(const CoxFit& fit);

struct ChiSquareTest {
  double statistic = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
};

// Joint Wald test that every functional coefficient (the dim0 and dim1
// blocks) is zero.
ChiSquareTest block_chisq_test(const CoxFit& fit);

// 2 (q + r) - 2 log L. Clinical coefficients are not counted.
double aic(const CoxFit& fit, std::size_t q, std::size_t r);

struct CoxDataset {
  std::vector<SurvivalRecord> records;
  CovariateLayout layout;
};

struct AicCandidate {
  std::size_t q = 0;
  std::size_t r = 0;
  std::optional<double> aic;  // empty when the fit failed
  std::string failure;
};

struct AicSelection {
  std::size_t q = 0;
  std::size_t r = 0;
  CoxFit fit;
  std::vector<AicCandidate> candidates;
};

// Exhaustive search over {0..q_max} x {0..r_max}. Ties go to the smaller
// q + r, then the smaller q. Failed fits are recorded and skipped.
AicSelection select_fpcs_aic(const std::function<CoxDataset(std::size_t, std::size_t)>& provider,
                             std::size_t q_max, std::size_t r_max, const CoxOptions& options = {});

// Linear predictor; exp() of it is the hazard multiplier under h0 = 1.
double predict_risk(const CoxFit& fit, std::span<const double> covariates);

// Coefficient table in the layout of a regression report.
nlohmann::json fit_report_json(const CoxFit& fit, std::span<const std::string> names);

}  // namespace persurv
