#include "persurv/coxph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "persurv/distributions.hpp"
#include "persurv/error.hpp"

namespace persurv {

namespace {

// Subjects sorted by decreasing time, grouped by exactly equal times.
struct RiskSetData {
  Eigen::MatrixXd x;  // rows in sorted order
  std::vector<double> time;
  std::vector<char> event;
  std::vector<std::size_t> group_start;  // plus a final sentinel = n
  std::size_t events = 0;
};

RiskSetData prepare(std::span<const SurvivalRecord> data, std::size_t p) {
  if (data.empty()) throw Error(ErrorCode::kEmptyData, "no survival records");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data[a].time > data[b].time; });
  RiskSetData rs;
  const auto n = static_cast<Eigen::Index>(data.size());
  rs.x.resize(n, static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& rec = data[order[static_cast<std::size_t>(i)]];
    if (rec.covariates.size() != p) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "record " + rec.patient_id + " has " + std::to_string(rec.covariates.size()) +
                      " covariates, expected " + std::to_string(p));
    }
    for (std::size_t c = 0; c < p; ++c) rs.x(i, static_cast<Eigen::Index>(c)) = rec.covariates[c];
    rs.time.push_back(rec.time);
    rs.event.push_back(rec.event ? 1 : 0);
    rs.events += rec.event ? 1 : 0;
    if (i == 0 || rec.time != rs.time[static_cast<std::size_t>(i) - 1]) {
      rs.group_start.push_back(static_cast<std::size_t>(i));
    }
  }
  rs.group_start.push_back(data.size());
  if (rs.events == 0) throw Error(ErrorCode::kNoEvents, "no events among the survival records");
  return rs;
}

PartialLikelihood efron(const RiskSetData& rs, const Eigen::VectorXd& beta, bool derivatives) {
  const Eigen::Index n = rs.x.rows();
  const Eigen::Index p = rs.x.cols();
  const Eigen::VectorXd eta = p > 0 ? Eigen::VectorXd(rs.x * beta) : Eigen::VectorXd::Zero(n);
  const double eta_max = eta.maxCoeff();
  const Eigen::VectorXd risk = (eta.array() - eta_max).exp().matrix();

  PartialLikelihood out;
  if (derivatives) {
    out.gradient = Eigen::VectorXd::Zero(p);
    out.information = Eigen::MatrixXd::Zero(p, p);
  }
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p), d1(p), sum_x(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p), d2(p, p);
  for (std::size_t g = 0; g + 1 < rs.group_start.size(); ++g) {
    const auto begin = static_cast<Eigen::Index>(rs.group_start[g]);
    const auto end = static_cast<Eigen::Index>(rs.group_start[g + 1]);
    double d0 = 0.0;
    double sum_eta = 0.0;
    int deaths = 0;
    if (derivatives) {
      d1.setZero();
      d2.setZero();
      sum_x.setZero();
    }
    for (Eigen::Index i = begin; i < end; ++i) {
      const double r = risk[i];
      s0 += r;
      if (derivatives) {
        s1.noalias() += r * rs.x.row(i).transpose();
        s2.noalias() += r * rs.x.row(i).transpose() * rs.x.row(i);
      }
      if (!rs.event[static_cast<std::size_t>(i)]) continue;
      ++deaths;
      d0 += r;
      sum_eta += eta[i];
      if (derivatives) {
        d1.noalias() += r * rs.x.row(i).transpose();
        d2.noalias() += r * rs.x.row(i).transpose() * rs.x.row(i);
        sum_x.noalias() += rs.x.row(i).transpose();
      }
    }
    if (deaths == 0) continue;
    out.value += sum_eta;
    if (derivatives) out.gradient += sum_x;
    for (int l = 0; l < deaths; ++l) {
      const double a = static_cast<double>(l) / deaths;
      const double denom = s0 - a * d0;
      out.value -= std::log(denom) + eta_max;
      if (derivatives) {
        const Eigen::VectorXd mean = (s1 - a * d1) / denom;
        out.gradient -= mean;
        out.information += (s2 - a * d2) / denom - mean * mean.transpose();
      }
    }
  }
  return out;
}

void require_identifiable(const Eigen::MatrixXd& information, double floor) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(information, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > floor)) {
    throw Error(ErrorCode::kNonIdentifiable,
                "observed information is singular (collinear covariates or monotone likelihood)");
  }
}

std::size_t covariate_count(std::span<const SurvivalRecord> data) {
  return data.empty() ? 0 : data.front().covariates.size();
}

}  // namespace

double log_partial_likelihood(std::span<const SurvivalRecord> data, const Eigen::VectorXd& beta) {
  const auto rs = prepare(data, covariate_count(data));
  if (beta.size() != rs.x.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "coefficient vector length mismatch");
  }
  return efron(rs, beta, false).value;
}

PartialLikelihood efron_derivatives(std::span<const SurvivalRecord> data,
                                    const Eigen::VectorXd& beta) {
  const auto rs = prepare(data, covariate_count(data));
  if (beta.size() != rs.x.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "coefficient vector length mismatch");
  }
  return efron(rs, beta, true);
}

CoxFit fit_cox(std::span<const SurvivalRecord> data, const CovariateLayout& layout,
               const CoxOptions& options) {
  const std::size_t p = layout.total();
  auto rs = prepare(data, p);
  const Eigen::Index n = rs.x.rows();
  const auto pe = static_cast<Eigen::Index>(p);

  // Subjects with time >= the earliest event time enter some risk set.
  double first_event = INFINITY;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (rs.event[static_cast<std::size_t>(i)]) first_event = std::min(first_event, rs.time[static_cast<std::size_t>(i)]);
  }
  Eigen::VectorXd centre(pe), scale(pe);
  for (Eigen::Index c = 0; c < pe; ++c) {
    double lo = INFINITY, hi = -INFINITY, mag = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (rs.time[static_cast<std::size_t>(i)] < first_event) continue;
      lo = std::min(lo, rs.x(i, c));
      hi = std::max(hi, rs.x(i, c));
      mag = std::max(mag, std::abs(rs.x(i, c)));
    }
    if (!(hi - lo > 1e-12 * mag)) {
      throw Error(ErrorCode::kNonIdentifiable,
                  "covariate " + std::to_string(c) + " is constant over the risk sets");
    }
    centre[c] = rs.x.col(c).mean();
    scale[c] = std::sqrt((rs.x.col(c).array() - centre[c]).square().sum() / static_cast<double>(n));
  }
  const Eigen::MatrixXd x_original = rs.x;
  for (Eigen::Index c = 0; c < pe; ++c) {
    rs.x.col(c) = (rs.x.col(c).array() - centre[c]) / scale[c];
  }

  CoxFit fit;
  fit.layout = layout;
  fit.n_subjects = static_cast<std::size_t>(n);
  fit.n_events = rs.events;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(pe);
  PartialLikelihood current = efron(rs, beta, true);
  fit.null_log_partial_likelihood = current.value;

  if (p == 0) {
    fit.coefficients = beta;
    fit.covariance = Eigen::MatrixXd::Zero(0, 0);
    fit.log_partial_likelihood = current.value;
    fit.converged = true;
    return fit;
  }

  const double info_floor = 1e-8 * static_cast<double>(rs.events);
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    // On the standardised scale the information of an identifiable model is
    // of the order of the event count; a vanishing eigenvalue means a flat
    // or monotone direction.
    require_identifiable(current.information, info_floor);
    const Eigen::VectorXd step = current.information.ldlt().solve(current.gradient);
    double t = 1.0;
    Eigen::VectorXd candidate = beta + step;
    PartialLikelihood next = efron(rs, candidate, true);
    const double slack = 1e-12 * std::max(1.0, std::abs(current.value));
    for (int halving = 0; !(next.value >= current.value - slack) && halving < 60; ++halving) {
      t *= 0.5;
      candidate = beta + t * step;
      next = efron(rs, candidate, true);
    }
    if (candidate.cwiseAbs().maxCoeff() > options.divergence_bound) {
      throw Error(ErrorCode::kNonIdentifiable,
                  "coefficients diverge (monotone partial likelihood, no finite maximiser)");
    }
    const double change = std::abs(next.value - current.value) / std::max(1.0, std::abs(current.value));
    const double step_norm = (t * step).cwiseAbs().maxCoeff();
    beta = candidate;
    current = std::move(next);
    fit.iterations = iter;
    if (change < options.tol && current.gradient.cwiseAbs().maxCoeff() < options.gradient_tol &&
        step_norm < options.step_tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    throw Error(ErrorCode::kMaxIterations,
                "Cox fit did not converge in " + std::to_string(options.max_iter) + " iterations");
  }

  require_identifiable(current.information, info_floor);
  const Eigen::MatrixXd cov_std = current.information.ldlt().solve(Eigen::MatrixXd::Identity(pe, pe));
  fit.coefficients = beta.cwiseQuotient(scale);
  const Eigen::VectorXd inv_scale = scale.cwiseInverse();
  fit.covariance = inv_scale.asDiagonal() * cov_std * inv_scale.asDiagonal();
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose());
  rs.x = x_original;
  fit.log_partial_likelihood = efron(rs, fit.coefficients, false).value;
  return fit;
}

WaldResult wald_tests(const CoxFit& fit) {
  const auto p = fit.coefficients.size();
  WaldResult out;
  out.df = static_cast<std::size_t>(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = fit.covariance(j, j);
    if (!(var > 0.0)) throw Error(ErrorCode::kSingularCovariance, "non-positive coefficient variance");
    const double z = fit.coefficients[j] / std::sqrt(var);
    out.z.push_back(z);
    out.p.push_back(std::min(1.0, 2.0 * normal_sf(std::abs(z))));
  }
  if (p == 0) return out;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.covariance);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0).any()) {
    throw Error(ErrorCode::kSingularCovariance, "coefficient covariance is singular");
  }
  out.statistic = fit.coefficients.dot(ldlt.solve(fit.coefficients));
  out.p_value = chi_square_sf(out.statistic, static_cast<double>(p));
  return out;
}

ChiSquareTest block_chisq_test(const CoxFit& fit) {
  const auto begin = static_cast<Eigen::Index>(fit.layout.clinical);
  const auto size = static_cast<Eigen::Index>(fit.layout.functional());
  if (size == 0) throw Error(ErrorCode::kInvalidArgument, "functional block is empty");
  const Eigen::VectorXd theta = fit.coefficients.segment(begin, size);
  const Eigen::MatrixXd cov = fit.covariance.block(begin, begin, size, size);
  ChiSquareTest out;
  out.df = static_cast<std::size_t>(size);
  if ((theta.array() == 0.0).all()) {
    out.statistic = 0.0;
    out.p_value = 1.0;
    return out;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0).any()) {
    throw Error(ErrorCode::kSingularCovariance, "functional block covariance is singular");
  }
  out.statistic = theta.dot(ldlt.solve(theta));
  out.p_value = chi_square_sf(out.statistic, static_cast<double>(size));
  return out;
}

double aic(const CoxFit& fit, std::size_t q, std::size_t r) {
  if (q + r != fit.layout.functional()) {
    throw Error(ErrorCode::kDimensionMismatch, "q + r does not match the fitted functional block");
  }
  return 2.0 * static_cast<double>(q + r) - 2.0 * fit.log_partial_likelihood;
}

AicSelection select_fpcs_aic(const std::function<CoxDataset(std::size_t, std::size_t)>& provider,
                             std::size_t q_max, std::size_t r_max, const CoxOptions& options) {
  AicSelection best;
  std::optional<double> best_aic;
  for (std::size_t q = 0; q <= q_max; ++q) {
    for (std::size_t r = 0; r <= r_max; ++r) {
      AicCandidate cand{q, r, std::nullopt, {}};
      try {
        const CoxDataset ds = provider(q, r);
        CoxFit fit = fit_cox(ds.records, ds.layout, options);
        const double value = aic(fit, q, r);
        cand.aic = value;
        const bool better =
            !best_aic || value < *best_aic ||
            (value == *best_aic && (q + r < best.q + best.r || (q + r == best.q + best.r && q < best.q)));
        if (better) {
          best_aic = value;
          best.q = q;
          best.r = r;
          best.fit = std::move(fit);
        }
      } catch (const Error& e) {
        cand.failure = std::string(to_string(e.code())) + ": " + e.what();
      }
      best.candidates.push_back(std::move(cand));
    }
  }
  if (!best_aic) throw Error(ErrorCode::kAllFitsFailed, "every (q, r) candidate fit failed");
  return best;
}

double predict_risk(const CoxFit& fit, std::span<const double> covariates) {
  if (covariates.size() != static_cast<std::size_t>(fit.coefficients.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "covariate length does not match the fit");
  }
  double eta = 0.0;
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    eta += fit.coefficients[static_cast<Eigen::Index>(j)] * covariates[j];
  }
  return eta;
}

nlohmann::json fit_report_json(const CoxFit& fit, std::span<const std::string> names) {
  nlohmann::json rows = nlohmann::json::array();
  const auto p = static_cast<std::size_t>(fit.coefficients.size());
  std::optional<WaldResult> wald;
  try {
    wald = wald_tests(fit);
  } catch (const Error&) {
  }
  for (std::size_t j = 0; j < p; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double coef = fit.coefficients[jj];
    nlohmann::json row = {{"name", j < names.size() ? names[j] : "x" + std::to_string(j + 1)},
                          {"coefficient", coef},
                          {"exp_coefficient", std::exp(coef)},
                          {"se", std::sqrt(std::max(0.0, fit.covariance(jj, jj)))}};
    row["p_value"] = wald ? nlohmann::json(wald->p[j]) : nlohmann::json(nullptr);
    rows.push_back(row);
  }
  nlohmann::json out = {{"coefficients", rows},
                        {"log_partial_likelihood", fit.log_partial_likelihood},
                        {"null_log_partial_likelihood", fit.null_log_partial_likelihood},
                        {"iterations", fit.iterations},
                        {"converged", fit.converged},
                        {"n_subjects", fit.n_subjects},
                        {"n_events", fit.n_events},
                        {"layout",
                         {{"clinical", fit.layout.clinical},
                          {"dim0", fit.layout.dim0},
                          {"dim1", fit.layout.dim1}}}};
  if (wald && p > 0) {
    out["wald"] = {{"statistic", wald->statistic}, {"df", wald->df}, {"p_value", wald->p_value}};
  }
  return out;
}

}  // namespace persurv
