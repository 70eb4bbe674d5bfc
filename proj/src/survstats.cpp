#include "persurv/survstats.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "persurv/coxph.hpp"
#include "persurv/distributions.hpp"
#include "persurv/error.hpp"
#include "persurv/format.hpp"

namespace persurv {

double KmCurve::survival_at(double t) const {
  double s = 1.0;
  for (const auto& step : steps) {
    if (step.time > t) break;
    s = step.survival;
  }
  return s;
}

KmCurve kaplan_meier(std::span<const SurvivalRecord> data) {
  if (data.empty()) throw Error(ErrorCode::kEmptyData, "Kaplan-Meier of an empty sample");
  // time -> (events, leaving)
  std::map<double, std::pair<std::size_t, std::size_t>> table;
  for (const auto& r : data) {
    auto& slot = table[r.time];
    slot.first += r.event ? 1 : 0;
    ++slot.second;
  }
  KmCurve curve;
  std::size_t at_risk = data.size();
  double s = 1.0;
  for (const auto& [time, counts] : table) {
    if (counts.first > 0) {
      s *= static_cast<double>(at_risk - counts.first) / static_cast<double>(at_risk);
      curve.steps.push_back({time, s, at_risk, counts.first});
    }
    at_risk -= counts.second;
  }
  return curve;
}

LogRankResult log_rank(std::span<const SurvivalRecord> group_a,
                       std::span<const SurvivalRecord> group_b) {
  if (group_a.empty() || group_b.empty()) {
    throw Error(ErrorCode::kEmptyData, "log-rank needs two non-empty groups");
  }
  struct Counts {
    std::size_t events_a = 0, events_b = 0, leave_a = 0, leave_b = 0;
  };
  std::map<double, Counts> table;
  for (const auto& r : group_a) {
    auto& c = table[r.time];
    c.events_a += r.event ? 1 : 0;
    ++c.leave_a;
  }
  for (const auto& r : group_b) {
    auto& c = table[r.time];
    c.events_b += r.event ? 1 : 0;
    ++c.leave_b;
  }
  LogRankResult out;
  double n_a = static_cast<double>(group_a.size());
  double n_b = static_cast<double>(group_b.size());
  bool any_event = false;
  for (const auto& [time, c] : table) {
    const double d = static_cast<double>(c.events_a + c.events_b);
    if (d > 0) {
      any_event = true;
      const double n = n_a + n_b;
      out.observed_a += static_cast<double>(c.events_a);
      out.expected_a += d * n_a / n;
      if (n > 1.0) out.variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1.0);
    }
    n_a -= static_cast<double>(c.leave_a);
    n_b -= static_cast<double>(c.leave_b);
  }
  if (!any_event) throw Error(ErrorCode::kNoEvents, "log-rank test without events");
  const double diff = out.observed_a - out.expected_a;
  if (out.variance > 0.0) {
    out.statistic = diff * diff / out.variance;
    out.p_value = chi_square_sf(out.statistic, 1.0);
  }
  return out;
}

double hazard_ratio(std::span<const SurvivalRecord> data, const std::vector<bool>& high_risk) {
  if (high_risk.size() != data.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "group labels do not match records");
  }
  std::vector<SurvivalRecord> recs(data.begin(), data.end());
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].covariates = {high_risk[i] ? 1.0 : 0.0};
  const CoxFit fit = fit_cox(recs, CovariateLayout{1, 0, 0});
  return std::exp(fit.coefficients[0]);
}

std::vector<bool> assign_risk_groups(std::span<const double> scores,
                                     std::span<const std::string> patient_ids) {
  if (scores.empty()) throw Error(ErrorCode::kEmptyData, "no risk scores");
  if (!patient_ids.empty() && patient_ids.size() != scores.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "patient ids do not match scores");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (!patient_ids.empty()) return patient_ids[a] > patient_ids[b];
    return a > b;
  });
  std::vector<bool> high(scores.size(), false);
  for (std::size_t k = 0; k < scores.size() / 2; ++k) high[order[k]] = true;
  return high;
}

std::string format_km_csv(const KmCurve& curve) {
  std::string out = "time,survival,at_risk,events\n";
  for (const auto& s : curve.steps) {
    out += format_double(s.time) + "," + format_double(s.survival) + "," + std::to_string(s.at_risk) +
           "," + std::to_string(s.events) + "\n";
  }
  return out;
}

nlohmann::json log_rank_json(const LogRankResult& r) {
  return {{"statistic", r.statistic}, {"df", r.df},          {"p_value", r.p_value},
          {"observed_a", r.observed_a}, {"expected_a", r.expected_a}, {"variance", r.variance}};
}

}  // namespace persurv
