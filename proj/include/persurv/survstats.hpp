#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "persurv/survival.hpp"

namespace persurv {

struct KmStep {
  double time = 0.0;
  double survival = 1.0;
  std::size_t at_risk = 0;
  std::size_t events = 0;
};

// Product-limit estimate with one step per distinct event time. Before the
// first step the survival is 1.
struct KmCurve {
  std::vector<KmStep> steps;
  double survival_at(double t) const;
};

KmCurve kaplan_meier(std::span<const SurvivalRecord> data);

struct LogRankResult {
  double statistic = 0.0;
  std::size_t df = 1;
  double p_value = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
};

// Two-sample log-rank test over the pooled distinct event times.
LogRankResult log_rank(std::span<const SurvivalRecord> group_a,
                       std::span<const SurvivalRecord> group_b);

// exp(beta) of a univariate Cox fit on the indicator high_risk[i].
double hazard_ratio(std::span<const SurvivalRecord> data, const std::vector<bool>& high_risk);

// High risk = the floor(n/2) patients ranked first by (score desc, id desc);
// for distinct scores these are exactly the patients above the median.
std::vector<bool> assign_risk_groups(std::span<const double> scores,
                                     std::span<const std::string> patient_ids);

// `time,survival,at_risk,events`
std::string format_km_csv(const KmCurve& curve);
nlohmann::json log_rank_json(const LogRankResult& result);

}  // namespace persurv
