#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace persurv {

// One right-censored observation. `covariates` holds clinical values first,
// then dimension-0 FPC scores, then dimension-1 FPC scores.
struct SurvivalRecord {
  std::string patient_id;
  double time = 0.0;
  bool event = false;
  std::vector<double> covariates;
};

struct SurvivalTable {
  std::vector<std::string> covariate_names;
  std::vector<SurvivalRecord> records;
};

// `patient_id,time,event,<covariate columns...>` with a header row.
SurvivalTable load_survival_csv(const std::filesystem::path& path);
SurvivalTable parse_survival_csv(std::string_view text);
std::string format_survival_csv(const SurvivalTable& table);

}  // namespace persurv
