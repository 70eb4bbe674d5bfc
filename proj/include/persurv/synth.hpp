#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "persurv/imgio.hpp"
#include "persurv/survival.hpp"

namespace persurv {

// Tumor layouts used by the generator:
//   scattered   - many small separate tumor islands
//   blob        - one to three solid disks
//   broken_ring - thin annuli interrupted by gaps
enum class ShapeClass { kScattered, kBlob, kBrokenRing };

const char* to_string(ShapeClass c) noexcept;
ShapeClass shape_class_from_string(const std::string& name);

struct CohortSpec {
  std::size_t n_patients = 0;
  std::size_t images_per_patient = 1;
  std::size_t image_size = 64;
  std::map<ShapeClass, double> class_mix;
  std::map<ShapeClass, double> hazard_multipliers;
  double censor_rate = 0.0;
  RngSeed seed{};
  // Not required in the JSON document; defaults shown.
  double baseline_hazard = 0.1;
  double clinical_log_hr = 0.5;  // per SD of the single clinical covariate "age"
  double tumor_fraction_min = 0.08;
  double tumor_fraction_max = 0.16;
  bool three_class = true;
};

CohortSpec cohort_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CohortSpec& spec);

struct SyntheticPatient {
  std::string id;
  ShapeClass shape = ShapeClass::kScattered;
  std::vector<LabelImage> images;
  SurvivalRecord record;  // covariates = {age}
};

// Draws a labelled cohort. Survival times are exponential with hazard
// baseline * multiplier[shape] * exp(clinical_log_hr * age); censoring times
// are independent exponentials whose rate is tuned to the requested
// censoring fraction. The tumor pixel count of every image is drawn
// independently of its shape class, so pixel-permuted copies carry no
// information about the class.
std::vector<SyntheticPatient> synth_cohort(const CohortSpec& spec, RngSeed seed);
inline std::vector<SyntheticPatient> synth_cohort(const CohortSpec& spec) {
  return synth_cohort(spec, spec.seed);
}

// Single image of the given archetype; exposed for tests and the CLI.
LabelImage synth_image(ShapeClass shape, std::size_t size, bool three_class, double tumor_fraction,
                       SplitMix64& rng);

// Writes images/<id>_<k>.csv, manifest.csv (patient_id,image_path) and
// survival.csv under `dir`.
void write_cohort(const std::vector<SyntheticPatient>& cohort, const std::filesystem::path& dir);

}  // namespace persurv
