#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "persurv/coxph.hpp"
#include "persurv/cubical.hpp"
#include "persurv/fpca.hpp"
#include "persurv/imgio.hpp"
#include "persurv/psurf.hpp"
#include "persurv/rng.hpp"
#include "persurv/survival.hpp"
#include "persurv/survstats.hpp"

namespace persurv {

enum class ClassMode { kTwoClass, kThreeClass };
// mean-risk: one unit per image, image risks averaged per patient.
// mean-surface: one unit per patient carrying the mean of its image surfaces.
enum class Aggregation { kMeanRisk, kMeanSurface };
enum class SelectionMode { kAic, kPv };
// isolated: each fold eigen-decomposes the Gram block of its own training
// surfaces. downdate: LeaveOneOutFpca (much faster, same result to rounding,
// but reads the held-out surface through the full-data decomposition).
enum class FoldFpca { kIsolated, kDowndate };

const char* to_string(ClassMode m) noexcept;
const char* to_string(Aggregation a) noexcept;
const char* to_string(SelectionMode m) noexcept;
const char* to_string(FoldFpca f) noexcept;

// Either an arithmetic range from..to (inclusive, step > 0) or an explicit
// list; the list wins when non-empty.
struct SigmaGridSpec {
  double from = 0.1;
  double to = 3.0;
  double step = 0.1;
  std::vector<double> values;

  // Range points are from + k * step while <= to (up to 1e-9 * step),
  // rounded to 12 decimals so 0.1 + 2 * 0.1 prints as 0.3.
  std::vector<double> points() const;
};

struct StudyConfig {
  std::filesystem::path manifest;  // CSV: patient_id,image_path (relative to the manifest)
  std::filesystem::path survival;  // CSV: patient_id,time,event,<clinical...>
  ClassMode class_mode = ClassMode::kThreeClass;
  double sigma0 = 1.0;
  double sigma1 = 1.0;
  SigmaGridSpec sigma_grid;
  Kernel kernel = Kernel::kStandardGaussian;
  SelectionMode selection = SelectionMode::kAic;
  std::size_t q_max = 3;
  std::size_t r_max = 3;
  double pv_threshold = 0.9;           // used when selection == kPv
  double validity_pv_threshold = 0.9;  // FPC count of the block-test model
  Aggregation aggregation = Aggregation::kMeanRisk;
  // Study resolution in pixels per side; diagrams of images of another width
  // are scaled by baseline / width. 0 disables rescaling.
  double baseline_resolution = 0.0;
  FoldFpca fold_fpca = FoldFpca::kIsolated;
  RngSeed seed{};
  std::filesystem::path out_dir = "persurv_out";
};

// JSON keys mirror the field names. `selection` is either
// {"aic": {"q_max": 3, "r_max": 3}} or {"pv": 0.9}. Relative paths are
// resolved against base_dir.
StudyConfig study_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
StudyConfig load_study_config(const std::filesystem::path& path);
nlohmann::json to_json(const StudyConfig& config);

struct StudyImage {
  std::string patient_id;
  std::string path;  // as listed in the manifest
  LabelImage image;  // denoised in three-class mode
};

struct Study {
  std::vector<std::string> covariate_names;
  std::vector<SurvivalRecord> patients;    // survival CSV order
  std::vector<StudyImage> images;          // manifest order
  std::vector<std::size_t> image_patient;  // index into patients
};

// Loads and cross-checks manifest and survival table. Every patient needs at
// least one image and every image a survival record.
Study load_study(const StudyConfig& config);

// Finite dimension-0 and dimension-1 diagrams of one image, rescaled to the
// baseline resolution.
struct ImageFeatures {
  PersistenceDiagram dim0;
  PersistenceDiagram dim1;
};

// SEDT (three- or two-class) -> filtration -> persistence -> filter_finite
// -> rescale. Errors carry the image path.
ImageFeatures image_features(const LabelImage& image, const StudyConfig& config);
std::vector<ImageFeatures> extract_features(const Study& study, const StudyConfig& config,
                                            std::size_t threads = 1);

// Surfaces of every analysis unit on the corpus-wide grid of one dimension.
struct UnitSurfaces {
  SurfaceGrid grid;
  Eigen::MatrixXd values;  // units x grid.size()
};

struct StudyUnits {
  std::vector<std::size_t> patient;  // per unit, index into Study::patients
  std::vector<std::string> label;    // image path or patient id
  UnitSurfaces dim0;
  UnitSurfaces dim1;
  std::vector<SurvivalRecord> records;  // the patient's record, per unit
};

// Grids come from all images' diagrams with padding ceil(3 sigma). The grid
// is the one input shared by every fold: it is geometry only.
StudyUnits build_units(const Study& study, const std::vector<ImageFeatures>& features,
                       const StudyConfig& config, double sigma0, double sigma1, std::size_t threads = 1);

// FPCA + Cox head of the functional model.
struct HeadFit {
  FpcaModel fpca0;
  FpcaModel fpca1;
  std::size_t q = 0;
  std::size_t r = 0;
  CoxFit fit;
  std::vector<AicCandidate> candidates;  // AIC selection only
};

// Cox dataset with clinical covariates followed by the first q / r training
// scores of the two models (rows aligned with `records`).
CoxDataset head_dataset(std::span<const SurvivalRecord> records, const FpcaModel& fpca0,
                        const FpcaModel& fpca1, std::size_t q, std::size_t r);

// Selects (q, r) by the configured rule and fits. The models must carry
// enough components; AIC bounds are capped at their positive components.
HeadFit fit_head(std::span<const SurvivalRecord> records, FpcaModel fpca0, FpcaModel fpca1,
                 const StudyConfig& config);

// Linear predictor of one unit under a head.
double head_risk(const HeadFit& head, std::span<const double> clinical, const Eigen::VectorXd& surface0,
                 const Eigen::VectorXd& surface1);

// Full-data head (fit_fpca on all units).
HeadFit fit_full_head(const StudyUnits& units, const StudyConfig& config);

// Fold model for one held-out unit. Only the other units' surfaces and
// records enter the fit.
HeadFit loocv_fold_model(const StudyUnits& units, const StudyConfig& config, std::size_t held_out);

struct FoldResult {
  std::string unit;
  std::optional<double> risk;
  std::size_t q = 0;
  std::size_t r = 0;
  std::string failure;
};

struct LoocvResult {
  std::vector<FoldResult> folds;                     // per unit
  std::vector<std::optional<double>> patient_risk;  // per Study::patients; empty where all folds failed
};

// Leave-one-unit-out prediction; patient risk is the mean over its units'
// successful folds. Failed folds are recorded, never imputed.
LoocvResult loocv_predict(const Study& study, const StudyUnits& units, const StudyConfig& config,
                          std::size_t threads = 1);
LoocvResult loocv_predict(const StudyConfig& config, std::size_t threads = 1);

// Leave-one-patient-out prediction from the clinical covariates alone.
// Without clinical covariates every risk is 0.
std::vector<std::optional<double>> clinical_loocv(const Study& study);

struct RiskEvaluation {
  std::vector<std::string> patient_ids;  // patients with a score
  std::vector<double> scores;
  std::vector<bool> high_risk;
  std::vector<std::string> excluded;  // patients without a score
  KmCurve km_high;
  KmCurve km_low;
  std::optional<LogRankResult> log_rank;
  std::optional<double> hazard_ratio;
  std::string failure;
};

// Median split (assign_risk_groups), KM per group, log-rank and HR.
RiskEvaluation evaluate_risk_scores(const Study& study, const std::vector<std::optional<double>>& risk);

struct ValidityTest {
  std::size_t q = 0;
  std::size_t r = 0;
  CoxFit fit;
  ChiSquareTest test;
};

// Full-data fit with q, r chosen by validity_pv_threshold, then the joint
// Wald test of the functional block.
ValidityTest validity_test(const StudyUnits& units, const StudyConfig& config);

// alpha(u) = sum_j coef_j phi_j(u) over the fit's dimension block; signed
// values on the model grid.
PersistenceSurface export_coefficient_surface(const CoxFit& fit, const FpcaModel& model, int dimension);

// Model fits that fail are recorded as "<ErrorCode>: message" next to an
// empty optional.
struct StudyReport {
  nlohmann::json provenance;
  StudyConfig config;
  std::vector<std::string> covariate_names;
  std::vector<std::string> patient_ids;  // survival CSV order
  std::size_t n_patients = 0;
  std::size_t n_images = 0;
  std::size_t n_events = 0;
  std::size_t n_units = 0;
  SurfaceGrid grid0;
  SurfaceGrid grid1;
  std::optional<CoxFit> clinical_fit;
  std::string clinical_failure;
  std::optional<HeadFit> functional;
  std::string functional_failure;
  std::optional<ValidityTest> validity;
  std::string validity_failure;
  LoocvResult functional_loocv;
  std::vector<std::optional<double>> clinical_risk;
  RiskEvaluation functional_eval;
  RiskEvaluation clinical_eval;
};

StudyReport run_study(const StudyConfig& config, std::size_t threads = 1);
nlohmann::json to_json(const StudyReport& report);
// report.json, risk_scores.csv, km_<model>_<group>.csv, fpca_dim{0,1}.{json,csv},
// coefficient_dim{0,1}.{csv,json}.
void write_report(const StudyReport& report, const std::filesystem::path& out_dir);

struct GridCell {
  double sigma0 = 0.0;
  double sigma1 = 0.0;
  std::optional<double> cvpl;
  std::size_t q = 0;
  std::size_t r = 0;
  std::string failure;
};

// Cross-validated partial likelihood sum_i [l(beta_-i) - l_-i(beta_-i)] over
// patient folds, with FPCA and (q, r) fixed from the full data of each
// (sigma0, sigma1). Ranked by CVPL descending; failed cells last; ties keep
// enumeration order (sigma0 outer, sigma1 inner).
std::vector<GridCell> sigma_grid_search(const Study& study, const std::vector<ImageFeatures>& features,
                                        const StudyConfig& config, std::span<const double> sigma0_values,
                                        std::span<const double> sigma1_values, std::size_t threads = 1);
std::vector<GridCell> sigma_grid_search(const StudyConfig& config, std::size_t threads = 1);
// rank,sigma0,sigma1,cvpl,q,r,failure
std::string format_grid_csv(const std::vector<GridCell>& cells);

struct NullCohort {
  std::size_t cohort = 0;
  std::optional<double> functional_p;
  std::optional<double> clinical_p;
  std::optional<double> block_p;
  std::string failure;
};

// Each cohort permutes the pixels of every (denoised) image with a seed
// derived from (config.seed, cohort, image) and reruns the functional LOOCV
// and the validity test. The clinical-only p is computed once.
std::vector<NullCohort> null_simulation(const Study& study, const StudyConfig& config, std::size_t n_cohorts,
                                        std::size_t threads = 1);
std::vector<NullCohort> null_simulation(const StudyConfig& config, std::size_t n_cohorts,
                                        std::size_t threads = 1);
// cohort,functional_p,clinical_p,block_p,failure
std::string format_null_csv(const std::vector<NullCohort>& rows);

}  // namespace persurv
