#include "persurv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <variant>

#include "persurv/error.hpp"
#include "persurv/format.hpp"
#include "persurv/parallel.hpp"
#include "persurv/sedt.hpp"

namespace persurv {

namespace {

std::string describe(const Error& e) { return std::string(to_string(e.code())) + ": " + e.what(); }

[[noreturn]] void rethrow_with(const Error& e, const std::string& where) {
  throw Error(e.code(), where + ": " + e.what());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kMissingFile, "cannot write " + path.string());
  out << text;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

// Comma-separated line without quoting, the format every manifest uses.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream row(line);
  while (std::getline(row, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

template <class Enum, std::size_t N>
Enum enum_from_string(const std::string& name, const std::pair<const char*, Enum> (&table)[N], const char* what) {
  for (const auto& [key, value] : table) {
    if (name == key) return value;
  }
  throw Error(ErrorCode::kInvalidArgument, std::string("unknown ") + what + " '" + name + "'");
}

constexpr std::pair<const char*, ClassMode> kClassModes[] = {{"two-class", ClassMode::kTwoClass},
                                                              {"three-class", ClassMode::kThreeClass}};
constexpr std::pair<const char*, Aggregation> kAggregations[] = {{"mean-risk", Aggregation::kMeanRisk},
                                                                  {"mean-surface", Aggregation::kMeanSurface}};
constexpr std::pair<const char*, FoldFpca> kFoldFpca[] = {{"isolated", FoldFpca::kIsolated},
                                                           {"downdate", FoldFpca::kDowndate}};

void require_sigma(double s, const char* what) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw Error(ErrorCode::kNonPositiveSigma, std::string(what) + " must be positive and finite");
  }
}

void require_fraction(double c, const char* what) {
  if (!(c > 0.0 && c < 1.0)) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " must lie in (0, 1)");
}

std::vector<std::string> covariate_names_with_scores(const std::vector<std::string>& clinical, std::size_t q,
                                                     std::size_t r) {
  auto names = clinical;
  for (std::size_t j = 1; j <= q; ++j) names.push_back("fpc0_" + std::to_string(j));
  for (std::size_t j = 1; j <= r; ++j) names.push_back("fpc1_" + std::to_string(j));
  return names;
}

FpcaModel truncated(FpcaModel model, std::size_t k) {
  k = std::min(k, model.components());
  const auto kk = static_cast<Eigen::Index>(k);
  model.eigenvalues.conservativeResize(kk);
  model.eigenfunctions.conservativeResize(Eigen::NoChange, kk);
  model.training_scores.conservativeResize(Eigen::NoChange, kk);
  return model;
}

// Components a head needs from each FPCA model under the configured rule.
std::size_t needed_components(const FpcaModel& model, std::size_t bound, const StudyConfig& config) {
  if (config.selection == SelectionMode::kAic) return std::min(bound, model.positive_components());
  return std::min(select_by_pv(model, config.pv_threshold), model.positive_components());
}

// Fold FPCA engines for one dimension.
class FoldEngine {
 public:
  FoldEngine(const UnitSurfaces& surfaces, FoldFpca kind) {
    if (surfaces.values.rows() == 2) {
      two_units_ = true;
      grid_ = surfaces.grid;
      values_ = surfaces.values;
      return;
    }
    if (kind == FoldFpca::kIsolated) {
      engine_ = std::make_unique<GramFpca>(surfaces.grid, surfaces.values);
    } else {
      engine_ = std::make_unique<LeaveOneOutFpca>(surfaces.grid, surfaces.values);
    }
  }

  FpcaModel without(std::size_t held_out, std::size_t components, double pv) const {
    if (two_units_) return single_sample(1 - held_out);
    return std::visit([&](const auto& e) { return e->without(held_out, components, pv); }, engine_);
  }

 private:
  // Two units: the training side of a fold is one surface, which spans no
  // direction; the model is its mean with zero components.
  FpcaModel single_sample(std::size_t row) const {
    FpcaModel m;
    m.grid = grid_;
    m.mean = values_.row(static_cast<Eigen::Index>(row)).transpose();
    m.eigenvalues.resize(0);
    m.eigenfunctions.resize(m.mean.size(), 0);
    m.n_samples = 1;
    m.training_scores.resize(1, 0);
    return m;
  }

  bool two_units_ = false;
  SurfaceGrid grid_;
  Eigen::MatrixXd values_;
  std::variant<std::unique_ptr<GramFpca>, std::unique_ptr<LeaveOneOutFpca>> engine_;
};

std::pair<std::size_t, double> fold_request(const StudyConfig& config, int dim) {
  if (config.selection == SelectionMode::kAic) return {dim == 0 ? config.q_max : config.r_max, 0.0};
  return {0, config.pv_threshold};
}

HeadFit fold_head(const StudyUnits& units, const StudyConfig& config, const FoldEngine& e0, const FoldEngine& e1,
                  std::size_t held_out) {
  const auto [k0, pv0] = fold_request(config, 0);
  const auto [k1, pv1] = fold_request(config, 1);
  FpcaModel f0 = e0.without(held_out, k0, pv0);
  FpcaModel f1 = e1.without(held_out, k1, pv1);
  std::vector<SurvivalRecord> train;
  train.reserve(units.records.size() - 1);
  for (std::size_t u = 0; u < units.records.size(); ++u) {
    if (u != held_out) train.push_back(units.records[u]);
  }
  return fit_head(train, std::move(f0), std::move(f1), config);
}

void check_units(const StudyUnits& units) {
  const auto n = units.records.size();
  if (n < 2) throw Error(ErrorCode::kFewerThanTwoSamples, "leave-one-out needs at least two units");
  if (static_cast<std::size_t>(units.dim0.values.rows()) != n || static_cast<std::size_t>(units.dim1.values.rows()) != n ||
      units.patient.size() != n || units.label.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "unit tables disagree in length");
  }
}

UnitSurfaces unit_surfaces(const Study& study, const std::vector<ImageFeatures>& features, const StudyConfig& config,
                           int dim, double sigma, std::size_t threads) {
  require_sigma(sigma, dim == 0 ? "sigma0" : "sigma1");
  std::vector<PersistenceDiagram> diagrams;
  diagrams.reserve(features.size());
  for (const auto& f : features) diagrams.push_back(dim == 0 ? f.dim0 : f.dim1);
  UnitSurfaces out;
  try {
    out.grid = shared_grid(diagrams, default_padding(sigma));
  } catch (const Error& e) {
    rethrow_with(e, "dimension " + std::to_string(dim));
  }
  const auto m = static_cast<Eigen::Index>(out.grid.size());
  Eigen::MatrixXd per_image(static_cast<Eigen::Index>(diagrams.size()), m);
  parallel_for(diagrams.size(), threads, [&](std::size_t i) {
    const auto s = persistence_surface(diagrams[i], out.grid, sigma, config.kernel);
    per_image.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(s.values.data(), m);
  });
  if (config.aggregation == Aggregation::kMeanRisk) {
    out.values = std::move(per_image);
    return out;
  }
  const auto np = study.patients.size();
  out.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(np), m);
  std::vector<double> count(np, 0.0);
  for (std::size_t i = 0; i < study.images.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(study.image_patient[i])) += per_image.row(static_cast<Eigen::Index>(i));
    count[study.image_patient[i]] += 1.0;
  }
  for (std::size_t p = 0; p < np; ++p) out.values.row(static_cast<Eigen::Index>(p)) /= count[p];
  return out;
}

StudyUnits unit_layout(const Study& study, const StudyConfig& config) {
  StudyUnits units;
  if (config.aggregation == Aggregation::kMeanRisk) {
    for (std::size_t i = 0; i < study.images.size(); ++i) {
      units.patient.push_back(study.image_patient[i]);
      units.label.push_back(study.images[i].path);
      units.records.push_back(study.patients[study.image_patient[i]]);
    }
  } else {
    for (std::size_t p = 0; p < study.patients.size(); ++p) {
      units.patient.push_back(p);
      units.label.push_back(study.patients[p].patient_id);
      units.records.push_back(study.patients[p]);
    }
  }
  return units;
}

nlohmann::json grid_json(const SurfaceGrid& g) {
  return {{"x_range", {g.x_lo(), g.x_hi()}}, {"y_range", {g.y_lo(), g.y_hi()}}, {"points", g.size()}};
}

nlohmann::json km_json(const KmCurve& curve) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : curve.steps) {
    steps.push_back({{"time", s.time}, {"survival", s.survival}, {"at_risk", s.at_risk}, {"events", s.events}});
  }
  return steps;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

nlohmann::json evaluation_json(const RiskEvaluation& e) {
  nlohmann::json j;
  j["n_scored"] = e.patient_ids.size();
  j["excluded"] = e.excluded;
  std::size_t high = 0;
  for (bool h : e.high_risk) high += h;
  j["group_sizes"] = {{"high", high}, {"low", e.high_risk.size() - high}};
  j["log_rank"] = e.log_rank ? log_rank_json(*e.log_rank) : nlohmann::json(nullptr);
  j["hazard_ratio"] = optional_json(e.hazard_ratio);
  j["km_high"] = km_json(e.km_high);
  j["km_low"] = km_json(e.km_low);
  if (!e.failure.empty()) j["failure"] = e.failure;
  return j;
}

nlohmann::json fpca_summary(const FpcaModel& m, std::size_t shown) {
  const auto k = std::min(shown, m.components());
  std::vector<double> ev(m.eigenvalues.data(), m.eigenvalues.data() + k);
  std::vector<double> pv;
  for (std::size_t j = 1; j <= k; ++j) pv.push_back(percent_variance(m, j));
  return {{"n_samples", m.n_samples},
          {"components", m.components()},
          {"positive_components", m.positive_components()},
          {"total_variance", m.total_variance},
          {"leading_eigenvalues", ev},
          {"cumulative_percent_variance", pv}};
}

// Failure text goes into a CSV cell; commas and line breaks would split it.
std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

nlohmann::json risk_score_rows(const StudyReport& r) {
  auto groups = [](const RiskEvaluation& e) {
    std::map<std::string, std::pair<double, bool>> out;
    for (std::size_t i = 0; i < e.patient_ids.size(); ++i) {
      out[e.patient_ids[i]] = {e.scores[i], i < e.high_risk.size() && e.high_risk[i]};
    }
    return out;
  };
  const auto f = groups(r.functional_eval);
  const auto c = groups(r.clinical_eval);
  const bool f_split = !r.functional_eval.high_risk.empty(), c_split = !r.clinical_eval.high_risk.empty();
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& id : r.patient_ids) {
    nlohmann::json row = {{"patient_id", id}};
    const auto fi = f.find(id), ci = c.find(id);
    row["functional_risk"] = fi == f.end() ? nlohmann::json(nullptr) : nlohmann::json(fi->second.first);
    row["clinical_risk"] = ci == c.end() ? nlohmann::json(nullptr) : nlohmann::json(ci->second.first);
    row["functional_group"] = (fi == f.end() || !f_split) ? nlohmann::json(nullptr)
                                                          : nlohmann::json(fi->second.second ? "high" : "low");
    row["clinical_group"] = (ci == c.end() || !c_split) ? nlohmann::json(nullptr)
                                                        : nlohmann::json(ci->second.second ? "high" : "low");
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

const char* to_string(ClassMode m) noexcept { return m == ClassMode::kTwoClass ? "two-class" : "three-class"; }
const char* to_string(Aggregation a) noexcept { return a == Aggregation::kMeanRisk ? "mean-risk" : "mean-surface"; }
const char* to_string(SelectionMode m) noexcept { return m == SelectionMode::kAic ? "aic" : "pv"; }
const char* to_string(FoldFpca f) noexcept { return f == FoldFpca::kIsolated ? "isolated" : "downdate"; }

std::vector<double> SigmaGridSpec::points() const {
  if (!values.empty()) {
    for (double v : values) require_sigma(v, "sigma grid value");
    return values;
  }
  require_sigma(from, "sigma grid start");
  if (!(step > 0.0) || !std::isfinite(step)) throw Error(ErrorCode::kInvalidArgument, "sigma grid step must be positive");
  if (!(to >= from) || !std::isfinite(to)) throw Error(ErrorCode::kInvalidArgument, "sigma grid end precedes its start");
  std::vector<double> out;
  for (std::size_t k = 0;; ++k) {
    const double v = from + static_cast<double>(k) * step;
    if (v > to + 1e-9 * step) break;
    out.push_back(std::round(v * 1e12) / 1e12);
  }
  return out;
}

StudyConfig study_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  static const std::set<std::string> known = {
      "manifest", "survival",     "class_mode",           "sigma0",      "sigma1",
      "sigma_grid", "kernel",     "selection",            "validity_pv_threshold",
      "aggregation", "baseline_resolution", "fold_fpca",  "seed",        "out_dir"};
  if (!j.is_object()) throw Error(ErrorCode::kParseError, "study config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
  }
  StudyConfig c;
  try {
    c.manifest = resolve(base_dir, j.at("manifest").get<std::string>());
    c.survival = resolve(base_dir, j.at("survival").get<std::string>());
    if (j.contains("class_mode")) c.class_mode = enum_from_string(j["class_mode"].get<std::string>(), kClassModes, "class mode");
    c.sigma0 = j.value("sigma0", c.sigma0);
    c.sigma1 = j.value("sigma1", c.sigma1);
    if (j.contains("sigma_grid")) {
      const auto& g = j["sigma_grid"];
      if (g.contains("values")) {
        c.sigma_grid.values = g["values"].get<std::vector<double>>();
        if (c.sigma_grid.values.empty()) throw Error(ErrorCode::kEmptyList, "sigma grid list is empty");
      } else {
        c.sigma_grid.from = g.value("from", c.sigma_grid.from);
        c.sigma_grid.to = g.value("to", c.sigma_grid.to);
        c.sigma_grid.step = g.value("step", c.sigma_grid.step);
      }
    }
    if (j.contains("kernel")) c.kernel = kernel_from_string(j["kernel"].get<std::string>());
    if (j.contains("selection")) {
      const auto& s = j["selection"];
      if (!s.is_object() || s.size() != 1 || !(s.contains("aic") || s.contains("pv"))) {
        throw Error(ErrorCode::kInvalidArgument, "selection must name exactly one of 'aic' or 'pv'");
      }
      if (s.contains("aic")) {
        c.selection = SelectionMode::kAic;
        c.q_max = s["aic"].value("q_max", c.q_max);
        c.r_max = s["aic"].value("r_max", c.r_max);
      } else {
        c.selection = SelectionMode::kPv;
        c.pv_threshold = s["pv"].get<double>();
      }
    }
    c.validity_pv_threshold = j.value("validity_pv_threshold", c.validity_pv_threshold);
    if (j.contains("aggregation")) c.aggregation = enum_from_string(j["aggregation"].get<std::string>(), kAggregations, "aggregation");
    c.baseline_resolution = j.value("baseline_resolution", c.baseline_resolution);
    if (j.contains("fold_fpca")) c.fold_fpca = enum_from_string(j["fold_fpca"].get<std::string>(), kFoldFpca, "fold FPCA engine");
    if (j.contains("seed")) c.seed = RngSeed{j["seed"].get<std::uint64_t>()};
    if (j.contains("out_dir")) c.out_dir = resolve(base_dir, j["out_dir"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("study config: ") + e.what());
  }
  require_sigma(c.sigma0, "sigma0");
  require_sigma(c.sigma1, "sigma1");
  c.sigma_grid.points();
  if (c.selection == SelectionMode::kPv) require_fraction(c.pv_threshold, "pv threshold");
  require_fraction(c.validity_pv_threshold, "validity pv threshold");
  if (!(c.baseline_resolution >= 0.0)) throw Error(ErrorCode::kNonPositiveFactor, "baseline resolution must be >= 0");
  return c;
}

StudyConfig load_study_config(const std::filesystem::path& path) {
  const auto text = read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  return study_config_from_json(j, path.parent_path());
}

nlohmann::json to_json(const StudyConfig& c) {
  nlohmann::json j;
  j["manifest"] = c.manifest.generic_string();
  j["survival"] = c.survival.generic_string();
  j["class_mode"] = to_string(c.class_mode);
  j["sigma0"] = c.sigma0;
  j["sigma1"] = c.sigma1;
  if (c.sigma_grid.values.empty()) {
    j["sigma_grid"] = {{"from", c.sigma_grid.from}, {"to", c.sigma_grid.to}, {"step", c.sigma_grid.step}};
  } else {
    j["sigma_grid"] = {{"values", c.sigma_grid.values}};
  }
  j["kernel"] = to_string(c.kernel);
  if (c.selection == SelectionMode::kAic) {
    j["selection"] = {{"aic", {{"q_max", c.q_max}, {"r_max", c.r_max}}}};
  } else {
    j["selection"] = {{"pv", c.pv_threshold}};
  }
  j["validity_pv_threshold"] = c.validity_pv_threshold;
  j["aggregation"] = to_string(c.aggregation);
  j["baseline_resolution"] = c.baseline_resolution;
  j["fold_fpca"] = to_string(c.fold_fpca);
  j["seed"] = c.seed.value;
  j["out_dir"] = c.out_dir.generic_string();
  return j;
}

Study load_study(const StudyConfig& config) {
  Study study;
  SurvivalTable table;
  try {
    table = load_survival_csv(config.survival);
  } catch (const Error& e) {
    rethrow_with(e, config.survival.string());
  }
  study.covariate_names = table.covariate_names;
  study.patients = std::move(table.records);
  std::map<std::string, std::size_t> index;
  for (std::size_t p = 0; p < study.patients.size(); ++p) {
    if (!index.emplace(study.patients[p].patient_id, p).second) {
      throw Error(ErrorCode::kInvalidArgument, "patient " + study.patients[p].patient_id + " listed twice in survival data");
    }
  }

  std::istringstream manifest(read_text(config.manifest));
  const auto base = config.manifest.parent_path();
  std::string line;
  if (!std::getline(manifest, line)) throw Error(ErrorCode::kParseError, "manifest is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "patient_id" || header[1] != "image_path") {
    throw Error(ErrorCode::kParseError, "manifest header must start with patient_id,image_path");
  }
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::kRaggedRows, "manifest line " + std::to_string(line_no) + " has " +
                                              std::to_string(cells.size()) + " cells");
    }
    const auto it = index.find(cells[0]);
    if (it == index.end()) {
      throw Error(ErrorCode::kInvalidArgument, "image " + cells[1] + " belongs to patient " + cells[0] +
                                                   " who has no survival record");
    }
    StudyImage img;
    img.patient_id = cells[0];
    img.path = cells[1];
    try {
      img.image = load_label_image(resolve(base, cells[1]));
      if (config.class_mode == ClassMode::kThreeClass) img.image = denoise(img.image);
    } catch (const Error& e) {
      rethrow_with(e, "patient " + cells[0] + ", image " + cells[1]);
    }
    study.image_patient.push_back(it->second);
    study.images.push_back(std::move(img));
  }
  std::vector<bool> has_image(study.patients.size(), false);
  for (auto p : study.image_patient) has_image[p] = true;
  for (std::size_t p = 0; p < study.patients.size(); ++p) {
    if (!has_image[p]) {
      throw Error(ErrorCode::kInvalidArgument, "patient " + study.patients[p].patient_id + " has no image");
    }
  }
  if (study.images.empty()) throw Error(ErrorCode::kEmptyData, "manifest lists no images");
  return study;
}

ImageFeatures image_features(const LabelImage& image, const StudyConfig& config) {
  const DistanceField field = config.class_mode == ClassMode::kThreeClass ? sedt3(image) : sedt2(image);
  auto diagram = filter_finite(compute_persistence(field));
  if (config.baseline_resolution > 0.0 && static_cast<double>(image.width()) != config.baseline_resolution) {
    diagram = rescale_diagram(diagram, config.baseline_resolution / static_cast<double>(image.width()));
  }
  return {diagram.dimension(0), diagram.dimension(1)};
}

std::vector<ImageFeatures> extract_features(const Study& study, const StudyConfig& config, std::size_t threads) {
  std::vector<ImageFeatures> out(study.images.size());
  parallel_for(study.images.size(), threads, [&](std::size_t i) {
    try {
      out[i] = image_features(study.images[i].image, config);
    } catch (const Error& e) {
      rethrow_with(e, "patient " + study.images[i].patient_id + ", image " + study.images[i].path);
    }
  });
  return out;
}

StudyUnits build_units(const Study& study, const std::vector<ImageFeatures>& features, const StudyConfig& config,
                       double sigma0, double sigma1, std::size_t threads) {
  if (features.size() != study.images.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one feature set per image is required");
  }
  StudyUnits units = unit_layout(study, config);
  units.dim0 = unit_surfaces(study, features, config, 0, sigma0, threads);
  units.dim1 = unit_surfaces(study, features, config, 1, sigma1, threads);
  return units;
}

CoxDataset head_dataset(std::span<const SurvivalRecord> records, const FpcaModel& fpca0, const FpcaModel& fpca1,
                        std::size_t q, std::size_t r) {
  if (q > fpca0.components() || r > fpca1.components()) {
    throw Error(ErrorCode::kKTooLarge, "requested more scores than the FPCA models hold");
  }
  if (static_cast<std::size_t>(fpca0.training_scores.rows()) != records.size() ||
      static_cast<std::size_t>(fpca1.training_scores.rows()) != records.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "training scores do not match the survival records");
  }
  CoxDataset ds;
  ds.layout = {records.empty() ? 0 : records.front().covariates.size(), q, r};
  ds.records.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    SurvivalRecord rec = records[i];
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < q; ++j) rec.covariates.push_back(fpca0.training_scores(ii, static_cast<Eigen::Index>(j)));
    for (std::size_t j = 0; j < r; ++j) rec.covariates.push_back(fpca1.training_scores(ii, static_cast<Eigen::Index>(j)));
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

HeadFit fit_head(std::span<const SurvivalRecord> records, FpcaModel fpca0, FpcaModel fpca1, const StudyConfig& config) {
  HeadFit head;
  if (config.selection == SelectionMode::kAic) {
    const auto qm = std::min(config.q_max, fpca0.positive_components());
    const auto rm = std::min(config.r_max, fpca1.positive_components());
    auto sel = select_fpcs_aic([&](std::size_t q, std::size_t r) { return head_dataset(records, fpca0, fpca1, q, r); },
                               qm, rm);
    head.q = sel.q;
    head.r = sel.r;
    head.fit = std::move(sel.fit);
    head.candidates = std::move(sel.candidates);
  } else {
    head.q = needed_components(fpca0, 0, config);
    head.r = needed_components(fpca1, 0, config);
    const auto ds = head_dataset(records, fpca0, fpca1, head.q, head.r);
    head.fit = fit_cox(ds.records, ds.layout);
  }
  head.fpca0 = std::move(fpca0);
  head.fpca1 = std::move(fpca1);
  return head;
}

double head_risk(const HeadFit& head, std::span<const double> clinical, const Eigen::VectorXd& surface0,
                 const Eigen::VectorXd& surface1) {
  std::vector<double> x(clinical.begin(), clinical.end());
  const auto s0 = project(head.fpca0, surface0, head.q);
  const auto s1 = project(head.fpca1, surface1, head.r);
  x.insert(x.end(), s0.data(), s0.data() + s0.size());
  x.insert(x.end(), s1.data(), s1.data() + s1.size());
  return predict_risk(head.fit, x);
}

HeadFit fit_full_head(const StudyUnits& units, const StudyConfig& config) {
  return fit_head(units.records, fit_fpca(units.dim0.grid, units.dim0.values),
                  fit_fpca(units.dim1.grid, units.dim1.values), config);
}

HeadFit loocv_fold_model(const StudyUnits& units, const StudyConfig& config, std::size_t held_out) {
  check_units(units);
  if (held_out >= units.records.size()) throw Error(ErrorCode::kInvalidArgument, "held-out unit out of range");
  const FoldEngine e0(units.dim0, config.fold_fpca), e1(units.dim1, config.fold_fpca);
  return fold_head(units, config, e0, e1, held_out);
}

LoocvResult loocv_predict(const Study& study, const StudyUnits& units, const StudyConfig& config,
                          std::size_t threads) {
  check_units(units);
  const auto n = units.records.size();
  const FoldEngine e0(units.dim0, config.fold_fpca), e1(units.dim1, config.fold_fpca);
  LoocvResult out;
  out.folds.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    auto& fold = out.folds[i];
    fold.unit = units.label[i];
    try {
      const HeadFit head = fold_head(units, config, e0, e1, i);
      fold.q = head.q;
      fold.r = head.r;
      fold.risk = head_risk(head, units.records[i].covariates, units.dim0.values.row(static_cast<Eigen::Index>(i)).transpose(),
                            units.dim1.values.row(static_cast<Eigen::Index>(i)).transpose());
    } catch (const Error& e) {
      fold.failure = describe(e);
    }
  });
  std::vector<double> sum(study.patients.size(), 0.0);
  std::vector<std::size_t> count(study.patients.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.folds[i].risk) continue;
    sum[units.patient[i]] += *out.folds[i].risk;
    ++count[units.patient[i]];
  }
  out.patient_risk.resize(study.patients.size());
  for (std::size_t p = 0; p < study.patients.size(); ++p) {
    if (count[p]) out.patient_risk[p] = sum[p] / static_cast<double>(count[p]);
  }
  return out;
}

LoocvResult loocv_predict(const StudyConfig& config, std::size_t threads) {
  const Study study = load_study(config);
  const auto features = extract_features(study, config, threads);
  const auto units = build_units(study, features, config, config.sigma0, config.sigma1, threads);
  return loocv_predict(study, units, config, threads);
}

std::vector<std::optional<double>> clinical_loocv(const Study& study) {
  const auto n = study.patients.size();
  std::vector<std::optional<double>> risk(n);
  if (study.covariate_names.empty()) {
    std::fill(risk.begin(), risk.end(), 0.0);
    return risk;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<SurvivalRecord> train;
    train.reserve(n - 1);
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) train.push_back(study.patients[k]);
    }
    try {
      risk[i] = predict_risk(fit_cox(train), study.patients[i].covariates);
    } catch (const Error&) {
    }
  }
  return risk;
}

RiskEvaluation evaluate_risk_scores(const Study& study, const std::vector<std::optional<double>>& risk) {
  if (risk.size() != study.patients.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one risk slot per patient is required");
  }
  RiskEvaluation ev;
  std::vector<SurvivalRecord> scored;
  for (std::size_t p = 0; p < risk.size(); ++p) {
    if (risk[p] && std::isfinite(*risk[p])) {
      ev.patient_ids.push_back(study.patients[p].patient_id);
      ev.scores.push_back(*risk[p]);
      scored.push_back(study.patients[p]);
    } else {
      ev.excluded.push_back(study.patients[p].patient_id);
    }
  }
  if (scored.size() < 2) {
    ev.failure = "fewer than two patients have a risk score";
    return ev;
  }
  ev.high_risk = assign_risk_groups(ev.scores, ev.patient_ids);
  std::vector<SurvivalRecord> high, low;
  for (std::size_t i = 0; i < scored.size(); ++i) (ev.high_risk[i] ? high : low).push_back(scored[i]);
  ev.km_high = kaplan_meier(high);
  ev.km_low = kaplan_meier(low);
  try {
    ev.log_rank = log_rank(high, low);
  } catch (const Error& e) {
    ev.failure = "log-rank " + describe(e);
  }
  try {
    ev.hazard_ratio = hazard_ratio(scored, ev.high_risk);
  } catch (const Error& e) {
    if (!ev.failure.empty()) ev.failure += "; ";
    ev.failure += "hazard ratio " + describe(e);
  }
  return ev;
}

ValidityTest validity_test(const StudyUnits& units, const StudyConfig& config) {
  auto f0 = fit_fpca(units.dim0.grid, units.dim0.values);
  auto f1 = fit_fpca(units.dim1.grid, units.dim1.values);
  ValidityTest out;
  out.q = std::min(select_by_pv(f0, config.validity_pv_threshold), f0.positive_components());
  out.r = std::min(select_by_pv(f1, config.validity_pv_threshold), f1.positive_components());
  const auto ds = head_dataset(units.records, f0, f1, out.q, out.r);
  out.fit = fit_cox(ds.records, ds.layout);
  out.test = block_chisq_test(out.fit);
  return out;
}

PersistenceSurface export_coefficient_surface(const CoxFit& fit, const FpcaModel& model, int dimension) {
  if (dimension != 0 && dimension != 1) throw Error(ErrorCode::kInvalidArgument, "dimension must be 0 or 1");
  if (!fit.converged) throw Error(ErrorCode::kInvalidArgument, "fit did not converge");
  const std::size_t block = dimension == 0 ? fit.layout.dim0 : fit.layout.dim1;
  const std::size_t offset = fit.layout.clinical + (dimension == 0 ? 0 : fit.layout.dim0);
  if (static_cast<std::size_t>(fit.coefficients.size()) != fit.layout.total()) {
    throw Error(ErrorCode::kDimensionMismatch, "coefficients do not match the fit layout");
  }
  if (block > model.components() || static_cast<std::size_t>(model.eigenfunctions.rows()) != model.grid.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "FPCA model does not cover the fitted block of dimension " +
                                                   std::to_string(dimension));
  }
  const auto b = static_cast<Eigen::Index>(block);
  const Eigen::VectorXd values =
      model.eigenfunctions.leftCols(b) * fit.coefficients.segment(static_cast<Eigen::Index>(offset), b);
  return {model.grid, std::vector<double>(values.data(), values.data() + values.size())};
}

StudyReport run_study(const StudyConfig& config, std::size_t threads) {
  StudyReport report;
  report.config = config;
  const Study study = load_study(config);
  const auto features = extract_features(study, config, threads);
  const auto units = build_units(study, features, config, config.sigma0, config.sigma1, threads);

  std::string data;
  data += read_text(config.manifest);
  data += read_text(config.survival);
  for (const auto& img : study.images) data += format_label_csv(img.image);
  // Where the artifacts go does not affect any number in them.
  auto analysis = to_json(config);
  analysis.erase("out_dir");
  report.provenance = {{"tool", "persurv 0.1.0"},
                       {"config", analysis},
                       {"config_hash", fnv1a_hex(analysis.dump())},
                       {"data_hash", fnv1a_hex(data)},
                       {"seed", config.seed.value},
                       {"kernel", to_string(config.kernel)}};

  report.covariate_names = study.covariate_names;
  for (const auto& p : study.patients) report.patient_ids.push_back(p.patient_id);
  report.n_patients = study.patients.size();
  report.n_images = study.images.size();
  report.n_units = units.records.size();
  for (const auto& p : study.patients) report.n_events += p.event;
  report.grid0 = units.dim0.grid;
  report.grid1 = units.dim1.grid;

  try {
    report.clinical_fit = fit_cox(study.patients);
  } catch (const Error& e) {
    report.clinical_failure = describe(e);
  }
  try {
    report.functional = fit_full_head(units, config);
  } catch (const Error& e) {
    report.functional_failure = describe(e);
  }
  try {
    report.validity = validity_test(units, config);
  } catch (const Error& e) {
    report.validity_failure = describe(e);
  }
  report.functional_loocv = loocv_predict(study, units, config, threads);
  report.clinical_risk = clinical_loocv(study);
  report.functional_eval = evaluate_risk_scores(study, report.functional_loocv.patient_risk);
  report.clinical_eval = evaluate_risk_scores(study, report.clinical_risk);
  return report;
}

nlohmann::json to_json(const StudyReport& r) {
  nlohmann::json j;
  j["provenance"] = r.provenance;
  j["data"] = {{"n_patients", r.n_patients},
               {"n_images", r.n_images},
               {"n_units", r.n_units},
               {"n_events", r.n_events},
               {"clinical_covariates", r.covariate_names},
               {"aggregation", to_string(r.config.aggregation)}};
  j["grids"] = {{"dim0", grid_json(r.grid0)}, {"dim1", grid_json(r.grid1)}};

  nlohmann::json clinical;
  if (r.clinical_fit) {
    clinical = fit_report_json(*r.clinical_fit, r.covariate_names);
  } else {
    clinical = {{"failure", r.clinical_failure}};
  }
  nlohmann::json functional;
  if (r.functional) {
    const auto& h = *r.functional;
    functional = fit_report_json(h.fit, covariate_names_with_scores(r.covariate_names, h.q, h.r));
    functional["selection"] = to_string(r.config.selection);
    functional["q"] = h.q;
    functional["r"] = h.r;
    functional["aic"] = aic(h.fit, h.q, h.r);
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : h.candidates) {
      nlohmann::json row = {{"q", c.q}, {"r", c.r}, {"aic", optional_json(c.aic)}};
      if (!c.failure.empty()) row["failure"] = c.failure;
      cands.push_back(row);
    }
    functional["candidates"] = cands;
    functional["fpca"] = {{"dim0", fpca_summary(h.fpca0, 10)}, {"dim1", fpca_summary(h.fpca1, 10)}};
  } else {
    functional = {{"failure", r.functional_failure}};
  }
  j["models"] = {{"clinical", clinical}, {"functional", functional}};

  if (r.validity) {
    const auto& v = *r.validity;
    j["validity_test"] = {{"pv_threshold", r.config.validity_pv_threshold},
                          {"q", v.q},
                          {"r", v.r},
                          {"statistic", v.test.statistic},
                          {"df", v.test.df},
                          {"p_value", v.test.p_value},
                          {"fit", fit_report_json(v.fit, covariate_names_with_scores(r.covariate_names, v.q, v.r))}};
  } else {
    j["validity_test"] = {{"failure", r.validity_failure}};
  }

  nlohmann::json failed = nlohmann::json::array();
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> qr_counts;
  for (const auto& f : r.functional_loocv.folds) {
    if (f.risk) {
      ++qr_counts[{f.q, f.r}];
    } else {
      failed.push_back({{"unit", f.unit}, {"failure", f.failure}});
    }
  }
  nlohmann::json qr = nlohmann::json::array();
  for (const auto& [key, count] : qr_counts) qr.push_back({{"q", key.first}, {"r", key.second}, {"folds", count}});
  auto functional_eval = evaluation_json(r.functional_eval);
  functional_eval["failed_folds"] = failed;
  functional_eval["fold_selections"] = qr;
  j["loocv"] = {{"functional", functional_eval}, {"clinical", evaluation_json(r.clinical_eval)}};

  j["risk_scores"] = risk_score_rows(r);
  return j;
}

void write_report(const StudyReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "report.json", to_json(report).dump(2) + "\n");

  std::string csv = "patient_id,functional_risk,clinical_risk,functional_group,clinical_group\n";
  for (const auto& row : risk_score_rows(report)) {
    auto cell = [](const nlohmann::json& v) {
      if (v.is_null()) return std::string();
      if (v.is_string()) return v.get<std::string>();
      return format_double(v.get<double>());
    };
    csv += row["patient_id"].get<std::string>() + "," + cell(row["functional_risk"]) + "," +
           cell(row["clinical_risk"]) + "," + cell(row["functional_group"]) + "," + cell(row["clinical_group"]) + "\n";
  }
  write_text(out_dir / "risk_scores.csv", csv);

  const std::pair<const char*, const RiskEvaluation*> evals[] = {{"functional", &report.functional_eval},
                                                                 {"clinical", &report.clinical_eval}};
  for (const auto& [name, ev] : evals) {
    if (ev->high_risk.empty()) continue;
    write_text(out_dir / (std::string("km_") + name + "_high.csv"), format_km_csv(ev->km_high));
    write_text(out_dir / (std::string("km_") + name + "_low.csv"), format_km_csv(ev->km_low));
  }
  if (report.functional) {
    const auto& h = *report.functional;
    save_fpca(h.fpca0, out_dir / "fpca_dim0");
    save_fpca(h.fpca1, out_dir / "fpca_dim1");
    if (h.fit.converged) {
      write_surface(export_coefficient_surface(h.fit, h.fpca0, 0), report.config.sigma0, report.config.kernel,
                    out_dir / "coefficient_dim0.csv");
      write_surface(export_coefficient_surface(h.fit, h.fpca1, 1), report.config.sigma1, report.config.kernel,
                    out_dir / "coefficient_dim1.csv");
    }
  }
}

std::vector<GridCell> sigma_grid_search(const Study& study, const std::vector<ImageFeatures>& features,
                                        const StudyConfig& config, std::span<const double> sigma0_values,
                                        std::span<const double> sigma1_values, std::size_t threads) {
  if (sigma0_values.empty() || sigma1_values.empty()) throw Error(ErrorCode::kEmptyList, "sigma grid is empty");
  const StudyUnits layout = unit_layout(study, config);
  const auto records = layout.records;

  // Full-data FPCA per sigma value and dimension, truncated to what a head can use.
  auto models_for = [&](std::span<const double> sigmas, int dim) {
    std::vector<std::optional<FpcaModel>> models(sigmas.size());
    std::vector<std::string> failures(sigmas.size());
    parallel_for(sigmas.size(), threads, [&](std::size_t k) {
      try {
        const auto surf = unit_surfaces(study, features, config, dim, sigmas[k], 1);
        auto model = fit_fpca(surf.grid, surf.values);
        const auto keep = needed_components(model, dim == 0 ? config.q_max : config.r_max, config);
        models[k] = truncated(std::move(model), keep);
      } catch (const Error& e) {
        failures[k] = describe(e);
      }
    });
    return std::pair{std::move(models), std::move(failures)};
  };
  const auto [models0, fail0] = models_for(sigma0_values, 0);
  const auto [models1, fail1] = models_for(sigma1_values, 1);

  // Patient folds over units.
  std::vector<std::vector<std::size_t>> fold_units(study.patients.size());
  for (std::size_t u = 0; u < layout.patient.size(); ++u) fold_units[layout.patient[u]].push_back(u);

  const auto n1 = sigma1_values.size();
  std::vector<GridCell> cells(sigma0_values.size() * n1);
  parallel_for(cells.size(), threads, [&](std::size_t idx) {
    auto& cell = cells[idx];
    const auto i = idx / n1, k = idx % n1;
    cell.sigma0 = sigma0_values[i];
    cell.sigma1 = sigma1_values[k];
    if (!models0[i] || !models1[k]) {
      cell.failure = !models0[i] ? fail0[i] : fail1[k];
      return;
    }
    try {
      const HeadFit head = fit_head(records, *models0[i], *models1[k], config);
      cell.q = head.q;
      cell.r = head.r;
      const auto ds = head_dataset(records, head.fpca0, head.fpca1, head.q, head.r);
      double cvpl = 0.0;
      for (std::size_t p = 0; p < fold_units.size(); ++p) {
        std::vector<SurvivalRecord> train;
        train.reserve(ds.records.size());
        std::size_t next = 0;
        for (std::size_t u = 0; u < ds.records.size(); ++u) {
          if (next < fold_units[p].size() && fold_units[p][next] == u) {
            ++next;
            continue;
          }
          train.push_back(ds.records[u]);
        }
        try {
          const auto fit = fit_cox(train, ds.layout);
          cvpl += log_partial_likelihood(ds.records, fit.coefficients) -
                  log_partial_likelihood(train, fit.coefficients);
        } catch (const Error& e) {
          rethrow_with(e, "fold " + study.patients[p].patient_id);
        }
      }
      cell.cvpl = cvpl;
    } catch (const Error& e) {
      cell.failure = describe(e);
    }
  });
  std::stable_sort(cells.begin(), cells.end(), [](const GridCell& a, const GridCell& b) {
    if (a.cvpl.has_value() != b.cvpl.has_value()) return a.cvpl.has_value();
    return a.cvpl && *a.cvpl > *b.cvpl;
  });
  return cells;
}

std::vector<GridCell> sigma_grid_search(const StudyConfig& config, std::size_t threads) {
  const Study study = load_study(config);
  const auto features = extract_features(study, config, threads);
  const auto sigmas = config.sigma_grid.points();
  return sigma_grid_search(study, features, config, sigmas, sigmas, threads);
}

std::string format_grid_csv(const std::vector<GridCell>& cells) {
  std::string out = "rank,sigma0,sigma1,cvpl,q,r,failure\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    out += std::to_string(i + 1) + "," + format_double(c.sigma0) + "," + format_double(c.sigma1) + "," +
           optional_cell(c.cvpl) + "," + (c.cvpl ? std::to_string(c.q) : "") + "," +
           (c.cvpl ? std::to_string(c.r) : "") + "," + csv_safe(c.failure) + "\n";
  }
  return out;
}

std::vector<NullCohort> null_simulation(const Study& study, const StudyConfig& config, std::size_t n_cohorts,
                                        std::size_t threads) {
  if (n_cohorts == 0) throw Error(ErrorCode::kInvalidArgument, "at least one cohort is required");
  std::optional<double> clinical_p;
  const auto clinical = evaluate_risk_scores(study, clinical_loocv(study));
  if (clinical.log_rank) clinical_p = clinical.log_rank->p_value;

  std::vector<NullCohort> rows(n_cohorts);
  parallel_for(n_cohorts, threads, [&](std::size_t c) {
    auto& row = rows[c];
    row.cohort = c + 1;
    row.clinical_p = clinical_p;
    try {
      Study permuted = study;
      const RngSeed cohort_seed = derive_seed(config.seed, c + 1);
      for (std::size_t k = 0; k < permuted.images.size(); ++k) {
        permuted.images[k].image = permute_pixels(permuted.images[k].image, derive_seed(cohort_seed, k));
      }
      const auto features = extract_features(permuted, config, 1);
      const auto units = build_units(permuted, features, config, config.sigma0, config.sigma1, 1);
      const auto loocv = loocv_predict(permuted, units, config, 1);
      const auto ev = evaluate_risk_scores(permuted, loocv.patient_risk);
      if (ev.log_rank) row.functional_p = ev.log_rank->p_value;
      if (!ev.failure.empty()) row.failure = ev.failure;
      try {
        row.block_p = validity_test(units, config).test.p_value;
      } catch (const Error& e) {
        if (!row.failure.empty()) row.failure += "; ";
        row.failure += "block test " + describe(e);
      }
    } catch (const Error& e) {
      row.failure = describe(e);
    }
  });
  return rows;
}

std::vector<NullCohort> null_simulation(const StudyConfig& config, std::size_t n_cohorts, std::size_t threads) {
  return null_simulation(load_study(config), config, n_cohorts, threads);
}

std::string format_null_csv(const std::vector<NullCohort>& rows) {
  std::string out = "cohort,functional_p,clinical_p,block_p,failure\n";
  for (const auto& r : rows) {
    out += std::to_string(r.cohort) + "," + optional_cell(r.functional_p) + "," + optional_cell(r.clinical_p) + "," +
           optional_cell(r.block_p) + "," + csv_safe(r.failure) + "\n";
  }
  return out;
}

}  // namespace persurv
