// persurv command-line tool. Every subcommand writes its artifacts into the
// output directory and prints a one-line JSON summary; failures print
// {"error": {"code": ..., "message": ...}} and exit nonzero.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "persurv/coxph.hpp"
#include "persurv/cubical.hpp"
#include "persurv/error.hpp"
#include "persurv/format.hpp"
#include "persurv/imgio.hpp"
#include "persurv/pipeline.hpp"
#include "persurv/psurf.hpp"
#include "persurv/sedt.hpp"
#include "persurv/survival.hpp"
#include "persurv/survstats.hpp"
#include "persurv/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace persurv;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = 1;
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kMissingFile, "cannot write " + path.string());
  f << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kMissingFile, "cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

StudyConfig study_config(const Globals& g) {
  if (g.config.empty()) throw Error(ErrorCode::kInvalidArgument, "this command needs --config");
  auto config = load_study_config(g.config);
  if (g.seed) config.seed = RngSeed{*g.seed};
  if (!g.out.empty()) config.out_dir = g.out;
  return config;
}

fs::path out_dir(const Globals& g) { return g.out.empty() ? fs::path("persurv_out") : fs::path(g.out); }

void emit(const json& summary) { std::cout << summary.dump() << "\n"; }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void run_sedt(const Globals& g, const std::string& image, bool two_class, bool denoise_first) {
  auto img = load_label_image(image);
  if (denoise_first) img = denoise(img);
  const auto field = two_class ? sedt2(img) : sedt3(img);
  const auto path = out_dir(g) / "sedt.csv";
  write_file(path, format_distance_csv(field));
  emit({{"command", "sedt"}, {"output", path.generic_string()}, {"width", field.width()}, {"height", field.height()}});
}

void run_ph(const Globals& g, const std::string& field_path) {
  const auto diagram = compute_persistence(load_distance_csv(field_path)).sorted();
  const auto path = out_dir(g) / "diagram.csv";
  write_file(path, format_diagram_csv(diagram));
  emit({{"command", "ph"},
        {"output", path.generic_string()},
        {"dim0", diagram.dimension(0).size()},
        {"dim1", diagram.dimension(1).size()}});
}

void run_surface(const Globals& g, const std::string& diagram_path, int dim, double sigma, const std::string& kernel,
                 std::optional<double> padding) {
  auto diagram = filter_finite(load_diagram_csv(diagram_path));
  if (dim >= 0) diagram = diagram.dimension(dim);
  const PersistenceDiagram one[] = {diagram};
  const auto grid = shared_grid(one, padding ? *padding : default_padding(sigma));
  const auto k = kernel_from_string(kernel);
  const auto surface = persistence_surface(diagram, grid, sigma, k);
  const auto path = out_dir(g) / "surface.csv";
  fs::create_directories(out_dir(g));
  write_surface(surface, sigma, k, path);
  emit({{"command", "surface"}, {"output", path.generic_string()}, {"grid_points", grid.size()}});
}

void run_fit(const Globals& g, const std::string& survival) {
  if (!survival.empty()) {
    const auto table = load_survival_csv(survival);
    const auto fit = fit_cox(table.records);
    const auto path = out_dir(g) / "fit.json";
    write_file(path, fit_report_json(fit, table.covariate_names).dump(2) + "\n");
    emit({{"command", "fit"}, {"output", path.generic_string()}, {"log_partial_likelihood", fit.log_partial_likelihood}});
    return;
  }
  const auto config = study_config(g);
  const auto study = load_study(config);
  const auto features = extract_features(study, config, g.threads);
  const auto units = build_units(study, features, config, config.sigma0, config.sigma1, g.threads);
  const auto head = fit_full_head(units, config);
  auto names = study.covariate_names;
  for (std::size_t j = 0; j < head.q; ++j) names.push_back("fpc0_" + std::to_string(j + 1));
  for (std::size_t j = 0; j < head.r; ++j) names.push_back("fpc1_" + std::to_string(j + 1));
  auto report = fit_report_json(head.fit, names);
  report["q"] = head.q;
  report["r"] = head.r;
  report["aic"] = aic(head.fit, head.q, head.r);
  const auto dir = out_dir(g);
  write_file(dir / "fit.json", report.dump(2) + "\n");
  save_fpca(head.fpca0, dir / "fpca_dim0");
  save_fpca(head.fpca1, dir / "fpca_dim1");
  emit({{"command", "fit"}, {"output", (dir / "fit.json").generic_string()}, {"q", head.q}, {"r", head.r}});
}

void run_loocv(const Globals& g) {
  const auto config = study_config(g);
  const auto study = load_study(config);
  const auto features = extract_features(study, config, g.threads);
  const auto units = build_units(study, features, config, config.sigma0, config.sigma1, g.threads);
  const auto result = loocv_predict(study, units, config, g.threads);
  std::string risk = "patient_id,risk\n";
  for (std::size_t i = 0; i < study.patients.size(); ++i) {
    const auto& r = result.patient_risk[i];
    risk += study.patients[i].patient_id + "," + (r ? format_double(*r) : std::string()) + "\n";
  }
  std::string folds = "unit,risk,q,r,failure\n";
  std::size_t failed = 0;
  for (const auto& f : result.folds) {
    failed += !f.risk;
    std::string failure = f.failure;
    for (char& c : failure) {
      if (c == ',' || c == '\n') c = ';';
    }
    folds += f.unit + "," + (f.risk ? format_double(*f.risk) : std::string()) + "," + std::to_string(f.q) + "," +
             std::to_string(f.r) + "," + failure + "\n";
  }
  const auto dir = out_dir(g);
  write_file(dir / "loocv_risk.csv", risk);
  write_file(dir / "loocv_folds.csv", folds);
  const auto eval = evaluate_risk_scores(study, result.patient_risk);
  json summary = {{"command", "loocv"}, {"output", (dir / "loocv_risk.csv").generic_string()}, {"failed_folds", failed}};
  summary["log_rank_p"] = eval.log_rank ? json(eval.log_rank->p_value) : json(nullptr);
  summary["hazard_ratio"] = optional_json(eval.hazard_ratio);
  emit(summary);
}

void run_grid_search(const Globals& g) {
  const auto config = study_config(g);
  const auto cells = sigma_grid_search(config, g.threads);
  const auto path = out_dir(g) / "grid_search.csv";
  write_file(path, format_grid_csv(cells));
  json summary = {{"command", "grid-search"}, {"output", path.generic_string()}, {"cells", cells.size()}};
  if (!cells.empty() && cells.front().cvpl) {
    summary["best"] = {{"sigma0", cells.front().sigma0}, {"sigma1", cells.front().sigma1}, {"cvpl", *cells.front().cvpl}};
  }
  emit(summary);
}

void run_null_sim(const Globals& g, std::size_t cohorts) {
  const auto config = study_config(g);
  const auto rows = null_simulation(config, cohorts, g.threads);
  const auto path = out_dir(g) / "null_simulation.csv";
  write_file(path, format_null_csv(rows));
  emit({{"command", "null-sim"}, {"output", path.generic_string()}, {"cohorts", rows.size()}});
}

// Scores CSV: patient_id,<score> with a header; the first numeric column is used.
std::map<std::string, double> load_scores(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  std::map<std::string, double> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::kParseError, path.string() + " row " + std::to_string(row) + ": expected id,score");
    }
    auto rest = line.substr(comma + 1);
    rest = rest.substr(0, rest.find(','));
    if (rest.empty()) continue;
    try {
      out[line.substr(0, comma)] = parse_double_cell(rest);
    } catch (const Error&) {
      throw Error(ErrorCode::kParseError, path.string() + " row " + std::to_string(row) + ": bad score '" + rest + "'");
    }
  }
  return out;
}

void run_km(const Globals& g, const std::string& survival, const std::string& scores_path) {
  const auto table = load_survival_csv(survival);
  const auto dir = out_dir(g);
  if (scores_path.empty()) {
    write_file(dir / "km.csv", format_km_csv(kaplan_meier(table.records)));
    emit({{"command", "km"}, {"output", (dir / "km.csv").generic_string()}});
    return;
  }
  const auto scores = load_scores(scores_path);
  std::vector<SurvivalRecord> scored;
  std::vector<double> values;
  std::vector<std::string> ids;
  for (const auto& r : table.records) {
    const auto it = scores.find(r.patient_id);
    if (it == scores.end()) continue;
    scored.push_back(r);
    values.push_back(it->second);
    ids.push_back(r.patient_id);
  }
  if (scored.size() < 2) throw Error(ErrorCode::kEmptyData, "fewer than two patients have a score");
  const auto high = assign_risk_groups(values, ids);
  std::vector<SurvivalRecord> a, b;
  for (std::size_t i = 0; i < scored.size(); ++i) (high[i] ? a : b).push_back(scored[i]);
  write_file(dir / "km_high.csv", format_km_csv(kaplan_meier(a)));
  write_file(dir / "km_low.csv", format_km_csv(kaplan_meier(b)));
  json summary = {{"command", "km"}, {"high", a.size()}, {"low", b.size()}};
  const auto lr = log_rank(a, b);
  write_file(dir / "log_rank.json", log_rank_json(lr).dump(2) + "\n");
  summary["log_rank_p"] = lr.p_value;
  try {
    summary["hazard_ratio"] = hazard_ratio(scored, high);
  } catch (const Error& e) {
    summary["hazard_ratio"] = nullptr;
    summary["hazard_ratio_failure"] = std::string(to_string(e.code())) + ": " + e.what();
  }
  emit(summary);
}

void run_report(const Globals& g) {
  const auto config = study_config(g);
  const auto report = run_study(config, g.threads);
  write_report(report, config.out_dir);
  json summary = {{"command", "report"}, {"output", config.out_dir.generic_string()}};
  if (report.functional_eval.log_rank) summary["functional_log_rank_p"] = report.functional_eval.log_rank->p_value;
  if (report.clinical_eval.log_rank) summary["clinical_log_rank_p"] = report.clinical_eval.log_rank->p_value;
  emit(summary);
}

void run_synth(const Globals& g, const std::string& spec_path) {
  auto spec = cohort_spec_from_json(json::parse(read_file(spec_path)));
  if (g.seed) spec.seed = RngSeed{*g.seed};
  const auto cohort = synth_cohort(spec);
  write_cohort(cohort, out_dir(g));
  emit({{"command", "synth"}, {"output", out_dir(g).generic_string()}, {"patients", cohort.size()}});
}

int fail(const std::string& code, const std::string& message) {
  std::cout << json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"persurv: topological shape features and survival models for label images"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--config", g.config, "study configuration JSON");
  app.add_option("--seed", g.seed, "overrides the configured seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads (0 = all cores)")->capture_default_str();

  std::string input, survival, scores;
  bool two_class = false, denoise_first = false;
  int dim = -1;
  double sigma = 1.0;
  std::string kernel = "standard-gaussian";
  std::optional<double> padding;
  std::size_t cohorts = 50;

  auto* sedt = app.add_subcommand("sedt", "signed distance transform of a label image");
  sedt->add_option("image", input, "label image (.csv or palette .png)")->required();
  sedt->add_flag("--two-class", two_class, "treat empty pixels as normal tissue");
  sedt->add_flag("--denoise", denoise_first, "denoise the three-class image first");

  auto* ph = app.add_subcommand("ph", "persistence diagram of a distance field CSV");
  ph->add_option("field", input, "distance field CSV")->required();

  auto* surface = app.add_subcommand("surface", "persistence surface of a diagram CSV");
  surface->add_option("diagram", input, "diagram CSV")->required();
  surface->add_option("--dim", dim, "homology dimension to keep (default: all finite pairs)");
  surface->add_option("--sigma", sigma, "kernel bandwidth")->capture_default_str();
  surface->add_option("--kernel", kernel, "standard-gaussian or unscaled-exponent")->capture_default_str();
  surface->add_option("--padding", padding, "grid padding (default ceil(3 sigma))");

  auto* fit = app.add_subcommand("fit", "Cox fit of a survival CSV, or the functional model of --config");
  fit->add_option("survival", survival, "survival CSV (clinical-only fit)");

  auto* loocv = app.add_subcommand("loocv", "leave-one-out risk prediction");
  auto* grid = app.add_subcommand("grid-search", "rank smoothing parameters by CVPL");
  auto* null_sim = app.add_subcommand("null-sim", "pixel-permutation null cohorts");
  null_sim->add_option("--cohorts", cohorts, "number of cohorts")->capture_default_str();

  auto* km = app.add_subcommand("km", "Kaplan-Meier curves, optionally split at the median score");
  km->add_option("survival", survival, "survival CSV")->required();
  km->add_option("--scores", scores, "CSV of patient_id,score");

  auto* report = app.add_subcommand("report", "full study run with all artifacts");
  auto* synth = app.add_subcommand("synth", "write a synthetic cohort");
  synth->add_option("spec", input, "cohort spec JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what());
  }

  try {
    if (sedt->parsed()) run_sedt(g, input, two_class, denoise_first);
    if (ph->parsed()) run_ph(g, input);
    if (surface->parsed()) run_surface(g, input, dim, sigma, kernel, padding);
    if (fit->parsed()) run_fit(g, survival);
    if (loocv->parsed()) run_loocv(g);
    if (grid->parsed()) run_grid_search(g);
    if (null_sim->parsed()) run_null_sim(g, cohorts);
    if (km->parsed()) run_km(g, survival, scores);
    if (report->parsed()) run_report(g);
    if (synth->parsed()) run_synth(g, input);
  } catch (const Error& e) {
    return fail(to_string(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail("ParseError", e.what());
  } catch (const std::exception& e) {
    return fail("InternalError", e.what());
  }
  return 0;
}
