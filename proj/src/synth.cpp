#include "persurv/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "persurv/error.hpp"

namespace persurv {

const char* to_string(ShapeClass c) noexcept {
  switch (c) {
    case ShapeClass::kScattered: return "scattered";
    case ShapeClass::kBlob: return "blob";
    case ShapeClass::kBrokenRing: return "broken_ring";
  }
  return "unknown";
}

ShapeClass shape_class_from_string(const std::string& name) {
  if (name == "scattered") return ShapeClass::kScattered;
  if (name == "blob") return ShapeClass::kBlob;
  if (name == "broken_ring") return ShapeClass::kBrokenRing;
  throw Error(ErrorCode::kInvalidArgument, "unknown shape class '" + name + "'");
}

namespace {

std::map<ShapeClass, double> class_map(const nlohmann::json& j, const char* key) {
  std::map<ShapeClass, double> out;
  if (!j.contains(key)) return out;
  for (const auto& [name, value] : j.at(key).items()) {
    out[shape_class_from_string(name)] = value.get<double>();
  }
  return out;
}

void validate(const CohortSpec& spec) {
  double total = 0.0;
  for (const auto& [cls, w] : spec.class_mix) {
    if (w < 0.0) throw Error(ErrorCode::kInvalidMixture, "negative mixture weight");
    total += w;
    if (w > 0.0 && !spec.hazard_multipliers.contains(cls)) {
      throw Error(ErrorCode::kInvalidArgument,
                  std::string("no hazard multiplier for class ") + to_string(cls));
    }
  }
  if (spec.n_patients > 0 && std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidMixture, "class_mix weights must sum to 1");
  }
  for (const auto& [cls, m] : spec.hazard_multipliers) {
    if (!(m > 0.0)) throw Error(ErrorCode::kInvalidArgument, "hazard multipliers must be positive");
  }
  if (spec.censor_rate < 0.0 || spec.censor_rate >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "censor_rate must lie in [0, 1)");
  }
  if (spec.image_size < 16) throw Error(ErrorCode::kInvalidArgument, "image_size must be >= 16");
  if (spec.images_per_patient == 0) {
    throw Error(ErrorCode::kInvalidArgument, "images_per_patient must be positive");
  }
  if (!(spec.tumor_fraction_min > 0.0) || spec.tumor_fraction_max < spec.tumor_fraction_min ||
      spec.tumor_fraction_max >= 0.5) {
    throw Error(ErrorCode::kInvalidArgument, "tumor fraction range must satisfy 0 < min <= max < 0.5");
  }
}

// Ordered, de-duplicated list of candidate tumor pixels.
class PixelList {
 public:
  PixelList(const LabelImage& base) : base_(base), taken_(base.size(), false) {}

  void add(long x, long y) {
    if (x < 0 || y < 0 || x >= static_cast<long>(base_.width()) ||
        y >= static_cast<long>(base_.height())) {
      return;
    }
    const std::size_t idx = static_cast<std::size_t>(y) * base_.width() + static_cast<std::size_t>(x);
    if (taken_[idx] || base_.labels()[idx] != Label::kNormal) return;
    taken_[idx] = true;
    order_.push_back(idx);
  }

  void add_disk(double cx, double cy, double r) {
    const long r_ceil = static_cast<long>(std::ceil(r));
    const long ix = std::lround(cx), iy = std::lround(cy);
    for (long dy = -r_ceil; dy <= r_ceil; ++dy) {
      for (long dx = -r_ceil; dx <= r_ceil; ++dx) {
        if (static_cast<double>(dx * dx + dy * dy) <= r * r) add(ix + dx, iy + dy);
      }
    }
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const LabelImage& base_;
  std::vector<bool> taken_;
  std::vector<std::size_t> order_;
};

void add_broken_ring(PixelList& list, double cx, double cy, double radius, double thickness,
                     int gaps, SplitMix64& rng) {
  // Gap centres and half-widths in radians.
  std::vector<std::pair<double, double>> gap_arcs;
  for (int g = 0; g < gaps; ++g) {
    gap_arcs.emplace_back(rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.25, 0.45));
  }
  const double outer = radius + thickness / 2.0;
  const double inner = radius - thickness / 2.0;
  // Angular sweep so that trimming the list removes the end of the arc.
  const int steps = std::max(64, static_cast<int>(2.0 * std::numbers::pi * outer * 3.0));
  const long r_ceil = static_cast<long>(std::ceil(outer));
  std::vector<std::pair<double, std::pair<long, long>>> pixels;
  for (long dy = -r_ceil; dy <= r_ceil; ++dy) {
    for (long dx = -r_ceil; dx <= r_ceil; ++dx) {
      const double d = std::hypot(static_cast<double>(dx), static_cast<double>(dy));
      if (d < inner || d > outer) continue;
      double angle = std::atan2(static_cast<double>(dy), static_cast<double>(dx));
      if (angle < 0) angle += 2.0 * std::numbers::pi;
      bool in_gap = false;
      for (const auto& [centre, half] : gap_arcs) {
        double diff = std::abs(angle - centre);
        diff = std::min(diff, 2.0 * std::numbers::pi - diff);
        if (diff < half) in_gap = true;
      }
      if (!in_gap) pixels.push_back({std::floor(angle / (2.0 * std::numbers::pi) * steps), {dx, dy}});
    }
  }
  std::sort(pixels.begin(), pixels.end());
  const long ix = std::lround(cx), iy = std::lround(cy);
  for (const auto& p : pixels) list.add(ix + p.second.first, iy + p.second.second);
}

LabelImage with_empty_region(std::size_t size, bool three_class, SplitMix64& rng) {
  LabelImage img(size, size, Label::kNormal);
  if (!three_class) return img;
  // Empty band along one side, like tissue that does not fill the slide.
  const std::size_t side = rng.below(4);
  const std::size_t band = 2 + rng.below(size / 6);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t depth = side == 0 ? x : side == 1 ? y : side == 2 ? size - 1 - x : size - 1 - y;
      if (depth < band) img.at(x, y) = Label::kEmpty;
    }
  }
  return img;
}

}  // namespace

LabelImage synth_image(ShapeClass shape, std::size_t size, bool three_class, double tumor_fraction,
                       SplitMix64& rng) {
  LabelImage img = with_empty_region(size, three_class, rng);
  const std::size_t available = img.histogram()[static_cast<std::size_t>(Label::kNormal)];
  const std::size_t target =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(tumor_fraction * available)));
  const double s = static_cast<double>(size);
  PixelList list(img);
  int guard = 0;
  while (list.size() < target && guard++ < 100000) {
    switch (shape) {
      case ShapeClass::kScattered:
        list.add_disk(rng.uniform(1.0, s - 2.0), rng.uniform(1.0, s - 2.0), rng.uniform(1.0, 1.9));
        break;
      case ShapeClass::kBlob: {
        const double remaining = static_cast<double>(target - list.size());
        const double r = std::clamp(std::sqrt(remaining / std::numbers::pi) * rng.uniform(0.6, 0.9),
                                    2.0, s / 4.0);
        list.add_disk(rng.uniform(r, s - r), rng.uniform(r, s - r), r);
        break;
      }
      case ShapeClass::kBrokenRing: {
        const double r = rng.uniform(s / 10.0, s / 6.0);
        const double t = rng.uniform(1.6, 2.6);
        const int gaps = 1 + static_cast<int>(rng.below(2));
        add_broken_ring(list, rng.uniform(r, s - r), rng.uniform(r, s - r), r, t, gaps, rng);
        break;
      }
    }
  }
  const auto& order = list.order();
  for (std::size_t i = 0; i < std::min(target, order.size()); ++i) {
    img.labels()[order[i]] = Label::kTumor;
  }
  return img;
}

CohortSpec cohort_spec_from_json(const nlohmann::json& j) {
  CohortSpec spec;
  spec.n_patients = j.at("n_patients").get<std::size_t>();
  spec.images_per_patient = j.value("images_per_patient", std::size_t{1});
  spec.image_size = j.value("image_size", std::size_t{64});
  spec.class_mix = class_map(j, "class_mix");
  spec.hazard_multipliers = class_map(j, "hazard_multipliers");
  spec.censor_rate = j.value("censor_rate", 0.0);
  spec.seed = RngSeed{j.value("seed", std::uint64_t{0})};
  spec.baseline_hazard = j.value("baseline_hazard", spec.baseline_hazard);
  spec.clinical_log_hr = j.value("clinical_log_hr", spec.clinical_log_hr);
  spec.tumor_fraction_min = j.value("tumor_fraction_min", spec.tumor_fraction_min);
  spec.tumor_fraction_max = j.value("tumor_fraction_max", spec.tumor_fraction_max);
  spec.three_class = j.value("three_class", spec.three_class);
  validate(spec);
  return spec;
}

nlohmann::json to_json(const CohortSpec& spec) {
  nlohmann::json mix = nlohmann::json::object(), hz = nlohmann::json::object();
  for (const auto& [c, w] : spec.class_mix) mix[to_string(c)] = w;
  for (const auto& [c, m] : spec.hazard_multipliers) hz[to_string(c)] = m;
  return {{"n_patients", spec.n_patients},
          {"images_per_patient", spec.images_per_patient},
          {"image_size", spec.image_size},
          {"class_mix", mix},
          {"hazard_multipliers", hz},
          {"censor_rate", spec.censor_rate},
          {"seed", spec.seed.value},
          {"baseline_hazard", spec.baseline_hazard},
          {"clinical_log_hr", spec.clinical_log_hr},
          {"tumor_fraction_min", spec.tumor_fraction_min},
          {"tumor_fraction_max", spec.tumor_fraction_max},
          {"three_class", spec.three_class}};
}

std::vector<SyntheticPatient> synth_cohort(const CohortSpec& spec, RngSeed seed) {
  validate(spec);
  std::vector<SyntheticPatient> cohort;
  if (spec.n_patients == 0) return cohort;

  SplitMix64 rng(derive_seed(seed, 1));
  std::vector<double> hazards;
  cohort.resize(spec.n_patients);
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    auto& p = cohort[i];
    char id[32];
    std::snprintf(id, sizeof(id), "P%04zu", i + 1);
    p.id = id;
    double u = rng.uniform();
    p.shape = spec.class_mix.rbegin()->first;
    for (const auto& [cls, w] : spec.class_mix) {
      if (u < w) {
        p.shape = cls;
        break;
      }
      u -= w;
    }
    const double age = rng.normal();
    hazards.push_back(spec.baseline_hazard * spec.hazard_multipliers.at(p.shape) *
                      std::exp(spec.clinical_log_hr * age));
    p.record.patient_id = p.id;
    p.record.covariates = {age};
  }

  // Censoring rate c solves mean_i c / (c + h_i) = censor_rate, which is the
  // expected censored fraction under independent exponential censoring.
  double censor_hazard = 0.0;
  if (spec.censor_rate > 0.0) {
    auto frac = [&](double c) {
      double s = 0.0;
      for (double h : hazards) s += c / (c + h);
      return s / static_cast<double>(hazards.size());
    };
    double lo = 0.0, hi = 1.0;
    while (frac(hi) < spec.censor_rate) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (frac(mid) < spec.censor_rate ? lo : hi) = mid;
    }
    censor_hazard = 0.5 * (lo + hi);
  }

  SplitMix64 time_rng(derive_seed(seed, 2));
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    auto& p = cohort[i];
    const double t = time_rng.exponential(hazards[i]);
    const double c = censor_hazard > 0.0 ? time_rng.exponential(censor_hazard) : INFINITY;
    p.record.time = std::min(t, c);
    p.record.event = t <= c;
  }

  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    auto& p = cohort[i];
    SplitMix64 img_rng(derive_seed(seed, 1000 + i));
    for (std::size_t k = 0; k < spec.images_per_patient; ++k) {
      const double f = img_rng.uniform(spec.tumor_fraction_min, spec.tumor_fraction_max);
      p.images.push_back(synth_image(p.shape, spec.image_size, spec.three_class, f, img_rng));
    }
  }
  return cohort;
}

void write_cohort(const std::vector<SyntheticPatient>& cohort, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv");
  manifest << "patient_id,image_path\n";
  SurvivalTable table;
  table.covariate_names = {"age"};
  for (const auto& p : cohort) {
    for (std::size_t k = 0; k < p.images.size(); ++k) {
      const std::string rel = "images/" + p.id + "_" + std::to_string(k) + ".csv";
      save_label_image(p.images[k], dir / rel, ImageFormat::kCsv);
      manifest << p.id << "," << rel << "\n";
    }
    table.records.push_back(p.record);
  }
  std::ofstream surv(dir / "survival.csv");
  surv << format_survival_csv(table);
  std::ofstream shapes(dir / "shape_classes.csv");
  shapes << "patient_id,shape_class\n";
  for (const auto& p : cohort) shapes << p.id << "," << to_string(p.shape) << "\n";
}

}  // namespace persurv
