#include "persurv/psurf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "persurv/error.hpp"
#include "persurv/format.hpp"

namespace persurv {

SurfaceGrid::SurfaceGrid(long x_lo, long x_hi, long y_lo, long y_hi)
    : x_lo_(x_lo), x_hi_(x_hi), y_lo_(y_lo), y_hi_(y_hi) {
  if (x_hi <= x_lo || y_hi <= y_lo) {
    throw Error(ErrorCode::kInvalidArgument, "surface grid ranges must be non-empty");
  }
  for (std::size_t j = 0; j < rows(); ++j) {
    const double y = static_cast<double>(y_lo_) + static_cast<double>(j) + 0.5;
    for (std::size_t i = 0; i < columns(); ++i) {
      const double x = static_cast<double>(x_lo_) + static_cast<double>(i) + 0.5;
      if (y >= x) points_.push_back({x, y, i, j});
    }
  }
}

const char* to_string(Kernel k) noexcept {
  return k == Kernel::kUnscaledExponent ? "unscaled-exponent" : "standard-gaussian";
}

Kernel kernel_from_string(const std::string& name) {
  if (name == "standard-gaussian") return Kernel::kStandardGaussian;
  if (name == "unscaled-exponent") return Kernel::kUnscaledExponent;
  throw Error(ErrorCode::kInvalidArgument, "unknown kernel '" + name + "'");
}

double max_distance_weight(double birth, double death) {
  return std::max({std::abs(birth), std::abs(death), death - birth});
}

namespace {

// kernel(dx, dy) = scale * exp(-(dx^2 + dy^2) * rate)
struct KernelShape {
  double rate;
  double scale;
};

KernelShape kernel_shape(double sigma, Kernel kernel) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(ErrorCode::kNonPositiveSigma, "sigma must be positive");
  }
  if (kernel == Kernel::kStandardGaussian) {
    return {1.0 / (2.0 * sigma * sigma), 1.0 / (2.0 * std::numbers::pi * sigma * sigma)};
  }
  return {1.0, 1.0 / (sigma * sigma)};
}

void require_finite(const PersistencePair& p) {
  if (!std::isfinite(p.death) || !std::isfinite(p.birth)) {
    throw Error(ErrorCode::kInvalidArgument,
                "persistence surface needs a finite diagram (apply filter_finite)");
  }
}

}  // namespace

double evaluate_surface_at(const PersistenceDiagram& diagram, double x, double y, double sigma,
                           Kernel kernel) {
  const auto shape = kernel_shape(sigma, kernel);
  double sum = 0.0;
  for (const auto& p : diagram.pairs) {
    require_finite(p);
    const double dx = x - p.birth, dy = y - p.death;
    sum += max_distance_weight(p.birth, p.death) * shape.scale * std::exp(-(dx * dx + dy * dy) * shape.rate);
  }
  return sum;
}

PersistenceSurface persistence_surface(const PersistenceDiagram& diagram, const SurfaceGrid& grid,
                                       double sigma, Kernel kernel) {
  const auto shape = kernel_shape(sigma, kernel);
  const double rate = shape.rate;
  // exp underflows to exactly 0 beyond this exponent, so skipping is exact.
  constexpr double kUnderflow = 746.0;
  const double reach = std::sqrt(kUnderflow / rate);
  PersistenceSurface s{grid, std::vector<double>(grid.size(), 0.0)};
  for (const auto& p : diagram.pairs) {
    require_finite(p);
    const double weight = max_distance_weight(p.birth, p.death) * shape.scale;
    const auto pts = grid.points();
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const double dx = pts[k].x - p.birth;
      const double dy = pts[k].y - p.death;
      if (std::abs(dx) > reach || std::abs(dy) > reach) continue;
      s.values[k] += weight * std::exp(-(dx * dx + dy * dy) * rate);
    }
  }
  return s;
}

PersistenceSurface mean_surface(std::span<const PersistenceSurface> surfaces) {
  if (surfaces.empty()) throw Error(ErrorCode::kEmptyList, "mean of zero surfaces");
  PersistenceSurface out{surfaces.front().grid,
                         std::vector<double>(surfaces.front().values.size(), 0.0)};
  for (const auto& s : surfaces) {
    if (!(s.grid == out.grid)) throw Error(ErrorCode::kGridMismatch, "surfaces use different grids");
    for (std::size_t k = 0; k < s.values.size(); ++k) out.values[k] += s.values[k];
  }
  const double n = static_cast<double>(surfaces.size());
  for (auto& v : out.values) v /= n;
  return out;
}

SurfaceGrid shared_grid(std::span<const PersistenceDiagram> diagrams, double padding) {
  if (!(padding >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "padding must be non-negative");
  double b_min = INFINITY, b_max = -INFINITY, d_min = INFINITY, d_max = -INFINITY;
  for (const auto& d : diagrams) {
    for (const auto& p : d.pairs) {
      if (!std::isfinite(p.death)) continue;
      b_min = std::min(b_min, p.birth);
      b_max = std::max(b_max, p.birth);
      d_min = std::min(d_min, p.death);
      d_max = std::max(d_max, p.death);
    }
  }
  if (!std::isfinite(b_min)) throw Error(ErrorCode::kNoFinitePairs, "corpus has no finite pair");
  long x_lo = static_cast<long>(std::floor(b_min - padding));
  long x_hi = static_cast<long>(std::ceil(b_max + padding));
  long y_lo = static_cast<long>(std::floor(d_min - padding));
  long y_hi = static_cast<long>(std::ceil(d_max + padding));
  if (x_hi == x_lo) ++x_hi;
  if (y_hi == y_lo) ++y_hi;
  return SurfaceGrid(x_lo, x_hi, y_lo, y_hi);
}

double default_padding(double sigma) { return std::ceil(3.0 * sigma); }

std::string format_surface_csv(const PersistenceSurface& surface) {
  const auto& g = surface.grid;
  std::vector<std::string> cells(g.columns() * g.rows());
  const auto pts = g.points();
  for (std::size_t k = 0; k < pts.size(); ++k) {
    cells[pts[k].row * g.columns() + pts[k].column] = format_double(surface.values[k]);
  }
  std::string out;
  for (std::size_t i = 0; i < g.columns(); ++i) {
    out += "," + format_double(static_cast<double>(g.x_lo()) + static_cast<double>(i) + 0.5);
  }
  out += "\n";
  for (std::size_t j = 0; j < g.rows(); ++j) {
    out += format_double(static_cast<double>(g.y_lo()) + static_cast<double>(j) + 0.5);
    for (std::size_t i = 0; i < g.columns(); ++i) out += "," + cells[j * g.columns() + i];
    out += "\n";
  }
  return out;
}

nlohmann::json surface_metadata(const PersistenceSurface& surface, double sigma, Kernel kernel) {
  const auto& g = surface.grid;
  return {{"sigma", sigma},
          {"kernel", to_string(kernel)},
          {"x_range", {g.x_lo(), g.x_hi()}},
          {"y_range", {g.y_lo(), g.y_hi()}},
          {"points", g.size()}};
}

void write_surface(const PersistenceSurface& surface, double sigma, Kernel kernel,
                   const std::filesystem::path& csv_path) {
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw Error(ErrorCode::kMissingFile, "cannot write " + csv_path.string());
  csv << format_surface_csv(surface);
  auto meta_path = csv_path;
  meta_path.replace_extension(".json");
  std::ofstream meta(meta_path, std::ios::binary);
  meta << surface_metadata(surface, sigma, kernel).dump(2) << "\n";
}

}  // namespace persurv
