#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "persurv/cubical.hpp"

namespace persurv {

// Evaluation lattice for persistence surfaces. The integer ranges
// [x_lo, x_hi] x [y_lo, y_hi] are cut into unit cells; points are the cell
// centres (x_lo + i + 0.5, y_lo + j + 0.5) with y >= x, stored row by row
// (j outer, i inner).
class SurfaceGrid {
 public:
  struct Point {
    double x;
    double y;
    std::size_t column;  // i
    std::size_t row;     // j
  };

  SurfaceGrid() = default;
  SurfaceGrid(long x_lo, long x_hi, long y_lo, long y_hi);

  long x_lo() const noexcept { return x_lo_; }
  long x_hi() const noexcept { return x_hi_; }
  long y_lo() const noexcept { return y_lo_; }
  long y_hi() const noexcept { return y_hi_; }
  std::size_t columns() const noexcept { return static_cast<std::size_t>(x_hi_ - x_lo_); }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(y_hi_ - y_lo_); }

  std::span<const Point> points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }

  bool operator==(const SurfaceGrid& o) const {
    return x_lo_ == o.x_lo_ && x_hi_ == o.x_hi_ && y_lo_ == o.y_lo_ && y_hi_ == o.y_hi_;
  }

 private:
  long x_lo_ = 0, x_hi_ = 0, y_lo_ = 0, y_hi_ = 0;
  std::vector<Point> points_;
};

enum class Kernel {
  kStandardGaussian,  // exp(-r^2 / (2 sigma^2)) / (2 pi sigma^2)
  kUnscaledExponent,  // exp(-r^2) / sigma^2
};

const char* to_string(Kernel k) noexcept;
Kernel kernel_from_string(const std::string& name);

struct PersistenceSurface {
  SurfaceGrid grid;
  std::vector<double> values;  // one per grid point, >= 0
};

// max(|b|, |d|, d - b)
double max_distance_weight(double birth, double death);

// Sum over pairs of kernel(point - (b, d)) * max_distance_weight(b, d).
// The diagram must be finite (apply filter_finite first).
PersistenceSurface persistence_surface(const PersistenceDiagram& diagram, const SurfaceGrid& grid,
                                       double sigma, Kernel kernel = Kernel::kStandardGaussian);

// The same sum evaluated at one arbitrary point.
double evaluate_surface_at(const PersistenceDiagram& diagram, double x, double y, double sigma,
                           Kernel kernel = Kernel::kStandardGaussian);

PersistenceSurface mean_surface(std::span<const PersistenceSurface> surfaces);

// Grid covering every finite pair of the corpus: births span x, deaths span
// y, each widened by padding and snapped outward to integers. A degenerate
// axis is widened to one unit cell.
SurfaceGrid shared_grid(std::span<const PersistenceDiagram> diagrams, double padding);

// Padding rule used by the pipeline: ceil(3 sigma).
double default_padding(double sigma);

// Matrix CSV: header row of x-coordinates (leading empty cell), one line per
// y-coordinate, cells below the diagonal left empty.
std::string format_surface_csv(const PersistenceSurface& surface);
nlohmann::json surface_metadata(const PersistenceSurface& surface, double sigma, Kernel kernel);
void write_surface(const PersistenceSurface& surface, double sigma, Kernel kernel,
                   const std::filesystem::path& csv_path);

}  // namespace persurv
