#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "persurv/sedt.hpp"

namespace persurv {

// One cell of the cubical complex. `index` is the position in the
// (2w+1) x (2h+1) Khalimsky grid (row-major); a pixel (x, y) is the 2-cell at
// (2x+1, 2y+1). Faces point into CubicalFiltration::cells.
struct CubicalCell {
  std::uint8_t dim = 0;
  double value = 0.0;
  std::uint32_t index = 0;
  std::uint8_t face_count = 0;
  std::array<std::uint32_t, 4> faces{};
};

// Sublevel-set filtration of a distance field, T-construction: each finite
// pixel is a square and every edge and vertex takes the minimum over its
// incident finite pixels. Cells touching only +inf pixels are absent. Cells
// are stored in filtration order: (value, dim, index) ascending.
struct CubicalFiltration {
  std::size_t width = 0;   // pixels
  std::size_t height = 0;  // pixels
  std::vector<CubicalCell> cells;

  std::size_t grid_width() const noexcept { return 2 * width + 1; }
  std::size_t grid_height() const noexcept { return 2 * height + 1; }
};

struct PersistencePair {
  int dim = 0;
  double birth = 0.0;
  double death = 0.0;  // +inf for essential classes

  auto operator<=>(const PersistencePair&) const = default;
};

// Multiset of pairs, every pair strictly above the diagonal.
struct PersistenceDiagram {
  std::vector<PersistencePair> pairs;

  // Pairs of one homology dimension, order preserved.
  PersistenceDiagram dimension(int dim) const;
  // Copy in (dim, birth, death) lexicographic order.
  PersistenceDiagram sorted() const;
  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
};

CubicalFiltration build_filtration(const DistanceField& field);

// Dimension-0 and dimension-1 persistence of the closed sublevel filtration
// (a cell is present at threshold t when value <= t). Dimension 0 uses a
// union-find with the elder rule; dimension 1 reduces the square boundary
// columns over Z/2, with edge columns cleared (never reduced). Pairs with
// birth == death are dropped.
PersistenceDiagram compute_persistence(const CubicalFiltration& filtration);

inline PersistenceDiagram compute_persistence(const DistanceField& field) {
  return compute_persistence(build_filtration(field));
}

struct BettiNumbers {
  std::size_t b0 = 0;
  std::size_t b1 = 0;
  bool operator==(const BettiNumbers&) const = default;
};

// Betti numbers of the sublevel complex at `threshold`.
BettiNumbers betti_numbers(const CubicalFiltration& filtration, double threshold);
BettiNumbers betti_numbers(const PersistenceDiagram& diagram, double threshold);

// Drops pairs whose death is +inf.
PersistenceDiagram filter_finite(const PersistenceDiagram& diagram);

// Multiplies every birth and death by factor (> 0); +inf stays +inf.
PersistenceDiagram rescale_diagram(const PersistenceDiagram& diagram, double factor);

// Header `dim,birth,death`, rows in lexicographic order, "inf" for +inf.
std::string format_diagram_csv(const PersistenceDiagram& diagram);
PersistenceDiagram parse_diagram_csv(std::string_view text);
PersistenceDiagram load_diagram_csv(const std::filesystem::path& path);

}  // namespace persurv
