#include "persurv/cubical.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "persurv/error.hpp"
#include "persurv/format.hpp"

namespace persurv {

PersistenceDiagram PersistenceDiagram::dimension(int dim) const {
  PersistenceDiagram out;
  for (const auto& p : pairs) {
    if (p.dim == dim) out.pairs.push_back(p);
  }
  return out;
}

PersistenceDiagram PersistenceDiagram::sorted() const {
  PersistenceDiagram out = *this;
  std::sort(out.pairs.begin(), out.pairs.end());
  return out;
}

CubicalFiltration build_filtration(const DistanceField& field) {
  const std::size_t w = field.width(), h = field.height();
  const std::size_t gw = 2 * w + 1, gh = 2 * h + 1;
  constexpr double kAbsent = std::numeric_limits<double>::infinity();

  // Minimum over incident finite pixels for every Khalimsky position.
  std::vector<double> value(gw * gh, kAbsent);
  bool any_finite = false;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = field.at(x, y);
      if (!std::isfinite(v)) continue;
      any_finite = true;
      for (std::size_t j = 2 * y; j <= 2 * y + 2; ++j) {
        for (std::size_t i = 2 * x; i <= 2 * x + 2; ++i) {
          double& slot = value[j * gw + i];
          slot = std::min(slot, v);
        }
      }
    }
  }
  if (!any_finite) {
    throw Error(ErrorCode::kAllInfiniteField, "distance field has no finite value");
  }

  CubicalFiltration f;
  f.width = w;
  f.height = h;
  for (std::size_t j = 0; j < gh; ++j) {
    for (std::size_t i = 0; i < gw; ++i) {
      const double v = value[j * gw + i];
      if (v == kAbsent) continue;
      CubicalCell c;
      c.dim = static_cast<std::uint8_t>((i & 1) + (j & 1));
      c.value = v;
      c.index = static_cast<std::uint32_t>(j * gw + i);
      f.cells.push_back(c);
    }
  }
  std::sort(f.cells.begin(), f.cells.end(), [](const CubicalCell& a, const CubicalCell& b) {
    if (a.value != b.value) return a.value < b.value;
    if (a.dim != b.dim) return a.dim < b.dim;
    return a.index < b.index;
  });

  std::vector<std::uint32_t> position(gw * gh, std::numeric_limits<std::uint32_t>::max());
  for (std::size_t k = 0; k < f.cells.size(); ++k) {
    position[f.cells[k].index] = static_cast<std::uint32_t>(k);
  }
  for (auto& c : f.cells) {
    const std::size_t i = c.index % gw, j = c.index / gw;
    if (i & 1) {
      c.faces[c.face_count++] = position[j * gw + i - 1];
      c.faces[c.face_count++] = position[j * gw + i + 1];
    }
    if (j & 1) {
      c.faces[c.face_count++] = position[(j - 1) * gw + i];
      c.faces[c.face_count++] = position[(j + 1) * gw + i];
    }
  }
  return f;
}

namespace {

class ComponentForest {
 public:
  explicit ComponentForest(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::uint32_t{0});
  }

  std::uint32_t find(std::uint32_t x) {
    std::uint32_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      const std::uint32_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  // Roots are always the oldest vertex of their component: vertex positions
  // follow filtration order, so the smaller position is the elder.
  void attach(std::uint32_t younger_root, std::uint32_t elder_root) {
    parent_[younger_root] = elder_root;
  }

 private:
  std::vector<std::uint32_t> parent_;
};

// Symmetric difference of two ascending index lists.
void add_column(std::vector<std::uint32_t>& target, const std::vector<std::uint32_t>& source,
                std::vector<std::uint32_t>& scratch) {
  scratch.clear();
  std::set_symmetric_difference(target.begin(), target.end(), source.begin(), source.end(),
                                std::back_inserter(scratch));
  target.swap(scratch);
}

}  // namespace

PersistenceDiagram compute_persistence(const CubicalFiltration& filtration) {
  const auto& cells = filtration.cells;
  const auto n = static_cast<std::uint32_t>(cells.size());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  PersistenceDiagram diagram;

  // Dimension 0.
  ComponentForest forest(n);
  std::vector<bool> creates_cycle(n, false);
  for (std::uint32_t k = 0; k < n; ++k) {
    const auto& c = cells[k];
    if (c.dim != 1) continue;
    const std::uint32_t a = forest.find(c.faces[0]);
    const std::uint32_t b = forest.find(c.faces[1]);
    if (a == b) {
      creates_cycle[k] = true;
      continue;
    }
    const std::uint32_t elder = std::min(a, b), younger = std::max(a, b);
    if (cells[younger].value < c.value) diagram.pairs.push_back({0, cells[younger].value, c.value});
    forest.attach(younger, elder);
  }
  for (std::uint32_t k = 0; k < n; ++k) {
    if (cells[k].dim == 0 && forest.find(k) == k) diagram.pairs.push_back({0, cells[k].value, kInf});
  }

  // Dimension 1: square columns reduced left to right; pivot = youngest edge.
  std::vector<std::uint32_t> pivot_owner(n, std::numeric_limits<std::uint32_t>::max());
  std::vector<std::vector<std::uint32_t>> reduced(n);
  std::vector<std::uint32_t> scratch;
  for (std::uint32_t k = 0; k < n; ++k) {
    const auto& c = cells[k];
    if (c.dim != 2) continue;
    std::vector<std::uint32_t> column(c.faces.begin(), c.faces.begin() + c.face_count);
    std::sort(column.begin(), column.end());
    while (!column.empty()) {
      const std::uint32_t owner = pivot_owner[column.back()];
      if (owner == std::numeric_limits<std::uint32_t>::max()) break;
      add_column(column, reduced[owner], scratch);
    }
    if (column.empty()) continue;  // unreachable for planar complexes
    const std::uint32_t low = column.back();
    pivot_owner[low] = k;
    if (cells[low].value < c.value) diagram.pairs.push_back({1, cells[low].value, c.value});
    reduced[k] = std::move(column);
  }
  for (std::uint32_t k = 0; k < n; ++k) {
    if (creates_cycle[k] && pivot_owner[k] == std::numeric_limits<std::uint32_t>::max()) {
      diagram.pairs.push_back({1, cells[k].value, kInf});
    }
  }
  return diagram;
}

BettiNumbers betti_numbers(const PersistenceDiagram& diagram, double threshold) {
  BettiNumbers b;
  for (const auto& p : diagram.pairs) {
    if (p.birth <= threshold && threshold < p.death) ++(p.dim == 0 ? b.b0 : b.b1);
  }
  return b;
}

BettiNumbers betti_numbers(const CubicalFiltration& filtration, double threshold) {
  return betti_numbers(compute_persistence(filtration), threshold);
}

PersistenceDiagram filter_finite(const PersistenceDiagram& diagram) {
  PersistenceDiagram out;
  for (const auto& p : diagram.pairs) {
    if (std::isfinite(p.death)) out.pairs.push_back(p);
  }
  return out;
}

PersistenceDiagram rescale_diagram(const PersistenceDiagram& diagram, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw Error(ErrorCode::kNonPositiveFactor, "rescale factor must be positive and finite");
  }
  PersistenceDiagram out = diagram;
  for (auto& p : out.pairs) {
    p.birth *= factor;
    p.death *= factor;
  }
  return out;
}

std::string format_diagram_csv(const PersistenceDiagram& diagram) {
  std::string out = "dim,birth,death\n";
  for (const auto& p : diagram.sorted().pairs) {
    out += std::to_string(p.dim) + "," + format_double(p.birth) + "," + format_double(p.death) + "\n";
  }
  return out;
}

PersistenceDiagram parse_diagram_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  PersistenceDiagram d;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (header) {
      if (line.rfind("dim,birth,death", 0) != 0) {
        throw Error(ErrorCode::kParseError, "diagram CSV header must be dim,birth,death");
      }
      header = false;
      continue;
    }
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c)) {
      throw Error(ErrorCode::kRaggedRows, "diagram CSV row needs three cells");
    }
    PersistencePair p{static_cast<int>(parse_double_cell(a)), parse_double_cell(b),
                      parse_double_cell(c)};
    if (!(p.death > p.birth)) {
      throw Error(ErrorCode::kParseError, "diagram pair on or below the diagonal");
    }
    d.pairs.push_back(p);
  }
  return d;
}

PersistenceDiagram load_diagram_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_diagram_csv(ss.str());
}

}  // namespace persurv
