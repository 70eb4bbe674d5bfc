#include "persurv/sedt.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "persurv/error.hpp"
#include "persurv/format.hpp"

namespace persurv {

DistanceField::DistanceField(std::size_t width, std::size_t height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (width == 0 || height == 0 || values_.size() != width * height) {
    throw Error(ErrorCode::kDimensionMismatch, "distance field size does not match dimensions");
  }
}

namespace {

constexpr std::int64_t kUnreached = std::numeric_limits<std::int64_t>::max();

// Intersection abscissa of parabolas rooted at q and v (v < q) as the exact
// fraction num / den with den > 0.
struct Fraction {
  std::int64_t num;
  std::int64_t den;
};

Fraction intersection(std::int64_t fq, std::int64_t q, std::int64_t fv, std::int64_t v) {
  return {(fq + q * q) - (fv + v * v), 2 * (q - v)};
}

bool less_equal(const Fraction& a, const Fraction& b) {
  // a.num / a.den <= b.num / b.den with positive denominators.
  return static_cast<__int128>(a.num) * b.den <= static_cast<__int128>(b.num) * a.den;
}

// 1D squared-distance lower envelope (Felzenszwalb & Huttenlocher) over f,
// where f[i] == kUnreached marks an absent source.
void envelope_1d(std::span<const std::int64_t> f, std::span<std::int64_t> out,
                 std::vector<std::int64_t>& roots, std::vector<Fraction>& bounds) {
  const auto n = static_cast<std::int64_t>(f.size());
  roots.clear();
  bounds.clear();
  // bounds[k] is the abscissa where roots[k+1] starts to beat roots[k].
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] == kUnreached) continue;
    while (!roots.empty()) {
      const Fraction s = intersection(f[q], q, f[roots.back()], roots.back());
      if (!bounds.empty() && less_equal(s, bounds.back())) {
        roots.pop_back();
        bounds.pop_back();
        continue;
      }
      bounds.push_back(s);
      break;
    }
    roots.push_back(q);
  }
  if (roots.empty()) {
    for (auto& o : out) o = kUnreached;
    return;
  }
  std::size_t k = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    // Advance while the next boundary lies strictly left of q.
    while (k < bounds.size() && static_cast<__int128>(bounds[k].num) < static_cast<__int128>(q) * bounds[k].den) {
      ++k;
    }
    const std::int64_t r = roots[k];
    out[q] = (q - r) * (q - r) + f[r];
  }
}

}  // namespace

std::vector<std::int64_t> squared_distance_transform(std::span<const std::uint8_t> is_target,
                                                     std::size_t width, std::size_t height) {
  std::vector<std::int64_t> col_pass(width * height, kUnreached);
  // Vertical pass: distance to the nearest target in the same column.
  for (std::size_t x = 0; x < width; ++x) {
    std::int64_t last = -1;
    for (std::size_t y = 0; y < height; ++y) {
      if (is_target[y * width + x]) last = static_cast<std::int64_t>(y);
      if (last >= 0) {
        const std::int64_t d = static_cast<std::int64_t>(y) - last;
        col_pass[y * width + x] = d * d;
      }
    }
    last = -1;
    for (std::size_t y = height; y-- > 0;) {
      if (is_target[y * width + x]) last = static_cast<std::int64_t>(y);
      if (last >= 0) {
        const std::int64_t d = last - static_cast<std::int64_t>(y);
        col_pass[y * width + x] = std::min(col_pass[y * width + x], d * d);
      }
    }
  }
  std::vector<std::int64_t> result(width * height);
  std::vector<std::int64_t> roots;
  std::vector<Fraction> bounds;
  for (std::size_t y = 0; y < height; ++y) {
    envelope_1d(std::span(col_pass).subspan(y * width, width),
                std::span(result).subspan(y * width, width), roots, bounds);
  }
  for (auto& r : result) {
    if (r == kUnreached) r = -1;
  }
  return result;
}

namespace {

DistanceField signed_transform(const LabelImage& img) {
  const auto hist = img.histogram();
  int classes = 0;
  for (auto c : hist) classes += c > 0 ? 1 : 0;
  if (classes < 2) {
    throw Error(ErrorCode::kSingleClassImage, "distance undefined: image contains a single class");
  }
  const std::size_t w = img.width(), h = img.height();
  std::vector<std::uint8_t> non_tumor(img.size()), non_normal(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    non_tumor[i] = img.labels()[i] != Label::kTumor;
    non_normal[i] = img.labels()[i] != Label::kNormal;
  }
  const auto to_non_tumor = squared_distance_transform(non_tumor, w, h);
  const auto to_non_normal = squared_distance_transform(non_normal, w, h);
  std::vector<double> values(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    switch (img.labels()[i]) {
      case Label::kTumor:
        values[i] = -std::sqrt(static_cast<double>(to_non_tumor[i]));
        break;
      case Label::kNormal:
        values[i] = std::sqrt(static_cast<double>(to_non_normal[i]));
        break;
      case Label::kEmpty:
        values[i] = std::numeric_limits<double>::infinity();
        break;
    }
  }
  return DistanceField(w, h, std::move(values));
}

}  // namespace

DistanceField sedt3(const LabelImage& img) { return signed_transform(img); }

DistanceField sedt2(const LabelImage& img) {
  const auto hist = img.histogram();
  if (hist[static_cast<std::size_t>(Label::kEmpty)] > 0) {
    throw Error(ErrorCode::kEmptyClassPresent, "two-class transform received empty pixels");
  }
  return signed_transform(img);
}

DistanceField transform(const DistanceField& field, GridTransform op) {
  std::size_t w = 0, h = 0;
  auto values = transform_grid(field.values(), field.width(), field.height(), op, &w, &h);
  return DistanceField(w, h, std::move(values));
}

std::string format_distance_csv(const DistanceField& field) {
  std::string out;
  for (std::size_t y = 0; y < field.height(); ++y) {
    for (std::size_t x = 0; x < field.width(); ++x) {
      if (x) out.push_back(',');
      out += format_double(field.at(x, y));
    }
    out.push_back('\n');
  }
  return out;
}

DistanceField parse_distance_csv(std::string_view text) {
  std::vector<double> values;
  std::size_t width = 0, height = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::size_t cols = 0;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      values.push_back(parse_double_cell(cell));
      ++cols;
    }
    if (height == 0) {
      width = cols;
    } else if (cols != width) {
      throw Error(ErrorCode::kRaggedRows, "distance CSV has ragged rows");
    }
    ++height;
  }
  if (height == 0) throw Error(ErrorCode::kParseError, "empty distance CSV");
  return DistanceField(width, height, std::move(values));
}

DistanceField load_distance_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_distance_csv(ss.str());
}

}  // namespace persurv
