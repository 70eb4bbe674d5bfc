#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "persurv/imgio.hpp"

namespace persurv {

// Per-pixel signed Euclidean distance in pixel units, row-major. Negative on
// tumor, positive on normal, +inf on empty.
class DistanceField {
 public:
  DistanceField() = default;
  DistanceField(std::size_t width, std::size_t height, std::vector<double> values);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }
  double at(std::size_t x, std::size_t y) const { return values_[y * width_ + x]; }
  std::span<const double> values() const noexcept { return values_; }

  bool operator==(const DistanceField&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> values_;
};

// Squared distance from every pixel centre to the nearest pixel with
// is_target set; -1 where no target exists. Exact integer arithmetic
// (separable lower-envelope transform).
std::vector<std::int64_t> squared_distance_transform(std::span<const std::uint8_t> is_target,
                                                     std::size_t width, std::size_t height);

// Three-class transform: tumor pixels get -dist to the nearest non-tumor
// pixel, normal pixels +dist to the nearest non-normal pixel (empty counts as
// a different class for both), empty pixels +inf.
DistanceField sedt3(const LabelImage& img);

// Two-class transform; rejects images containing empty pixels.
DistanceField sedt2(const LabelImage& img);

DistanceField transform(const DistanceField& field, GridTransform op);

// CSV of doubles, one image row per line, "inf" for +inf.
std::string format_distance_csv(const DistanceField& field);
DistanceField parse_distance_csv(std::string_view text);
DistanceField load_distance_csv(const std::filesystem::path& path);

}  // namespace persurv
