#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "persurv/rng.hpp"

namespace persurv {

// Numeric values are the on-disk codes of the CSV and PNG formats.
enum class Label : std::uint8_t { kNormal = 0, kTumor = 1, kEmpty = 2 };

inline constexpr std::size_t kLabelCount = 3;

// Row-major 2D grid of class labels. Coordinates are (x, y) with x the column.
class LabelImage {
 public:
  LabelImage() = default;
  LabelImage(std::size_t width, std::size_t height, Label fill = Label::kNormal);
  LabelImage(std::size_t width, std::size_t height, std::vector<Label> labels);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return labels_.size(); }

  Label at(std::size_t x, std::size_t y) const { return labels_[y * width_ + x]; }
  Label& at(std::size_t x, std::size_t y) { return labels_[y * width_ + x]; }

  std::span<const Label> labels() const noexcept { return labels_; }
  std::span<Label> labels() noexcept { return labels_; }

  // Pixel count per class, indexed by the numeric label code.
  std::array<std::size_t, kLabelCount> histogram() const noexcept;

  bool operator==(const LabelImage&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<Label> labels_;
};

enum class ImageFormat { kCsv, kPngPalette };

// Picks the format from the file extension (".png" or anything else = CSV).
ImageFormat format_from_path(const std::filesystem::path& path);

LabelImage load_label_image(const std::filesystem::path& path, ImageFormat format);
inline LabelImage load_label_image(const std::filesystem::path& path) {
  return load_label_image(path, format_from_path(path));
}
LabelImage parse_label_csv(std::string_view text);

void save_label_image(const LabelImage& img, const std::filesystem::path& path,
                      ImageFormat format);
std::string format_label_csv(const LabelImage& img);

// Reassigns every interior pixel whose eight neighbours share one class that
// differs from its own. Single pass; border pixels are never touched.
LabelImage denoise(const LabelImage& img);

// Seeded Fisher-Yates shuffle of the pixel positions.
LabelImage permute_pixels(const LabelImage& img, RngSeed seed);

enum class GridTransform { kRot90, kRot180, kRot270, kFlipH, kFlipV };

inline constexpr GridTransform kAllTransforms[] = {
    GridTransform::kRot90, GridTransform::kRot180, GridTransform::kRot270,
    GridTransform::kFlipH, GridTransform::kFlipV};

// rot90 maps (x, y) to (y, w-1-x), so a w x h image becomes h x w.
template <typename T>
std::vector<T> transform_grid(std::span<const T> values, std::size_t width,
                              std::size_t height, GridTransform op,
                              std::size_t* out_width, std::size_t* out_height);

LabelImage transform(const LabelImage& img, GridTransform op);

}  // namespace persurv

#include "persurv/detail/transform_grid.inl"
