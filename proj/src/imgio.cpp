#include "persurv/imgio.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "persurv/error.hpp"

namespace persurv {

LabelImage::LabelImage(std::size_t width, std::size_t height, Label fill)
    : LabelImage(width, height, std::vector<Label>(width * height, fill)) {}

LabelImage::LabelImage(std::size_t width, std::size_t height, std::vector<Label> labels)
    : width_(width), height_(height), labels_(std::move(labels)) {
  if (width == 0 || height == 0) {
    throw Error(ErrorCode::kInvalidArgument, "image dimensions must be positive");
  }
  if (labels_.size() != width * height) {
    throw Error(ErrorCode::kDimensionMismatch, "label count does not match width x height");
  }
}

std::array<std::size_t, kLabelCount> LabelImage::histogram() const noexcept {
  std::array<std::size_t, kLabelCount> counts{};
  for (Label l : labels_) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

namespace {

Label label_from_code(long code) {
  if (code < 0 || code > 2) {
    throw Error(ErrorCode::kInvalidLabel, "InvalidLabel(" + std::to_string(code) + ")");
  }
  return static_cast<Label>(code);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

LabelImage load_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kParseError, "libpng initialisation failed");
  }
  // Declared before setjmp so a longjmp never crosses their construction.
  std::vector<Label> labels;
  std::vector<png_byte> row;
  png_uint_32 width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kParseError, "malformed PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if ((color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) || depth > 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kParseError, "PNG must be palette-indexed (or 8-bit gray codes)");
  }
  if (depth < 8) png_set_packing(png);
  png_read_update_info(png, info);
  row.resize(png_get_rowbytes(png, info));
  labels.reserve(std::size_t{width} * height);
  long bad = -1;
  for (png_uint_32 y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < width; ++x) {
      if (row[x] > 2 && bad < 0) bad = row[x];
      labels.push_back(static_cast<Label>(std::min<png_byte>(row[x], 2)));
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (bad >= 0) label_from_code(bad);
  return LabelImage(width, height, std::move(labels));
}

void save_png(const LabelImage& img, const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::kMissingFile, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kParseError, "libpng initialisation failed");
  }
  std::vector<png_byte> row(img.width());
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kParseError, "PNG write failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Normal = blue, tumor = green, empty = yellow.
  png_color palette[3] = {{0, 0, 255}, {0, 160, 0}, {255, 220, 0}};
  png_set_PLTE(png, info, palette, 3);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) row[x] = static_cast<png_byte>(img.at(x, y));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

ImageFormat format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" ? ImageFormat::kPngPalette : ImageFormat::kCsv;
}

LabelImage parse_label_csv(std::string_view text) {
  std::vector<Label> labels;
  std::size_t width = 0, height = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = trim(text.substr(0, eol));
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    if (line.empty()) continue;
    std::size_t cols = 0;
    for (;;) {
      const auto comma = line.find(',');
      const std::string_view cell = trim(line.substr(0, comma));
      long code = 0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), code);
      if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
        throw Error(ErrorCode::kParseError, "non-integer label cell '" + std::string(cell) + "'");
      }
      labels.push_back(label_from_code(code));
      ++cols;
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (height == 0) {
      width = cols;
    } else if (cols != width) {
      throw Error(ErrorCode::kRaggedRows, "row " + std::to_string(height) + " has " +
                                             std::to_string(cols) + " cells, expected " +
                                             std::to_string(width));
    }
    ++height;
  }
  if (height == 0) throw Error(ErrorCode::kParseError, "empty label CSV");
  return LabelImage(width, height, std::move(labels));
}

LabelImage load_label_image(const std::filesystem::path& path, ImageFormat format) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kMissingFile, "no such file: " + path.string());
  }
  if (format == ImageFormat::kPngPalette) return load_png(path);
  return parse_label_csv(read_file(path));
}

std::string format_label_csv(const LabelImage& img) {
  std::string out;
  out.reserve(img.size() * 2);
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      if (x) out.push_back(',');
      out.push_back(static_cast<char>('0' + static_cast<int>(img.at(x, y))));
    }
    out.push_back('\n');
  }
  return out;
}

void save_label_image(const LabelImage& img, const std::filesystem::path& path,
                      ImageFormat format) {
  if (format == ImageFormat::kPngPalette) {
    save_png(img, path);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kMissingFile, "cannot write " + path.string());
  out << format_label_csv(img);
}

LabelImage denoise(const LabelImage& img) {
  LabelImage out = img;
  const std::size_t w = img.width(), h = img.height();
  if (w < 3 || h < 3) return out;
  for (std::size_t y = 1; y + 1 < h; ++y) {
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const Label first = img.at(x - 1, y - 1);
      if (first == img.at(x, y)) continue;
      bool uniform = true;
      for (std::size_t dy = 0; dy < 3 && uniform; ++dy) {
        for (std::size_t dx = 0; dx < 3; ++dx) {
          if (dx == 1 && dy == 1) continue;
          if (img.at(x + dx - 1, y + dy - 1) != first) {
            uniform = false;
            break;
          }
        }
      }
      if (uniform) out.at(x, y) = first;
    }
  }
  return out;
}

LabelImage permute_pixels(const LabelImage& img, RngSeed seed) {
  std::vector<Label> labels(img.labels().begin(), img.labels().end());
  SplitMix64 rng(seed);
  for (std::size_t i = labels.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(labels[i - 1], labels[j]);
  }
  return LabelImage(img.width(), img.height(), std::move(labels));
}

LabelImage transform(const LabelImage& img, GridTransform op) {
  std::size_t w = 0, h = 0;
  auto labels = transform_grid(img.labels(), img.width(), img.height(), op, &w, &h);
  return LabelImage(w, h, std::move(labels));
}

}  // namespace persurv
