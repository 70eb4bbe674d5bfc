#pragma once

namespace persurv {

template <typename T>
std::vector<T> transform_grid(std::span<const T> values, std::size_t width,
                              std::size_t height, GridTransform op,
                              std::size_t* out_width, std::size_t* out_height) {
  const bool swaps = op == GridTransform::kRot90 || op == GridTransform::kRot270;
  const std::size_t ow = swaps ? height : width;
  const std::size_t oh = swaps ? width : height;
  std::vector<T> out(values.size());
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t nx = x, ny = y;
      switch (op) {
        case GridTransform::kRot90: nx = y; ny = width - 1 - x; break;
        case GridTransform::kRot180: nx = width - 1 - x; ny = height - 1 - y; break;
        case GridTransform::kRot270: nx = height - 1 - y; ny = x; break;
        case GridTransform::kFlipH: nx = width - 1 - x; break;
        case GridTransform::kFlipV: ny = height - 1 - y; break;
      }
      out[ny * ow + nx] = values[y * width + x];
    }
  }
  if (out_width) *out_width = ow;
  if (out_height) *out_height = oh;
  return out;
}

}  // namespace persurv
