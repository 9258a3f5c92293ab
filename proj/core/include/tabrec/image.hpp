#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tabrec/tensor.hpp"

namespace tabrec {

/// 8-bit interleaved RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 255)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* at(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  void set_gray(int x, int y, std::uint8_t v) {
    auto* p = at(x, y);
    p[0] = p[1] = p[2] = v;
  }

  bool operator==(const Image&) const = default;
};

/// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

/// Pads with black on the bottom/right to a square, preserving aspect ratio.
Image pad_to_square(const Image& img);
/// Bilinear resize.
Image resize(const Image& img, int width, int height);
/// Pads to square then resizes to side x side.
Image prepare_image(const Image& img, int side);

/// One row per pixel, three channels, mapped to [-1, 1].
template <typename T>
attn::Mat<T> normalize_rgb(const Image& img) {
  attn::Mat<T> out(static_cast<Eigen::Index>(img.width) * img.height, 3);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (int c = 0; c < 3; ++c) out(i, c) = T(img.rgb[static_cast<std::size_t>(i) * 3 + c]) / T(127.5) - T(1);
  return out;
}

}  // namespace tabrec
