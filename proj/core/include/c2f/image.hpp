#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c2f/tensor.hpp"

namespace c2f {

// 8-bit raster image, row-major, origin at the top-left corner.  Pixel
// coordinates are (x, y) with x the column and y the row; this convention is
// shared by every coordinate in the project.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (grayscale) or 3 (RGB)
  std::vector<std::uint8_t> data;  // height * width * channels

  static Image create(int width, int height, int channels);

  std::uint8_t& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool in_bounds(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= width - 1.0 && y <= height - 1.0;
  }
};

// Bilinear lookup with clamp-to-edge, in [0,255].
double sample_bilinear(const Image& image, double x, double y, int channel = 0);

// Binary PGM (P5) for grayscale, binary PPM (P6) for RGB.
void save_pnm(const Image& image, const std::string& path);
Image load_pnm(const std::string& path);

// Network input layout: [3,H,W] with values in [0,1]; grayscale images are
// replicated across the three channels.
Tensor image_to_tensor(const Image& image);

}  // namespace c2f
