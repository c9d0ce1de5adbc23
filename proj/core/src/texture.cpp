#include <algorithm>
#include <cmath>
#include <vector>

#include "c2f/data.hpp"

namespace c2f::data {

namespace {

// Bilinearly interpolated lattice of uniform values, tiled across the image.
struct ValueNoise {
  int cells;
  std::vector<double> lattice;  // (cells+1)^2

  ValueNoise(Rng& rng, int cells) : cells(cells) {
    lattice.resize(static_cast<std::size_t>(cells + 1) * (cells + 1));
    for (double& v : lattice) v = rng.uniform();
  }

  double at(double u, double v) const {
    const double x = u * cells, y = v * cells;
    const int x0 = std::min(static_cast<int>(x), cells - 1);
    const int y0 = std::min(static_cast<int>(y), cells - 1);
    const double fx = x - x0, fy = y - y0;
    const int stride = cells + 1;
    const double v00 = lattice[y0 * stride + x0];
    const double v01 = lattice[y0 * stride + x0 + 1];
    const double v10 = lattice[(y0 + 1) * stride + x0];
    const double v11 = lattice[(y0 + 1) * stride + x0 + 1];
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) +
           fy * ((1 - fx) * v10 + fx * v11);
  }
};

}  // namespace

Image gen_texture(std::uint64_t seed, int size) {
  check(size >= 32 && size % 32 == 0,
        "gen_texture: size must be a positive multiple of 32");
  Rng rng(seed);

  // Octaves of value noise with 1/f amplitudes.
  std::vector<ValueNoise> octaves;
  std::vector<double> amps;
  double amp = 1.0, total_amp = 0.0;
  for (int cells = 4; cells <= size / 4; cells *= 2) {
    octaves.emplace_back(rng, cells);
    amps.push_back(amp);
    total_amp += amp;
    amp *= 0.55;
  }

  std::vector<double> field(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) / (size - 1);
      const double v = static_cast<double>(y) / (size - 1);
      double s = 0.0;
      for (std::size_t o = 0; o < octaves.size(); ++o) {
        s += amps[o] * octaves[o].at(u, v);
      }
      field[y * static_cast<std::size_t>(size) + x] = s / total_amp;
    }
  }

  // Geometric primitives: filled ellipses and rectangles at random gray
  // levels.  Flat interiors give the detector unmatchable regions to learn.
  const int shapes = 4 + static_cast<int>(rng.uniform_int(5));
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.1, 0.9) * size;
    const double cy = rng.uniform(0.1, 0.9) * size;
    const double rx = rng.uniform(0.03, 0.16) * size;
    const double ry = rng.uniform(0.03, 0.16) * size;
    const double angle = rng.uniform(0.0, 3.14159265358979323846);
    const double gray = rng.uniform(0.05, 0.95);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const int x_lo = std::max(0, static_cast<int>(cx - rx - ry));
    const int x_hi = std::min(size - 1, static_cast<int>(cx + rx + ry) + 1);
    const int y_lo = std::max(0, static_cast<int>(cy - rx - ry));
    const int y_hi = std::min(size - 1, static_cast<int>(cy + rx + ry) + 1);
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double ax = (ca * dx + sa * dy) / rx;
        const double ay = (-sa * dx + ca * dy) / ry;
        const bool inside = ellipse ? (ax * ax + ay * ay <= 1.0)
                                    : (std::fabs(ax) <= 1.0 &&
                                       std::fabs(ay) <= 1.0);
        if (inside) field[y * static_cast<std::size_t>(size) + x] = gray;
      }
    }
  }

  // A few thin bright/dark line segments for corner-like structure.
  const int lines = 6 + static_cast<int>(rng.uniform_int(6));
  for (int l = 0; l < lines; ++l) {
    double x = rng.uniform(0.0, size - 1.0);
    double y = rng.uniform(0.0, size - 1.0);
    const double dir = rng.uniform(0.0, 2 * 3.14159265358979323846);
    const double dx = std::cos(dir), dy = std::sin(dir);
    const double gray = rng.uniform() < 0.5 ? 0.02 : 0.98;
    const int len = 8 + static_cast<int>(rng.uniform_int(size / 2));
    for (int step = 0; step < len; ++step) {
      const int xi = static_cast<int>(std::lround(x));
      const int yi = static_cast<int>(std::lround(y));
      if (xi < 0 || xi >= size || yi < 0 || yi >= size) break;
      field[yi * static_cast<std::size_t>(size) + xi] = gray;
      x += dx;
      y += dy;
    }
  }

  Image img = Image::create(size, size, 1);
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double v = std::min(std::max(field[i], 0.0), 1.0);
    img.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

}  // namespace c2f::data
