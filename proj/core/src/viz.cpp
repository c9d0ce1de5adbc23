#include <algorithm>
#include <cmath>

#include "c2f/ops.hpp"
#include "c2f/pipeline.hpp"

namespace c2f::pipeline {

namespace {

Image to_rgb(const Image& src) {
  Image out = Image::create(src.width, src.height, 3);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = src.at(x, y, src.channels == 3 ? c : 0);
      }
    }
  }
  return out;
}

void put_pixel(Image& img, int x, int y, int r, int g, int b) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  img.at(x, y, 0) = static_cast<std::uint8_t>(r);
  img.at(x, y, 1) = static_cast<std::uint8_t>(g);
  img.at(x, y, 2) = static_cast<std::uint8_t>(b);
}

void draw_line(Image& img, int x0, int y0, int x1, int y1, int r, int g,
               int b) {
  // Bresenham.
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    put_pixel(img, x0, y0, r, g, b);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_cross(Image& img, int x, int y, int r, int g, int b) {
  for (int d = -2; d <= 2; ++d) {
    put_pixel(img, x + d, y, r, g, b);
    put_pixel(img, x, y + d, r, g, b);
  }
}

// Blue -> cyan -> yellow -> red ramp for similarity mass.
void colormap(double v, int& r, int& g, int& b) {
  v = std::min(std::max(v, 0.0), 1.0);
  r = static_cast<int>(std::lround(255.0 * std::min(1.0, 2.0 * v)));
  g = static_cast<int>(std::lround(255.0 * (v < 0.5 ? 2.0 * v : 2.0 - 2.0 * v)));
  b = static_cast<int>(std::lround(255.0 * std::max(0.0, 1.0 - 2.0 * v)));
}

}  // namespace

void write_match_overlay(const Image& image_t, const Image& image_r,
                         const std::vector<net::MatchResult>& matches,
                         const std::string& path) {
  check(image_t.height == image_r.height,
        "write_match_overlay: image heights differ");
  Image canvas = Image::create(image_t.width + image_r.width,
                               image_t.height, 3);
  const Image rgb_t = to_rgb(image_t);
  const Image rgb_r = to_rgb(image_r);
  for (int y = 0; y < image_t.height; ++y) {
    for (int x = 0; x < image_t.width; ++x) {
      for (int c = 0; c < 3; ++c) canvas.at(x, y, c) = rgb_t.at(x, y, c);
    }
    for (int x = 0; x < image_r.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        canvas.at(image_t.width + x, y, c) = rgb_r.at(x, y, c);
      }
    }
  }
  for (const auto& m : matches) {
    const int x0 = static_cast<int>(std::lround(m.x_t.x()));
    const int y0 = static_cast<int>(std::lround(m.x_t.y()));
    const int x1 = static_cast<int>(std::lround(m.x_r.x())) + image_t.width;
    const int y1 = static_cast<int>(std::lround(m.x_r.y()));
    draw_line(canvas, x0, y0, x1, y1, 40, 220, 40);
    draw_cross(canvas, x0, y0, 255, 220, 0);
    draw_cross(canvas, x1, y1, 255, 120, 0);
  }
  save_pnm(canvas, path);
}

void write_similarity_heatmaps(const net::Model& model, const Image& image_t,
                               const Image& image_r,
                               const Eigen::Vector2d& keypoint,
                               const std::string& path_prefix) {
  NoGradGuard no_grad;
  Tensor img_t = image_to_tensor(image_t);
  Tensor img_r = image_to_tensor(image_r);
  const auto pyr_t = model.extract_features(img_t);
  const auto pyr_r = model.extract_features(img_r);
  const auto trace = model.match(keypoint, pyr_t, pyr_r, 3);

  const std::pair<const Tensor*, std::string> levels[] = {
      {&trace.sim_coarse, "coarse"},
      {&trace.sim_median, "median"},
      {&trace.sim_fine, "fine"}};
  for (const auto& [sim, name] : levels) {
    if (!sim->defined()) continue;
    const int rows = sim->shape()[0];
    const int cells = sim->shape()[1];
    const int side = static_cast<int>(std::lround(std::sqrt(cells)));
    // Average similarity mass over the target window cells.
    std::vector<double> heat(cells, 0.0);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cells; ++c) heat[c] += sim->at(r * cells + c);
    }
    const double peak = *std::max_element(heat.begin(), heat.end());
    const int scale = std::max(1, 128 / side);
    Image img = Image::create(side * scale, side * scale, 3);
    for (int y = 0; y < side * scale; ++y) {
      for (int x = 0; x < side * scale; ++x) {
        int r, g, b;
        colormap(heat[(y / scale) * side + x / scale] / (peak > 0 ? peak : 1),
                 r, g, b);
        img.at(x, y, 0) = static_cast<std::uint8_t>(r);
        img.at(x, y, 1) = static_cast<std::uint8_t>(g);
        img.at(x, y, 2) = static_cast<std::uint8_t>(b);
      }
    }
    save_pnm(img, path_prefix + "_" + name + ".ppm");
  }
}

}  // namespace c2f::pipeline
