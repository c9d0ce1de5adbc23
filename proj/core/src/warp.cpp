#include <cmath>

#include "c2f/data.hpp"

namespace c2f::data {

WarpPair gen_warp_pair(const Image& image, const WarpConfig& config, Rng& rng) {
  check(image.channels == 1 || image.channels == 3,
        "gen_warp_pair: unsupported channel count");
  const int w = image.width, h = image.height;

  geo::HomographyConfig hcfg = config.homography;
  hcfg.width = w;
  hcfg.height = h;

  WarpPair pair;
  pair.image_t = image;
  if (config.identity) {
    pair.homography = geo::Homography{};
    pair.image_r = image;
    pair.valid_mask.assign(static_cast<std::size_t>(w) * h, 1);
    return pair;
  }

  pair.homography = geo::random_homography(hcfg, rng);
  const geo::Homography inverse = pair.homography.inverse();

  // Inverse warp: every reference pixel samples its source in the target.
  pair.image_r = Image::create(w, h, image.channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto src = geo::warp_point(inverse, {static_cast<double>(x),
                                                 static_cast<double>(y)});
      if (!src || !image.in_bounds(src->x(), src->y())) continue;  // stays 0
      for (int c = 0; c < image.channels; ++c) {
        pair.image_r.at(x, y, c) = static_cast<std::uint8_t>(
            std::lround(sample_bilinear(image, src->x(), src->y(), c)));
      }
    }
  }

  // Exact visibility: the mask holds target pixels whose warp stays in view.
  pair.valid_mask.assign(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto dst = geo::warp_point(pair.homography,
                                       {static_cast<double>(x),
                                        static_cast<double>(y)});
      if (dst && pair.image_r.in_bounds(dst->x(), dst->y())) {
        pair.valid_mask[static_cast<std::size_t>(y) * w + x] = 1;
      }
    }
  }
  return pair;
}

std::vector<Eigen::Vector2d> random_mask_points(const WarpPair& pair, int count,
                                                Rng& rng) {
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < pair.valid_mask.size(); ++i) {
    if (pair.valid_mask[i]) indices.push_back(i);
  }
  std::vector<Eigen::Vector2d> points;
  if (indices.empty()) return points;
  const int w = pair.image_t.width;
  points.reserve(count);
  for (int k = 0; k < count; ++k) {
    const std::size_t i = indices[rng.uniform_int(indices.size())];
    points.emplace_back(static_cast<double>(i % w),
                        static_cast<double>(i / w));
  }
  return points;
}

}  // namespace c2f::data
