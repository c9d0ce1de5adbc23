#include "c2f/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace c2f {

Image Image::create(int width, int height, int channels) {
  check(width > 0 && height > 0, "image: size must be positive");
  check(channels == 1 || channels == 3, "image: channels must be 1 or 3");
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.data.assign(static_cast<std::size_t>(width) * height * channels, 0);
  return img;
}

double sample_bilinear(const Image& image, double x, double y, int channel) {
  const int w = image.width, h = image.height;
  const double xc = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  const double yc = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  const int x0 = w > 1 ? std::min(static_cast<int>(std::floor(xc)), w - 2) : 0;
  const int y0 = h > 1 ? std::min(static_cast<int>(std::floor(yc)), h - 2) : 0;
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = w > 1 ? xc - x0 : 0.0;
  const double fy = h > 1 ? yc - y0 : 0.0;
  const double v00 = image.at(x0, y0, channel);
  const double v01 = image.at(x1, y0, channel);
  const double v10 = image.at(x0, y1, channel);
  const double v11 = image.at(x1, y1, channel);
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
         fy * ((1.0 - fx) * v10 + fx * v11);
}

void save_pnm(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_pnm: cannot open " + path);
  out << (image.channels == 1 ? "P5" : "P6") << "\n"
      << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
  if (!out) throw std::runtime_error("save_pnm: write failed for " + path);
}

namespace {

int read_pnm_int(std::istream& in) {
  // Skips whitespace and '#' comment lines per the NetPBM grammar.
  int c = in.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
    }
    c = in.get();
  }
  int value = 0;
  bool any = false;
  while (std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw std::runtime_error("load_pnm: malformed header");
  return value;
}

}  // namespace

Image load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_pnm: cannot open " + path);
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw std::runtime_error("load_pnm: " + path + " is not a binary PGM/PPM");
  }
  const int channels = magic[1] == '5' ? 1 : 3;
  const int width = read_pnm_int(in);
  const int height = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (maxval != 255) {
    throw std::runtime_error("load_pnm: unsupported maxval " +
                             std::to_string(maxval) + " in " + path);
  }
  Image img = Image::create(width, height, channels);
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (!in) throw std::runtime_error("load_pnm: truncated pixel data in " + path);
  return img;
}

Tensor image_to_tensor(const Image& image) {
  const int w = image.width, h = image.height;
  std::vector<double> values(static_cast<std::size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c) {
    const int src_c = image.channels == 3 ? c : 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        values[(static_cast<std::size_t>(c) * h + y) * w + x] =
            image.at(x, y, src_c) / 255.0;
      }
    }
  }
  return Tensor::from_values({3, h, w}, std::move(values));
}

}  // namespace c2f
