#include "par/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "par/font5x7.hpp"

namespace par {

Image::Image(int w, int h, double fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

void clamp01(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

void save_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_ppm: cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = std::clamp(img.pixels[i], 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("save_ppm: write failed for " + path);
}

namespace {

int read_ppm_int(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments between header fields.
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') in.ignore(1 << 20, '\n');
    else in.get();
    c = in.peek();
  }
  int value = 0;
  if (!(in >> value)) throw std::runtime_error("load_ppm: malformed header in " + path);
  return value;
}

}  // namespace

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_ppm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw std::runtime_error("load_ppm: not a P6 file: " + path);
  const int w = read_ppm_int(in, path);
  const int h = read_ppm_int(in, path);
  const int maxval = read_ppm_int(in, path);
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error("load_ppm: unsupported header in " + path);
  }
  in.get();  // single whitespace byte before raster
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw std::runtime_error("load_ppm: truncated raster in " + path);
  }
  Image img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
  return img;
}

Image resize_bilinear(const Image& img, int new_w, int new_h) {
  if (new_w <= 0 || new_h <= 0) throw std::invalid_argument("resize_bilinear: non-positive size");
  Image out(new_w, new_h);
  const double sx = static_cast<double>(img.width) / new_w;
  const double sy = static_cast<double>(img.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bot = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        out.at(x, y, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

std::vector<int> draw_text(Image& img, const std::string& text, int x0, int y0, int scale,
                           const double color[3]) {
  std::vector<int> covered;
  int pen_x = x0;
  for (char ch : text) {
    for (int row = 0; row < Glyph::height; ++row) {
      for (int col = 0; col < Glyph::width; ++col) {
        if (!glyph_pixel(ch, col, row)) continue;
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) {
            const int px = pen_x + col * scale + dx;
            const int py = y0 + row * scale + dy;
            if (px < 0 || px >= img.width || py < 0 || py >= img.height) continue;
            for (int c = 0; c < 3; ++c) img.at(px, py, c) = color[c];
            covered.push_back(py * img.width + px);
          }
        }
      }
    }
    pen_x += (Glyph::width + 1) * scale;  // one blank column between glyphs
  }
  return covered;
}

}  // namespace par
