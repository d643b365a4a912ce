#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace par {

/// RGB raster with doubles in [0,1], row-major, channel-interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // size = width * height * 3

  Image() = default;
  Image(int w, int h, double fill = 0.0);

  double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height;
  }
};

/// Clamps every channel to [0,1] in place.
void clamp01(Image& img);

/// Writes binary PPM (P6, maxval 255); channels quantized by round(v*255).
/// Throws std::runtime_error if the file cannot be written.
void save_ppm(const Image& img, const std::string& path);

/// Reads binary PPM (P6, maxval 255) back into [0,1] doubles.
/// Throws std::runtime_error on missing file or malformed header.
Image load_ppm(const std::string& path);

/// Bilinear resample to new_w x new_h. Sampling is align-corners-free:
/// output pixel centers map to input pixel centers.
Image resize_bilinear(const Image& img, int new_w, int new_h);

/// Rasterizes `text` with the embedded 5x7 font into `img`, top-left glyph
/// corner at (x0, y0), each font pixel drawn as a scale x scale block of
/// `color` (RGB). Pixels outside the canvas are skipped. Returns the set of
/// covered pixel offsets (y * width + x) for mask building.
std::vector<int> draw_text(Image& img, const std::string& text, int x0, int y0, int scale,
                           const double color[3]);

}  // namespace par
