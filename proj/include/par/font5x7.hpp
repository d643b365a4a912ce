#pragma once

#include <cstdint>

namespace par {

/// 5x7 bitmap glyphs for printable ASCII (32..126). Each glyph is 7 rows
/// of 5 pixels; bit 4 of a row byte is the leftmost column. Characters
/// outside the range render as space.
struct Glyph {
  static constexpr int width = 5;
  static constexpr int height = 7;
};

/// Row bitmap for character `c`, row `row` in [0, 7).
std::uint8_t glyph_row(char c, int row);

/// True if pixel (col, row) of character `c` is set; col in [0, 5),
/// row in [0, 7). Out-of-range coordinates are unset.
bool glyph_pixel(char c, int col, int row);

}  // namespace par
