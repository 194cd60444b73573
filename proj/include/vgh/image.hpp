#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vgh {

using Rgb = std::array<uint8_t, 3>;

struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major RGB8

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0});

  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

  void set(int x, int y, Rgb c) {
    if (!in_bounds(x, y)) return;
    size_t i = 3 * (static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x));
    pixels[i] = c[0]; pixels[i + 1] = c[1]; pixels[i + 2] = c[2];
  }

  Rgb get(int x, int y) const {
    size_t i = 3 * (static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x));
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};

void draw_line(Image& img, int x0, int y0, int x1, int y1, Rgb c, int thickness = 1);
void draw_rect(Image& img, int x0, int y0, int x1, int y1, Rgb c, int thickness = 1);
void fill_rect(Image& img, int x0, int y0, int x1, int y1, Rgb c);

/// Arrow from (x0,y0) to (x1,y1) with a solid head at the tip.
void draw_arrow(Image& img, int x0, int y0, int x1, int y1, Rgb c, int thickness = 2);

/// 5x7 bitmap glyphs covering digits, upper-case letters, and '_' ' ' '-'.
/// Unknown characters render as a hollow box.
void draw_text(Image& img, int x, int y, const std::string& text, Rgb c, int scale = 1);
int text_width(const std::string& text, int scale = 1);

/// Encodes 8-bit RGB PNG using stored (uncompressed) deflate blocks. Output
/// bytes depend only on the pixel content, never on a compression library.
std::vector<uint8_t> encode_png(const Image& img);

void save_png(const Image& img, const std::string& path);

}  // namespace vgh
