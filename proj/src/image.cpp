#include "vgh/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "vgh/errors.hpp"

namespace vgh {

Image::Image(int w, int h, Rgb fill) : width(w), height(h) {
  pixels.resize(3 * static_cast<size_t>(w) * static_cast<size_t>(h));
  for (size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill[0]; pixels[i + 1] = fill[1]; pixels[i + 2] = fill[2];
  }
}

namespace {

void plot_thick(Image& img, int x, int y, Rgb c, int thickness) {
  if (thickness <= 1) {
    img.set(x, y, c);
    return;
  }
  int r = thickness / 2;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) img.set(x + dx, y + dy, c);
}

}  // namespace

void draw_line(Image& img, int x0, int y0, int x1, int y1, Rgb c, int thickness) {
  int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    plot_thick(img, x0, y0, c, thickness);
    if (x0 == x1 && y0 == y1) break;
    int e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

void draw_rect(Image& img, int x0, int y0, int x1, int y1, Rgb c, int thickness) {
  draw_line(img, x0, y0, x1, y0, c, thickness);
  draw_line(img, x1, y0, x1, y1, c, thickness);
  draw_line(img, x1, y1, x0, y1, c, thickness);
  draw_line(img, x0, y1, x0, y0, c, thickness);
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, Rgb c) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) img.set(x, y, c);
}

void draw_arrow(Image& img, int x0, int y0, int x1, int y1, Rgb c, int thickness) {
  draw_line(img, x0, y0, x1, y1, c, thickness);
  double ang = std::atan2(static_cast<double>(y1 - y0), static_cast<double>(x1 - x0));
  double head = 7.0;
  for (double side : {2.6, -2.6}) {
    double a = ang + side;
    int hx = x1 + static_cast<int>(std::lround(head * std::cos(a)));
    int hy = y1 + static_cast<int>(std::lround(head * std::sin(a)));
    draw_line(img, x1, y1, hx, hy, c, thickness);
  }
}

namespace {

// Column-major 5x7 glyphs, one byte per column, LSB = top row.
struct Glyph {
  char ch;
  uint8_t col[5];
};

constexpr Glyph kFont[] = {
    {'0', {0x3e, 0x51, 0x49, 0x45, 0x3e}}, {'1', {0x00, 0x42, 0x7f, 0x40, 0x00}},
    {'2', {0x42, 0x61, 0x51, 0x49, 0x46}}, {'3', {0x21, 0x41, 0x45, 0x4b, 0x31}},
    {'4', {0x18, 0x14, 0x12, 0x7f, 0x10}}, {'5', {0x27, 0x45, 0x45, 0x45, 0x39}},
    {'6', {0x3c, 0x4a, 0x49, 0x49, 0x30}}, {'7', {0x01, 0x71, 0x09, 0x05, 0x03}},
    {'8', {0x36, 0x49, 0x49, 0x49, 0x36}}, {'9', {0x06, 0x49, 0x49, 0x29, 0x1e}},
    {'A', {0x7e, 0x11, 0x11, 0x11, 0x7e}}, {'B', {0x7f, 0x49, 0x49, 0x49, 0x36}},
    {'C', {0x3e, 0x41, 0x41, 0x41, 0x22}}, {'D', {0x7f, 0x41, 0x41, 0x22, 0x1c}},
    {'E', {0x7f, 0x49, 0x49, 0x49, 0x41}}, {'F', {0x7f, 0x09, 0x09, 0x09, 0x01}},
    {'G', {0x3e, 0x41, 0x49, 0x49, 0x7a}}, {'H', {0x7f, 0x08, 0x08, 0x08, 0x7f}},
    {'I', {0x00, 0x41, 0x7f, 0x41, 0x00}}, {'J', {0x20, 0x40, 0x41, 0x3f, 0x01}},
    {'K', {0x7f, 0x08, 0x14, 0x22, 0x41}}, {'L', {0x7f, 0x40, 0x40, 0x40, 0x40}},
    {'M', {0x7f, 0x02, 0x0c, 0x02, 0x7f}}, {'N', {0x7f, 0x04, 0x08, 0x10, 0x7f}},
    {'O', {0x3e, 0x41, 0x41, 0x41, 0x3e}}, {'P', {0x7f, 0x09, 0x09, 0x09, 0x06}},
    {'Q', {0x3e, 0x41, 0x51, 0x21, 0x5e}}, {'R', {0x7f, 0x09, 0x19, 0x29, 0x46}},
    {'S', {0x46, 0x49, 0x49, 0x49, 0x31}}, {'T', {0x01, 0x01, 0x7f, 0x01, 0x01}},
    {'U', {0x3f, 0x40, 0x40, 0x40, 0x3f}}, {'V', {0x1f, 0x20, 0x40, 0x20, 0x1f}},
    {'W', {0x3f, 0x40, 0x38, 0x40, 0x3f}}, {'X', {0x63, 0x14, 0x08, 0x14, 0x63}},
    {'Y', {0x07, 0x08, 0x70, 0x08, 0x07}}, {'Z', {0x61, 0x51, 0x49, 0x45, 0x43}},
    {'-', {0x08, 0x08, 0x08, 0x08, 0x08}}, {'_', {0x40, 0x40, 0x40, 0x40, 0x40}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00}},
};

const uint8_t* find_glyph(char ch) {
  if (ch >= 'a' && ch <= 'z') ch = static_cast<char>(ch - 'a' + 'A');
  for (const Glyph& g : kFont)
    if (g.ch == ch) return g.col;
  return nullptr;
}

}  // namespace

void draw_text(Image& img, int x, int y, const std::string& text, Rgb c, int scale) {
  int pen = x;
  for (char ch : text) {
    const uint8_t* cols = find_glyph(ch);
    if (cols == nullptr) {
      draw_rect(img, pen, y, pen + 4 * scale, y + 6 * scale, c, 1);
    } else {
      for (int cx = 0; cx < 5; ++cx)
        for (int cy = 0; cy < 7; ++cy)
          if (cols[cx] & (1u << cy))
            fill_rect(img, pen + cx * scale, y + cy * scale, pen + cx * scale + scale - 1,
                      y + cy * scale + scale - 1, c);
    }
    pen += 6 * scale;
  }
}

int text_width(const std::string& text, int scale) {
  return static_cast<int>(text.size()) * 6 * scale - (text.empty() ? 0 : scale);
}

namespace {

uint32_t crc32_table_entry(uint32_t n) {
  uint32_t c = n;
  for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  return c;
}

uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t n = 0; n < 256; ++n) table[n] = crc32_table_entry(n);
    init = true;
  }
  uint32_t c = crc ^ 0xffffffffu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

uint32_t adler32(const uint8_t* data, size_t len) {
  uint32_t a = 1, b = 0;
  for (size_t i = 0; i < len; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_u32(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  put_u32(out, crc32(out.data() + start, out.size() - start));
}

}  // namespace

std::vector<uint8_t> encode_png(const Image& img) {
  if (img.width <= 0 || img.height <= 0)
    raise(Errc::invalid_argument, "encode_png: empty image");

  // Raw scanlines, filter byte 0 per row.
  std::vector<uint8_t> raw;
  size_t stride = 3 * static_cast<size_t>(img.width);
  raw.reserve((stride + 1) * static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const uint8_t* row = img.pixels.data() + static_cast<size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  // zlib wrapper around stored deflate blocks.
  std::vector<uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t pos = 0;
  while (pos < raw.size()) {
    size_t n = std::min<size_t>(65535, raw.size() - pos);
    bool last = pos + n == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<uint8_t>(n & 0xffu));
    z.push_back(static_cast<uint8_t>(n >> 8));
    z.push_back(static_cast<uint8_t>(~n & 0xffu));
    z.push_back(static_cast<uint8_t>((~n >> 8) & 0xffu));
    z.insert(z.end(), raw.begin() + static_cast<long>(pos), raw.begin() + static_cast<long>(pos + n));
    pos += n;
  }
  put_u32(z, adler32(raw.data(), raw.size()));

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(img.width));
  put_u32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

void save_png(const Image& img, const std::string& path) {
  std::vector<uint8_t> bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::io_failure, "cannot write image: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
  if (!out) raise(Errc::io_failure, "write failed: " + path);
}

}  // namespace vgh
