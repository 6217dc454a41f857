#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace yolors {

struct Image8 {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;  // H*W*3, row-major

  uint8_t& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
  uint8_t at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

// Binary P6 portable pixmap, maxval 255.
Image8 read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image8& img);

// 1-pixel rectangle outline, coordinates clamped to the raster.
void draw_box_outline(Image8& img, int x1, int y1, int x2, int y2,
                      std::array<uint8_t, 3> color);

}  // namespace yolors
