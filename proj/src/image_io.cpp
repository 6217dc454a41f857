#include "yolors/image_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace yolors {

Image8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: " + path + " is not a P6 pixmap");
  auto next_token = [&in, &path]() {
    // skip whitespace and '#' comment lines
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
      if (!in) throw std::runtime_error("read_ppm: truncated header in " + path);
    }
    long v = 0;
    in >> v;
    return v;
  };
  const long w = next_token();
  const long h = next_token();
  const long maxval = next_token();
  if (w <= 0 || h <= 0) throw std::runtime_error("read_ppm: bad dimensions in " + path);
  if (maxval != 255) throw std::runtime_error("read_ppm: expected maxval 255 in " + path);
  in.get();  // single whitespace byte before payload
  Image8 img;
  img.w = static_cast<int>(w);
  img.h = static_cast<int>(h);
  img.rgb.resize(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
    throw std::runtime_error("read_ppm: truncated payload in " + path);
  return img;
}

void write_ppm(const std::string& path, const Image8& img) {
  if (img.w <= 0 || img.h <= 0 ||
      img.rgb.size() != static_cast<size_t>(img.w) * static_cast<size_t>(img.h) * 3)
    throw std::invalid_argument("write_ppm: malformed image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path + " for writing");
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("write_ppm: failed writing " + path);
}

void draw_box_outline(Image8& img, int x1, int y1, int x2, int y2,
                      std::array<uint8_t, 3> color) {
  x1 = std::clamp(x1, 0, img.w - 1);
  x2 = std::clamp(x2, 0, img.w - 1);
  y1 = std::clamp(y1, 0, img.h - 1);
  y2 = std::clamp(y2, 0, img.h - 1);
  if (x2 < x1 || y2 < y1) return;
  for (int x = x1; x <= x2; ++x)
    for (int y : {y1, y2})
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[static_cast<size_t>(c)];
  for (int y = y1; y <= y2; ++y)
    for (int x : {x1, x2})
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[static_cast<size_t>(c)];
}

}  // namespace yolors
