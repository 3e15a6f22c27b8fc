#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "erd/tensor.hpp"

namespace erd {

// 8-bit RGB raster.
struct ImageU8 {
  int w = 0, h = 0;
  std::vector<std::uint8_t> rgb;  // h * w * 3, row-major

  ImageU8() = default;
  ImageU8(int w_, int h_)
      : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, 0) {}

  std::uint8_t& at(int y, int x, int ch) {
    return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + ch];
  }
  std::uint8_t at(int y, int x, int ch) const {
    return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + ch];
  }
};

// Binary PPM (P6), the lossless 8-bit RGB on-disk format used throughout.
inline void write_ppm(const std::string& path, const ImageU8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline ImageU8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0) {
    throw std::runtime_error("unsupported image file: " + path);
  }
  in.get();  // single whitespace after header
  ImageU8 img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw std::runtime_error("truncated image file: " + path);
  return img;
}

// Maps 8-bit RGB into [-1, 1] network input.
inline Tensor3 to_input_tensor(const ImageU8& img) {
  Tensor3 t(img.h, img.w, 3);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    t.data[i] = static_cast<double>(img.rgb[i]) / 127.5 - 1.0;
  }
  return t;
}

inline ImageU8 hflip(const ImageU8& img) {
  ImageU8 out(img.w, img.h);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        out.at(y, x, ch) = img.at(y, img.w - 1 - x, ch);
      }
    }
  }
  return out;
}

inline Box hflip_box(const Box& b, int image_w) {
  return Box{static_cast<double>(image_w) - b.x1, b.y0,
             static_cast<double>(image_w) - b.x0, b.y1};
}

}  // namespace erd
