#pragma once

#include <string>
#include <vector>

#include "gcg/tensor.hpp"

namespace gcg {

/// 8-bit raster, row-major, channels interleaved. c is 1 (gray) or 3 (rgb).
struct Image {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<unsigned char> pixels;

  static Image blank(int h, int w, int c, unsigned char fill = 0);
  unsigned char& at(int y, int x, int ch);
  unsigned char at(int y, int x, int ch) const;
};

/// Binary PGM (P5) or PPM (P6), maxval 255. Comments and arbitrary header
/// whitespace accepted on read.
Image read_pnm(const std::string& path);
void write_pnm(const Image& img, const std::string& path);

/// [H,W,C] tensor in [0,1] (pixel / 255).
Tensor image_to_tensor(const Image& img);
/// Values clamped to [0,1] then rounded to bytes.
Image tensor_to_image(const Tensor& t);

} // namespace gcg
