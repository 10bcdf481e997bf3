#include "gcg/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace gcg {

Image Image::blank(int h, int w, int c, unsigned char fill) {
  if (h < 1 || w < 1 || (c != 1 && c != 3)) {
    throw ContractError("Image::blank: bad dimensions");
  }
  Image img;
  img.h = h;
  img.w = w;
  img.c = c;
  img.pixels.assign(static_cast<size_t>(h) * w * c, fill);
  return img;
}

unsigned char& Image::at(int y, int x, int ch) {
  return pixels[(static_cast<size_t>(y) * w + x) * c + ch];
}

unsigned char Image::at(int y, int x, int ch) const {
  return pixels[(static_cast<size_t>(y) * w + x) * c + ch];
}

namespace {

int read_header_int(std::istream& is, const std::string& path) {
  int ch = is.get();
  while (ch != EOF) {
    if (ch == '#') { // comment to end of line
      while (ch != EOF && ch != '\n') ch = is.get();
      ch = is.get();
      continue;
    }
    if (!std::isspace(ch)) break;
    ch = is.get();
  }
  if (ch == EOF || !std::isdigit(ch)) {
    throw DataError("malformed PNM header in '" + path + "'");
  }
  long value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    if (value > 1 << 30) throw DataError("absurd PNM header value in '" + path + "'");
    ch = is.get();
  }
  // ch was the single whitespace terminating the token (or EOF)
  return static_cast<int>(value);
}

} // namespace

Image read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image '" + path + "'");
  char p = static_cast<char>(is.get());
  char kind = static_cast<char>(is.get());
  if (p != 'P' || (kind != '5' && kind != '6')) {
    throw DataError("'" + path + "' is not a binary PGM/PPM (P5/P6) file");
  }
  Image img;
  img.c = kind == '5' ? 1 : 3;
  img.w = read_header_int(is, path);
  img.h = read_header_int(is, path);
  int maxval = read_header_int(is, path);
  if (img.w < 1 || img.h < 1) throw DataError("bad image size in '" + path + "'");
  if (maxval != 255) {
    throw DataError("'" + path + "' has maxval " + std::to_string(maxval) +
                    "; only 255 supported");
  }
  size_t n = static_cast<size_t>(img.h) * img.w * img.c;
  img.pixels.resize(n);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw IoError("'" + path + "' truncated: expected " + std::to_string(n) + " pixel bytes");
  }
  return img;
}

void write_pnm(const Image& img, const std::string& path) {
  if (img.c != 1 && img.c != 3) throw ContractError("write_pnm: channels must be 1 or 3");
  if (img.pixels.size() != static_cast<size_t>(img.h) * img.w * img.c) {
    throw ContractError("write_pnm: pixel buffer does not match dimensions");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

Tensor image_to_tensor(const Image& img) {
  std::vector<double> data(img.pixels.size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = img.pixels[i] / 255.0;
  return Tensor::from_data({img.h, img.w, img.c}, std::move(data));
}

Image tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(2) != 1 && t.dim(2) != 3)) {
    throw ContractError("tensor_to_image expects [H,W,1|3], got " + shape_str(t.shape()));
  }
  Image img = Image::blank(t.dim(0), t.dim(1), t.dim(2));
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    double v = std::clamp(t.data()[i], 0.0, 1.0);
    img.pixels[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  return img;
}

} // namespace gcg
