#include "gcg/heatmap.hpp"

#include <algorithm>
#include <cmath>

namespace gcg {

HeatmapChannel heatmap_channel_from_string(const std::string& s) {
  if (s == "spatial_map") return HeatmapChannel::spatial_map;
  if (s == "gate") return HeatmapChannel::gate;
  throw ConfigError("unknown heatmap channel: '" + s + "' (spatial_map|gate)");
}

std::string to_string(HeatmapChannel ch) {
  return ch == HeatmapChannel::spatial_map ? "spatial_map" : "gate";
}

std::vector<double> normalize_map(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("normalize_map: empty map");
  auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  double mn = *mn_it, mx = *mx_it;
  std::vector<double> out(values.size());
  if (mx - mn < 1e-12) {
    std::fill(out.begin(), out.end(), 0.5);
    return out;
  }
  for (size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mn) / (mx - mn);
  return out;
}

void attention_color(double a, unsigned char rgb[3]) {
  a = std::clamp(a, 0.0, 1.0);
  // full attention -> dark blue (0,0,128); none -> white, so the blend
  // leaves unattended regions nearly untouched
  unsigned char rg = static_cast<unsigned char>(std::lround(255.0 * (1.0 - a)));
  rgb[0] = rg;
  rgb[1] = rg;
  rgb[2] = static_cast<unsigned char>(255 - std::lround(127.0 * a));
}

namespace {

void check_target(int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ConfigError("heatmap target size must be positive");
}

size_t src_index(int y, int x, int mh, int mw, int out_h, int out_w) {
  int sy = static_cast<int>(static_cast<long long>(y) * mh / out_h);
  int sx = static_cast<int>(static_cast<long long>(x) * mw / out_w);
  return static_cast<size_t>(sy) * mw + sx;
}

} // namespace

Image heatmap_gray(const std::vector<double>& map, int mh, int mw, int out_h, int out_w) {
  check_target(out_h, out_w);
  if (map.size() != static_cast<size_t>(mh) * mw) {
    throw ContractError("heatmap_gray: map size does not match mh*mw");
  }
  Image img = Image::blank(out_h, out_w, 1);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double v = map[src_index(y, x, mh, mw, out_h, out_w)];
      img.at(y, x, 0) = static_cast<unsigned char>(std::lround(255.0 * v));
    }
  }
  return img;
}

Image heatmap_overlay(const std::vector<double>& map, int mh, int mw, const Image& base) {
  check_target(base.h, base.w);
  if (base.c != 3) throw DataError("heatmap overlay needs an RGB base image");
  if (map.size() != static_cast<size_t>(mh) * mw) {
    throw ContractError("heatmap_overlay: map size does not match mh*mw");
  }
  Image img = Image::blank(base.h, base.w, 3);
  for (int y = 0; y < base.h; ++y) {
    for (int x = 0; x < base.w; ++x) {
      double a = map[src_index(y, x, mh, mw, base.h, base.w)];
      unsigned char rgb[3];
      attention_color(a, rgb);
      for (int ch = 0; ch < 3; ++ch) {
        img.at(y, x, ch) =
            static_cast<unsigned char>(std::lround(0.5 * base.at(y, x, ch) + 0.5 * rgb[ch]));
      }
    }
  }
  return img;
}

HeatmapPair render_heatmaps(const AttentionArtifacts& artifacts, const Image& input,
                            HeatmapChannel channel) {
  const Tensor& src =
      channel == HeatmapChannel::spatial_map ? artifacts.spatial_map : artifacts.gate;
  if (!src.defined()) {
    throw ContractError("attention artifacts not populated; run a guided forward pass first");
  }
  int mh, mw;
  std::vector<double> raw;
  if (src.rank() == 2) {
    mh = src.dim(0);
    mw = src.dim(1);
    raw = src.data();
  } else if (src.rank() == 3) {
    mh = src.dim(0);
    mw = src.dim(1);
    int d = src.dim(2);
    raw.assign(static_cast<size_t>(mh) * mw, 0.0);
    for (size_t p = 0; p < raw.size(); ++p) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += src.data()[p * d + k];
      raw[p] = acc / d; // per-channel gates collapse to their channel mean
    }
  } else {
    throw ContractError("heatmap source must be rank 2 or 3");
  }
  std::vector<double> norm = normalize_map(raw);
  HeatmapPair pair;
  pair.gray = heatmap_gray(norm, mh, mw, input.h, input.w);
  pair.overlay = heatmap_overlay(norm, mh, mw, input);
  return pair;
}

} // namespace gcg
