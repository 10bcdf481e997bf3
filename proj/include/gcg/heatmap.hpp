#pragma once

#include <string>
#include <vector>

#include "gcg/attention.hpp"
#include "gcg/image.hpp"

namespace gcg {

enum class HeatmapChannel { spatial_map, gate };

HeatmapChannel heatmap_channel_from_string(const std::string& s);
std::string to_string(HeatmapChannel ch);

/// Min-max normalization to [0,1]; a constant map becomes all 0.5.
std::vector<double> normalize_map(const std::vector<double>& values);

/// Attention strength a -> blended blue: full attention is dark blue,
/// no attention leaves the pixel nearly untouched (white blend).
void attention_color(double a, unsigned char rgb[3]);

/// Grayscale rendering of a normalized [mh x mw] map, nearest-neighbor
/// upsampled to out_h x out_w. Bright = high attention.
Image heatmap_gray(const std::vector<double>& map, int mh, int mw, int out_h, int out_w);

/// 0.5/0.5 blend of the colormapped attention over the base image
/// (base must be RGB and sets the output size).
Image heatmap_overlay(const std::vector<double>& map, int mh, int mw, const Image& base);

struct HeatmapPair {
  Image gray;    // PGM content
  Image overlay; // PPM content
};

/// Renders the selected artifact channel against the original input
/// image. A per-channel gate is reduced to its channel mean first.
HeatmapPair render_heatmaps(const AttentionArtifacts& artifacts, const Image& input,
                            HeatmapChannel channel);

} // namespace gcg
