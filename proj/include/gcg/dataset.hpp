#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcg/image.hpp"
#include "gcg/tensor.hpp"

namespace gcg {

/// Per-class lesion counts drawn per image. Adjacent classes get disjoint
/// count ranges so the labels are separable by construction.
struct LesionClassSpec {
  int exudates_min = 0, exudates_max = 0; // bright yellowish blobs
  int dots_min = 0, dots_max = 0;         // small dark red dots
  int patches = 0;                        // larger dark irregular patches (exact count)
};

struct SyntheticSpec {
  int num_classes = 3;
  std::vector<int> samples_per_class; // empty = 100 per class
  int image_size = 64;
  double train_fraction = 0.8;
  double val_fraction = 0.2; // remainder after train+val goes to test
  uint64_t seed = 0;
  std::vector<LesionClassSpec> grammar; // empty = default_grammar(num_classes)

  void validate() const;
  std::vector<int> resolved_counts() const;
  std::vector<LesionClassSpec> resolved_grammar() const;

  static std::vector<LesionClassSpec> default_grammar(int num_classes);
  /// Mirrors a 7-class imbalanced distribution: per-class counts scaled
  /// to a fifth, floor of 2.
  static SyntheticSpec imbalanced7(int image_size = 64);
};

std::string synthetic_spec_to_json_string(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json_string(const std::string& text);

struct ManifestRow {
  std::string path; // relative to the manifest's directory
  int label = 0;
  std::string split; // train | val | test
};

/// Renders every image to <out_dir>/img_NNNN.ppm and writes
/// <out_dir>/manifest.csv (header: path,label,split) with stratified
/// splits. Deterministic for a given spec. Returns the manifest rows.
std::vector<ManifestRow> generate_dataset(const SyntheticSpec& spec,
                                          const std::string& out_dir);

/// One image rendered exactly as generate_dataset would for this spec /
/// class / per-class index (exposed for tests).
Image render_synthetic_image(const SyntheticSpec& spec, int label, int index_in_class);

struct Sample {
  Tensor image;
  int label = 0;
};

struct SplitDataset {
  int num_classes = 0;
  std::vector<Sample> train, val, test;
};

std::vector<ManifestRow> read_manifest(const std::string& manifest_path);

/// Loads every manifest row's image into memory. manifest_path may also
/// name the directory containing manifest.csv.
SplitDataset load_dataset(const std::string& manifest_path);

/// Moves a stratified fraction of `train` into the returned validation
/// set (seeded, deterministic). Used when a manifest has no val rows.
std::vector<Sample> carve_holdout(std::vector<Sample>& train, double fraction, uint64_t seed);

} // namespace gcg
