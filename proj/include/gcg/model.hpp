#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gcg/attention.hpp"
#include "gcg/param.hpp"
#include "gcg/rng.hpp"
#include "gcg/tensor.hpp"

namespace gcg {

enum class Mode { train, eval };

struct ModelConfig {
  int input_h = 64;
  int input_w = 64;
  int input_c = 3;
  std::vector<int> backbone_channels = {16, 32, 64, 128};
  int feature_depth = 128; // must equal backbone_channels.back()
  AttentionKind attention = AttentionKind::gcg;
  int gcg_reduction = 4;
  int gcg_d_int = 0; // 0 = feature_depth / 2
  bool ln_before_relu = false;
  bool per_channel_gate = false;
  std::vector<int> head_widths = {512, 256};
  double dropout_rate = 0.3;
  int num_classes = 3;
  bool flatten_bridge = false; // default bridges via global average pool
  // EMA keep-rate for batch-norm running stats. Short-run training should
  // lower this (e.g. 0.9) or eval stats lag the train stats badly.
  double bn_momentum = 0.99;

  void validate() const;
  /// Spatial grid after the backbone's per-stage halvings.
  std::pair<int, int> feature_grid() const;
  int bridge_width() const;
  AttentionConfig attention_config() const;
};

std::string config_to_json_string(const ModelConfig& cfg);
/// Applies the keys present in `text` over defaults; unknown keys are a
/// config error (typo guard).
ModelConfig config_from_json_string(const std::string& text);

/// Backbone, attention block, and classification head over single
/// channels-last images. Parameters and batch-norm running buffers live
/// in named registries whose handles alias the layer tensors.
class Model {
public:
  Model(const ModelConfig& cfg, uint64_t seed);
  // Copying would silently alias parameter storage between two models;
  // moving preserves the registry/layer aliasing and is allowed.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }
  bool training() const { return mode_ == Mode::train; }

  /// Backbone + attention + bridge for one [H,W,3] image -> [bridge_width].
  Tensor features(const Tensor& image, AttentionArtifacts* artifacts = nullptr);
  /// Head only: features -> probs. Accepts [F] or a batched [N,F].
  Tensor head(const Tensor& feats);
  /// Full forward for one image -> probs [num_classes].
  Tensor forward(const Tensor& image, AttentionArtifacts* artifacts = nullptr);
  /// Full forward for a mini-batch -> probs [N,num_classes]. In train mode
  /// every batch-norm (backbone and head) pools statistics across the whole
  /// batch, so per-image content cannot leak through the normalizer.
  Tensor forward_batch(const std::vector<Tensor>& images);

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  /// Batch-norm running statistics; saved in checkpoints but not trained.
  std::vector<Parameter>& buffers() { return buffers_; }
  const std::vector<Parameter>& buffers() const { return buffers_; }

  void zero_grads();
  Rng& dropout_rng() { return dropout_rng_; }
  /// Test hook: train-mode dropout becomes an identity (keep-all, no
  /// compensation scaling) and consumes no PRNG draws.
  void force_dropout_keep_all(bool on) { force_keep_all_ = on; }

  const AttentionBlock& attention() const { return attention_; }

private:
  struct ConvStage {
    Tensor w, b;
    Tensor bn_scale, bn_shift;
    Tensor bn_mean, bn_var; // running buffers
  };
  struct DenseBlock {
    Tensor w, b;
    Tensor bn_scale, bn_shift;
    Tensor bn_mean, bn_var;
  };

  Tensor dense_block_forward(DenseBlock& blk, const Tensor& x);
  /// Backbone stages for a batch; returns per-image [gh,gw,D] maps.
  std::vector<Tensor> backbone_batch(const std::vector<Tensor>& images);
  Tensor attend_and_bridge(const Tensor& fmap, AttentionArtifacts* artifacts);

  ModelConfig cfg_;
  Mode mode_ = Mode::train;
  std::vector<ConvStage> stages_;
  AttentionBlock attention_;
  std::vector<DenseBlock> head_blocks_;
  Tensor out_w_, out_b_;
  std::vector<Parameter> params_;
  std::vector<Parameter> buffers_;
  Rng dropout_rng_;
  bool force_keep_all_ = false;
};

/// Binary checkpoint: magic "GCGM", u32 version, length-prefixed config
/// JSON, then length/shape-prefixed f32 little-endian records for every
/// parameter and buffer. Loading rebuilds the model from the embedded
/// config; each record must match a registered tensor exactly once.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

} // namespace gcg
