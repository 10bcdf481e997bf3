#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gcg/param.hpp"
#include "gcg/tensor.hpp"

namespace gcg {

enum class AttentionKind { none, spatial, channel_se, global_context, gated, gcg };

AttentionKind attention_kind_from_string(const std::string& s);
std::string to_string(AttentionKind kind);
std::vector<AttentionKind> all_attention_kinds();

struct AttentionConfig {
  AttentionKind kind = AttentionKind::gcg;
  int depth = 0;      // D, the feature depth the block operates on
  int reduction = 4;  // bottleneck k = ceil(D / reduction)
  int d_int = 0;      // gating intermediate width; 0 means D/2
  bool ln_before_relu = false; // norm-then-activate variant of the bottleneck
  bool per_channel_gate = false;

  int bottleneck_k() const;
  int gating_width() const;
  int gate_channels() const { return per_channel_gate ? depth : 1; }
  void validate() const;
};

/// Learnables of the context branch: attention pooling plus the channel
/// bottleneck.
struct ContextParams {
  Tensor w_c;      // [D,1]
  Tensor w_t1;     // [D,k]
  Tensor w_t2;     // [k,D]
  Tensor ln_scale; // [k]
  Tensor ln_shift; // [k]
};

/// Learnables of the gating branch. psi/b_psi form the single affine map
/// from the gating intermediate down to the attention coefficient.
struct GatingParams {
  Tensor w_x;   // [D,D_int]
  Tensor w_g;   // [D,D_int]
  Tensor b_xg;  // [D_int]
  Tensor psi;   // [D_int, gate_channels]
  Tensor b_psi; // [gate_channels]
};

struct GcgParams {
  ContextParams context;
  GatingParams gating;
};

/// Everything a forward pass produces that the explainability exporter
/// may want. Only populated by the full guided pipeline.
struct AttentionArtifacts {
  Tensor spatial_map;         // [H,W], sums to 1
  Tensor context;             // [D]
  Tensor transformed_context; // [D]
  Tensor gate;                // [H,W,1] (per-channel flag: [H,W,D])
  Tensor output;              // [H,W,D]
};

// Stage ops. R is a channels-last [H,W,D] feature map throughout.

/// Attention pooling: learned softmax over spatial positions, then the
/// weighted channel sum. Returns (spatial_map [H,W], context [D]).
std::pair<Tensor, Tensor> context_formulation(const Tensor& R, const ContextParams& p);

/// Bottleneck transform of the pooled context. Default order is
/// activate-then-normalize; ln_before_relu swaps it.
Tensor channel_correlation(const Tensor& context, const ContextParams& p,
                           bool ln_before_relu = false);

/// Broadcast-add the transformed context onto every spatial position.
Tensor guide_fuse(const Tensor& R, const Tensor& transformed_context);

/// Additive gate over (R, R_g). Returns (gate, gated output).
std::pair<Tensor, Tensor> guided_gating(const Tensor& R, const Tensor& R_g,
                                        const GatingParams& p);

AttentionArtifacts gcg_forward(const Tensor& R, const GcgParams& p,
                               bool ln_before_relu = false);

/// One attention block of any supported kind. Holds only the parameters
/// its kind actually uses.
class AttentionBlock {
public:
  AttentionBlock() = default;
  AttentionBlock(const AttentionConfig& config, Rng& rng);

  const AttentionConfig& config() const { return cfg_; }

  /// Attended feature map, same shape as R. For the full guided kind the
  /// intermediate artifacts are written to *artifacts when given.
  Tensor forward(const Tensor& R, AttentionArtifacts* artifacts = nullptr) const;

  bool produces_artifacts() const { return cfg_.kind == AttentionKind::gcg; }

  /// Registry handles, names prefixed "attention.".
  std::vector<Parameter> parameters() const;

  const GcgParams& gcg_params() const { return gcg_; }
  GcgParams& gcg_params() { return gcg_; }

private:
  AttentionConfig cfg_;
  GcgParams gcg_; // context part used by global_context, gating part by gated
  Tensor se_w1_, se_b1_, se_w2_, se_b2_;
  Tensor spatial_w_, spatial_b_;
};

} // namespace gcg
