#include "gcg/attention.hpp"

#include <algorithm>

#include "gcg/ops.hpp"

namespace gcg {

AttentionKind attention_kind_from_string(const std::string& s) {
  if (s == "none") return AttentionKind::none;
  if (s == "spatial") return AttentionKind::spatial;
  if (s == "channel_se") return AttentionKind::channel_se;
  if (s == "global_context") return AttentionKind::global_context;
  if (s == "gated") return AttentionKind::gated;
  if (s == "gcg") return AttentionKind::gcg;
  throw ConfigError("unknown attention kind: '" + s + "'");
}

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::none: return "none";
    case AttentionKind::spatial: return "spatial";
    case AttentionKind::channel_se: return "channel_se";
    case AttentionKind::global_context: return "global_context";
    case AttentionKind::gated: return "gated";
    case AttentionKind::gcg: return "gcg";
  }
  throw ContractError("unreachable attention kind");
}

std::vector<AttentionKind> all_attention_kinds() {
  return {AttentionKind::none,           AttentionKind::spatial,
          AttentionKind::channel_se,     AttentionKind::global_context,
          AttentionKind::gated,          AttentionKind::gcg};
}

int AttentionConfig::bottleneck_k() const {
  return std::max(1, (depth + reduction - 1) / reduction);
}

int AttentionConfig::gating_width() const {
  return d_int > 0 ? d_int : std::max(1, depth / 2);
}

void AttentionConfig::validate() const {
  if (depth < 1) throw ConfigError("attention depth must be >= 1");
  if (reduction < 1) throw ConfigError("attention reduction must be >= 1");
  if (d_int < 0) throw ConfigError("attention d_int must be >= 0 (0 = depth/2)");
}

namespace {

void require_depth(const Tensor& R, int depth, const char* where) {
  if (R.rank() != 3) {
    throw DimensionError(std::string(where) + ": expected [H,W,D] feature map, got " +
                         shape_str(R.shape()));
  }
  if (R.dim(2) != depth) {
    throw DimensionError(std::string(where) + ": feature depth " + std::to_string(R.dim(2)) +
                         " does not match parameter depth " + std::to_string(depth));
  }
}

ContextParams init_context(int d, int k, Rng& rng) {
  ContextParams p;
  p.w_c = kaiming_uniform({d, 1}, d, rng).set_requires_grad(true);
  p.w_t1 = kaiming_uniform({d, k}, d, rng).set_requires_grad(true);
  p.w_t2 = kaiming_uniform({k, d}, k, rng).set_requires_grad(true);
  p.ln_scale = Tensor::full({k}, 1.0).set_requires_grad(true);
  p.ln_shift = Tensor::zeros({k}).set_requires_grad(true);
  return p;
}

GatingParams init_gating(int d, int di, int gate_ch, Rng& rng) {
  GatingParams p;
  p.w_x = kaiming_uniform({d, di}, d, rng).set_requires_grad(true);
  p.w_g = kaiming_uniform({d, di}, d, rng).set_requires_grad(true);
  p.b_xg = Tensor::zeros({di}).set_requires_grad(true);
  p.psi = kaiming_uniform({di, gate_ch}, di, rng).set_requires_grad(true);
  p.b_psi = Tensor::zeros({gate_ch}).set_requires_grad(true);
  return p;
}

} // namespace

std::pair<Tensor, Tensor> context_formulation(const Tensor& R, const ContextParams& p) {
  require_depth(R, p.w_c.dim(0), "context_formulation");
  int h = R.dim(0), w = R.dim(1);
  Tensor scores = ops::pointwise_conv(R, p.w_c, Tensor{});
  Tensor map = ops::reshape(ops::softmax(ops::reshape(scores, {h * w})), {h, w});
  Tensor context = ops::weighted_spatial_sum(R, map);
  return {map, context};
}

Tensor channel_correlation(const Tensor& context, const ContextParams& p,
                           bool ln_before_relu) {
  if (context.rank() != 1 || context.dim(0) != p.w_t1.dim(0)) {
    throw DimensionError("channel_correlation: context " + shape_str(context.shape()) +
                         " vs bottleneck in-depth " + std::to_string(p.w_t1.dim(0)));
  }
  Tensor delta = ops::dense(context, p.w_t1, Tensor{});
  Tensor theta = ln_before_relu
                     ? ops::relu(ops::layer_norm(delta, p.ln_scale, p.ln_shift))
                     : ops::layer_norm(ops::relu(delta), p.ln_scale, p.ln_shift);
  return ops::dense(theta, p.w_t2, Tensor{});
}

Tensor guide_fuse(const Tensor& R, const Tensor& transformed_context) {
  return ops::broadcast_add_channel(R, transformed_context);
}

std::pair<Tensor, Tensor> guided_gating(const Tensor& R, const Tensor& R_g,
                                        const GatingParams& p) {
  if (!shape_eq(R.shape(), R_g.shape())) {
    throw DimensionError("guided_gating: R " + shape_str(R.shape()) + " vs R_g " +
                         shape_str(R_g.shape()));
  }
  require_depth(R, p.w_x.dim(0), "guided_gating");
  Tensor lin = ops::add(ops::pointwise_conv(R, p.w_x, p.b_xg),
                        ops::pointwise_conv(R_g, p.w_g, Tensor{}));
  Tensor r_l = ops::relu(lin);
  Tensor gate = ops::sigmoid(ops::pointwise_conv(r_l, p.psi, p.b_psi));
  Tensor out = ops::mul_gate(R, gate);
  return {gate, out};
}

AttentionArtifacts gcg_forward(const Tensor& R, const GcgParams& p, bool ln_before_relu) {
  AttentionArtifacts art;
  auto [map, context] = context_formulation(R, p.context);
  art.spatial_map = map;
  art.context = context;
  art.transformed_context = channel_correlation(context, p.context, ln_before_relu);
  Tensor r_g = guide_fuse(R, art.transformed_context);
  auto [gate, out] = guided_gating(R, r_g, p.gating);
  art.gate = gate;
  art.output = out;
  return art;
}

AttentionBlock::AttentionBlock(const AttentionConfig& config, Rng& rng) : cfg_(config) {
  cfg_.validate();
  int d = cfg_.depth;
  int k = cfg_.bottleneck_k();
  switch (cfg_.kind) {
    case AttentionKind::none:
      break;
    case AttentionKind::spatial:
      spatial_w_ = kaiming_uniform({d, 1}, d, rng).set_requires_grad(true);
      spatial_b_ = Tensor::zeros({1}).set_requires_grad(true);
      break;
    case AttentionKind::channel_se:
      se_w1_ = kaiming_uniform({d, k}, d, rng).set_requires_grad(true);
      se_b1_ = Tensor::zeros({k}).set_requires_grad(true);
      se_w2_ = kaiming_uniform({k, d}, k, rng).set_requires_grad(true);
      se_b2_ = Tensor::zeros({d}).set_requires_grad(true);
      break;
    case AttentionKind::global_context:
      gcg_.context = init_context(d, k, rng);
      break;
    case AttentionKind::gated:
      gcg_.gating = init_gating(d, cfg_.gating_width(), cfg_.gate_channels(), rng);
      break;
    case AttentionKind::gcg:
      gcg_.context = init_context(d, k, rng);
      gcg_.gating = init_gating(d, cfg_.gating_width(), cfg_.gate_channels(), rng);
      break;
  }
}

Tensor AttentionBlock::forward(const Tensor& R, AttentionArtifacts* artifacts) const {
  if (cfg_.kind != AttentionKind::none) require_depth(R, cfg_.depth, "attention forward");
  switch (cfg_.kind) {
    case AttentionKind::none:
      return R;
    case AttentionKind::spatial: {
      Tensor gate = ops::sigmoid(ops::pointwise_conv(R, spatial_w_, spatial_b_));
      return ops::mul_gate(R, gate);
    }
    case AttentionKind::channel_se: {
      Tensor squeezed = ops::spatial_mean(R);
      Tensor hidden = ops::relu(ops::dense(squeezed, se_w1_, se_b1_));
      Tensor excite = ops::sigmoid(ops::dense(hidden, se_w2_, se_b2_));
      return ops::channel_scale(R, excite);
    }
    case AttentionKind::global_context: {
      auto [map, context] = context_formulation(R, gcg_.context);
      Tensor tc = channel_correlation(context, gcg_.context, cfg_.ln_before_relu);
      return guide_fuse(R, tc);
    }
    case AttentionKind::gated: {
      auto [gate, out] = guided_gating(R, R, gcg_.gating);
      return out;
    }
    case AttentionKind::gcg: {
      AttentionArtifacts art = gcg_forward(R, gcg_, cfg_.ln_before_relu);
      if (artifacts) *artifacts = art;
      return art.output;
    }
  }
  throw ContractError("unreachable attention kind");
}

std::vector<Parameter> AttentionBlock::parameters() const {
  std::vector<Parameter> out;
  auto add = [&out](const char* name, ParamKind kind, const Tensor& t) {
    out.push_back({std::string("attention.") + name, kind, t});
  };
  switch (cfg_.kind) {
    case AttentionKind::none:
      break;
    case AttentionKind::spatial:
      add("spatial.w", ParamKind::weight, spatial_w_);
      add("spatial.b", ParamKind::bias, spatial_b_);
      break;
    case AttentionKind::channel_se:
      add("se.w1", ParamKind::weight, se_w1_);
      add("se.b1", ParamKind::bias, se_b1_);
      add("se.w2", ParamKind::weight, se_w2_);
      add("se.b2", ParamKind::bias, se_b2_);
      break;
    case AttentionKind::global_context:
      add("context.w_c", ParamKind::weight, gcg_.context.w_c);
      add("context.w_t1", ParamKind::weight, gcg_.context.w_t1);
      add("context.w_t2", ParamKind::weight, gcg_.context.w_t2);
      add("context.ln_scale", ParamKind::weight, gcg_.context.ln_scale);
      add("context.ln_shift", ParamKind::bias, gcg_.context.ln_shift);
      break;
    case AttentionKind::gated:
      add("gate.w_x", ParamKind::weight, gcg_.gating.w_x);
      add("gate.w_g", ParamKind::weight, gcg_.gating.w_g);
      add("gate.b_xg", ParamKind::bias, gcg_.gating.b_xg);
      add("gate.psi", ParamKind::weight, gcg_.gating.psi);
      add("gate.b_psi", ParamKind::bias, gcg_.gating.b_psi);
      break;
    case AttentionKind::gcg:
      add("context.w_c", ParamKind::weight, gcg_.context.w_c);
      add("context.w_t1", ParamKind::weight, gcg_.context.w_t1);
      add("context.w_t2", ParamKind::weight, gcg_.context.w_t2);
      add("context.ln_scale", ParamKind::weight, gcg_.context.ln_scale);
      add("context.ln_shift", ParamKind::bias, gcg_.context.ln_shift);
      add("gate.w_x", ParamKind::weight, gcg_.gating.w_x);
      add("gate.w_g", ParamKind::weight, gcg_.gating.w_g);
      add("gate.b_xg", ParamKind::bias, gcg_.gating.b_xg);
      add("gate.psi", ParamKind::weight, gcg_.gating.psi);
      add("gate.b_psi", ParamKind::bias, gcg_.gating.b_psi);
      break;
  }
  return out;
}

} // namespace gcg
