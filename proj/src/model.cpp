#include "gcg/model.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "gcg/ops.hpp"
#include "json.hpp"

namespace gcg {

using nlohmann::json;

void ModelConfig::validate() const {
  if (input_h < 1 || input_w < 1 || input_c < 1) {
    throw ConfigError("model input size must be positive");
  }
  if (backbone_channels.empty()) throw ConfigError("backbone_channels must be non-empty");
  for (int c : backbone_channels) {
    if (c < 1) throw ConfigError("backbone channel counts must be >= 1");
  }
  if (feature_depth != backbone_channels.back()) {
    throw ConfigError("feature_depth " + std::to_string(feature_depth) +
                      " must equal the last backbone channel count " +
                      std::to_string(backbone_channels.back()));
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  for (int w : head_widths) {
    if (w < 1) throw ConfigError("head widths must be >= 1");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("dropout_rate must be in [0,1)");
  }
  if (bn_momentum < 0.0 || bn_momentum >= 1.0) {
    throw ConfigError("bn_momentum must be in [0,1)");
  }
  auto [gh, gw] = feature_grid();
  if (gh < 2 || gw < 2) {
    throw ConfigError("backbone must leave a feature grid of at least 2x2, got " +
                      std::to_string(gh) + "x" + std::to_string(gw));
  }
  attention_config().validate();
}

std::pair<int, int> ModelConfig::feature_grid() const {
  int h = input_h, w = input_w;
  for (size_t i = 0; i < backbone_channels.size(); ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return {h, w};
}

int ModelConfig::bridge_width() const {
  if (!flatten_bridge) return feature_depth;
  auto [gh, gw] = feature_grid();
  return gh * gw * feature_depth;
}

AttentionConfig ModelConfig::attention_config() const {
  AttentionConfig a;
  a.kind = attention;
  a.depth = feature_depth;
  a.reduction = gcg_reduction;
  a.d_int = gcg_d_int;
  a.ln_before_relu = ln_before_relu;
  a.per_channel_gate = per_channel_gate;
  return a;
}

namespace {

json model_config_to_json(const ModelConfig& c) {
  return json{{"input", {c.input_h, c.input_w, c.input_c}},
              {"backbone_channels", c.backbone_channels},
              {"feature_depth", c.feature_depth},
              {"attention", to_string(c.attention)},
              {"gcg",
               {{"reduction", c.gcg_reduction},
                {"d_int", c.gcg_d_int},
                {"ln_before_relu", c.ln_before_relu},
                {"per_channel_gate", c.per_channel_gate}}},
              {"head_widths", c.head_widths},
              {"dropout_rate", c.dropout_rate},
              {"num_classes", c.num_classes},
              {"flatten_bridge", c.flatten_bridge},
              {"bn_momentum", c.bn_momentum}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, val] : j.items()) {
    if (key == "input") {
      if (!val.is_array() || val.size() != 3) {
        throw ConfigError("model config 'input' must be [H,W,C]");
      }
      c.input_h = val[0].get<int>();
      c.input_w = val[1].get<int>();
      c.input_c = val[2].get<int>();
    } else if (key == "backbone_channels") {
      c.backbone_channels = val.get<std::vector<int>>();
    } else if (key == "feature_depth") {
      c.feature_depth = val.get<int>();
    } else if (key == "attention") {
      c.attention = attention_kind_from_string(val.get<std::string>());
    } else if (key == "gcg") {
      for (const auto& [gk, gv] : val.items()) {
        if (gk == "reduction")
          c.gcg_reduction = gv.get<int>();
        else if (gk == "d_int")
          c.gcg_d_int = gv.get<int>();
        else if (gk == "ln_before_relu")
          c.ln_before_relu = gv.get<bool>();
        else if (gk == "per_channel_gate")
          c.per_channel_gate = gv.get<bool>();
        else
          throw ConfigError("unknown model config key 'gcg." + gk + "'");
      }
    } else if (key == "head_widths") {
      c.head_widths = val.get<std::vector<int>>();
    } else if (key == "dropout_rate") {
      c.dropout_rate = val.get<double>();
    } else if (key == "num_classes") {
      c.num_classes = val.get<int>();
    } else if (key == "flatten_bridge") {
      c.flatten_bridge = val.get<bool>();
    } else if (key == "bn_momentum") {
      c.bn_momentum = val.get<double>();
    } else {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  return c;
}

} // namespace

std::string config_to_json_string(const ModelConfig& cfg) {
  return model_config_to_json(cfg).dump();
}

ModelConfig config_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  try {
    return model_config_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config value: ") + e.what());
  }
}

Model::Model(const ModelConfig& cfg, uint64_t seed)
    : cfg_(cfg), dropout_rng_(derive_seed(seed, "dropout")) {
  cfg_.validate();
  // separate init streams so models differing only in attention kind
  // still share bit-identical backbone and head initialization
  Rng backbone_rng(derive_seed(seed, "init.backbone"));
  Rng attention_rng(derive_seed(seed, "init.attention"));
  Rng head_rng(derive_seed(seed, "init.head"));
  int in_c = cfg_.input_c;
  for (int out_c : cfg_.backbone_channels) {
    ConvStage s;
    s.w = kaiming_uniform({3, 3, in_c, out_c}, 9 * in_c, backbone_rng).set_requires_grad(true);
    s.b = Tensor::zeros({out_c}).set_requires_grad(true);
    s.bn_scale = Tensor::full({out_c}, 1.0).set_requires_grad(true);
    s.bn_shift = Tensor::zeros({out_c}).set_requires_grad(true);
    s.bn_mean = Tensor::zeros({out_c});
    s.bn_var = Tensor::full({out_c}, 1.0);
    stages_.push_back(std::move(s));
    in_c = out_c;
  }
  attention_ = AttentionBlock(cfg_.attention_config(), attention_rng);
  int in_w = cfg_.bridge_width();
  for (int width : cfg_.head_widths) {
    DenseBlock b;
    b.w = kaiming_uniform({in_w, width}, in_w, head_rng).set_requires_grad(true);
    b.b = Tensor::zeros({width}).set_requires_grad(true);
    b.bn_scale = Tensor::full({width}, 1.0).set_requires_grad(true);
    b.bn_shift = Tensor::zeros({width}).set_requires_grad(true);
    b.bn_mean = Tensor::zeros({width});
    b.bn_var = Tensor::full({width}, 1.0);
    head_blocks_.push_back(std::move(b));
    in_w = width;
  }
  out_w_ = kaiming_uniform({in_w, cfg_.num_classes}, in_w, head_rng).set_requires_grad(true);
  out_b_ = Tensor::zeros({cfg_.num_classes}).set_requires_grad(true);

  for (size_t i = 0; i < stages_.size(); ++i) {
    std::string p = "backbone." + std::to_string(i) + ".";
    params_.push_back({p + "conv.w", ParamKind::weight, stages_[i].w});
    params_.push_back({p + "conv.b", ParamKind::bias, stages_[i].b});
    params_.push_back({p + "bn.scale", ParamKind::weight, stages_[i].bn_scale});
    params_.push_back({p + "bn.shift", ParamKind::bias, stages_[i].bn_shift});
    buffers_.push_back({p + "bn.mean", ParamKind::bias, stages_[i].bn_mean});
    buffers_.push_back({p + "bn.var", ParamKind::bias, stages_[i].bn_var});
  }
  for (Parameter& ap : attention_.parameters()) params_.push_back(ap);
  for (size_t i = 0; i < head_blocks_.size(); ++i) {
    std::string p = "head." + std::to_string(i) + ".";
    params_.push_back({p + "w", ParamKind::weight, head_blocks_[i].w});
    params_.push_back({p + "b", ParamKind::bias, head_blocks_[i].b});
    params_.push_back({p + "bn.scale", ParamKind::weight, head_blocks_[i].bn_scale});
    params_.push_back({p + "bn.shift", ParamKind::bias, head_blocks_[i].bn_shift});
    buffers_.push_back({p + "bn.mean", ParamKind::bias, head_blocks_[i].bn_mean});
    buffers_.push_back({p + "bn.var", ParamKind::bias, head_blocks_[i].bn_var});
  }
  params_.push_back({"head.out.w", ParamKind::weight, out_w_});
  params_.push_back({"head.out.b", ParamKind::bias, out_b_});
}

std::vector<Tensor> Model::backbone_batch(const std::vector<Tensor>& images) {
  Shape expect = {cfg_.input_h, cfg_.input_w, cfg_.input_c};
  for (const Tensor& img : images) {
    if (!shape_eq(img.shape(), expect)) {
      throw DimensionError("model expects input " + shape_str(expect) + ", got " +
                           shape_str(img.shape()));
    }
  }
  int n = static_cast<int>(images.size());
  int h = cfg_.input_h, w = cfg_.input_w;
  std::vector<Tensor> xs = images;
  for (ConvStage& s : stages_) {
    int co = s.w.dim(3);
    std::vector<Tensor> flat;
    flat.reserve(xs.size());
    for (Tensor& x : xs) flat.push_back(ops::reshape(ops::conv3x3(x, s.w, s.b), {h * w * co}));
    // normalize over every image's positions, not per image: otherwise the
    // per-image statistics leak content and eval running stats match nothing
    Tensor joint = ops::reshape(ops::stack_rows(flat), {n * h * w, co});
    joint = ops::batch_norm(joint, s.bn_scale, s.bn_shift, s.bn_mean, s.bn_var, training(),
                            cfg_.bn_momentum);
    joint = ops::relu(joint);
    for (int b = 0; b < n; ++b) {
      Tensor xi = ops::reshape(ops::slice_rows(joint, b * h * w, h * w), {h, w, co});
      xs[b] = ops::avg_pool2(xi);
    }
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return xs;
}

Tensor Model::attend_and_bridge(const Tensor& fmap, AttentionArtifacts* artifacts) {
  Tensor x = attention_.forward(fmap, artifacts);
  if (cfg_.flatten_bridge) return ops::reshape(x, {cfg_.bridge_width()});
  return ops::spatial_mean(x);
}

Tensor Model::features(const Tensor& image, AttentionArtifacts* artifacts) {
  return attend_and_bridge(backbone_batch({image})[0], artifacts);
}

Tensor Model::dense_block_forward(DenseBlock& blk, const Tensor& x) {
  Tensor y = ops::dense(x, blk.w, blk.b);
  y = ops::batch_norm(y, blk.bn_scale, blk.bn_shift, blk.bn_mean, blk.bn_var, training(),
                      cfg_.bn_momentum);
  y = ops::relu(y);
  if (training() && cfg_.dropout_rate > 0.0 && !force_keep_all_) {
    y = ops::dropout(y, cfg_.dropout_rate, dropout_rng_, true);
  }
  return y;
}

Tensor Model::head(const Tensor& feats) {
  Tensor x = feats;
  for (DenseBlock& blk : head_blocks_) x = dense_block_forward(blk, x);
  Tensor logits = ops::dense(x, out_w_, out_b_);
  return ops::softmax(logits);
}

Tensor Model::forward(const Tensor& image, AttentionArtifacts* artifacts) {
  return head(features(image, artifacts));
}

Tensor Model::forward_batch(const std::vector<Tensor>& images) {
  if (images.empty()) throw ContractError("forward_batch: empty batch");
  std::vector<Tensor> maps = backbone_batch(images);
  std::vector<Tensor> feats;
  feats.reserve(maps.size());
  for (Tensor& m : maps) feats.push_back(attend_and_bridge(m, nullptr));
  return head(ops::stack_rows(feats));
}

void Model::zero_grads() {
  for (Parameter& p : params_) p.value.zero_grad();
}

namespace {

constexpr char kMagic[4] = {'G', 'C', 'G', 'M'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

void put_f32(std::ostream& os, double v) {
  float f = static_cast<float>(v);
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

struct CheckpointReader {
  std::ifstream is;
  std::string path;
  size_t offset = 0;

  void read_bytes(char* dst, size_t n, const char* what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) {
      throw IoError("checkpoint '" + path + "': truncated reading " + what + " at byte " +
                    std::to_string(offset));
    }
    offset += n;
  }

  uint32_t read_u32(const char* what) {
    unsigned char b[4];
    read_bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }

  double read_f32(const char* what) {
    uint32_t bits = read_u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }

  bool at_eof() {
    return is.peek() == std::char_traits<char>::eof();
  }
};

void write_record(std::ostream& os, const std::string& name, const Tensor& t) {
  put_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape()) put_u32(os, static_cast<uint32_t>(d));
  for (double v : t.data()) put_f32(os, v);
}

} // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint '" + path + "' for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  std::string cfg = config_to_json_string(model.config());
  put_u32(os, static_cast<uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  for (const Parameter& p : model.parameters()) write_record(os, p.name, p.value);
  for (const Parameter& b : model.buffers()) write_record(os, b.name, b.value);
  os.flush();
  if (!os) throw IoError("write failed for checkpoint '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
  CheckpointReader r;
  r.path = path;
  r.is.open(path, std::ios::binary);
  if (!r.is) throw IoError("cannot open checkpoint '" + path + "'");

  char magic[4];
  r.read_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("checkpoint '" + path + "': bad magic at byte 0");
  }
  uint32_t version = r.read_u32("version");
  if (version != kVersion) {
    throw CheckpointVersionError("checkpoint '" + path + "' has format version " +
                                 std::to_string(version) + ", expected " +
                                 std::to_string(kVersion));
  }
  uint32_t cfg_len = r.read_u32("config length");
  std::string cfg_text(cfg_len, '\0');
  r.read_bytes(cfg_text.data(), cfg_len, "config blob");
  Model model(config_from_json_string(cfg_text), 0);

  std::vector<Parameter*> slots;
  for (Parameter& p : model.parameters()) slots.push_back(&p);
  for (Parameter& b : model.buffers()) slots.push_back(&b);
  std::set<std::string> filled;

  while (!r.at_eof()) {
    size_t rec_start = r.offset;
    uint32_t name_len = r.read_u32("record name length");
    std::string name(name_len, '\0');
    r.read_bytes(name.data(), name_len, "record name");
    uint32_t rank = r.read_u32("record rank");
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<int>(r.read_u32("record dim")));
    }
    Parameter* slot = nullptr;
    for (Parameter* s : slots) {
      if (s->name == name) {
        slot = s;
        break;
      }
    }
    if (!slot) {
      throw IoError("checkpoint '" + path + "': unknown record '" + name + "' at byte " +
                    std::to_string(rec_start));
    }
    if (filled.count(name)) {
      throw IoError("checkpoint '" + path + "': duplicate record '" + name + "' at byte " +
                    std::to_string(rec_start));
    }
    if (!shape_eq(shape, slot->value.shape())) {
      throw IoError("checkpoint '" + path + "': record '" + name + "' has shape " +
                    shape_str(shape) + ", model expects " + shape_str(slot->value.shape()) +
                    " (byte " + std::to_string(rec_start) + ")");
    }
    auto& data = slot->value.mutable_data();
    for (size_t i = 0; i < data.size(); ++i) data[i] = r.read_f32("record data");
    filled.insert(name);
  }
  if (filled.size() != slots.size()) {
    throw IoError("checkpoint '" + path + "': only " + std::to_string(filled.size()) + " of " +
                  std::to_string(slots.size()) + " tensors present (truncated file?)");
  }
  return model;
}

} // namespace gcg
