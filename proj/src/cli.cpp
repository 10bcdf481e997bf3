#include "gcg/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gcg/dataset.hpp"
#include "gcg/errors.hpp"
#include "gcg/heatmap.hpp"
#include "gcg/metrics.hpp"
#include "gcg/model.hpp"
#include "gcg/train.hpp"

namespace fs = std::filesystem;

namespace gcg {
namespace {

using nlohmann::json;

json load_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [key, val] : j.items()) {
    (void)val;
    if (key != "model" && key != "train" && key != "data") {
      throw ConfigError("unknown config section '" + key + "' (expected model, train, data)");
    }
  }
  return j;
}

ModelConfig model_cfg_from(const json& file_j) {
  if (!file_j.contains("model")) return ModelConfig{};
  ModelConfig mc = config_from_json_string(file_j["model"].dump());
  // convenience: a custom backbone implies its own feature depth
  if (!file_j["model"].contains("feature_depth") && !mc.backbone_channels.empty()) {
    mc.feature_depth = mc.backbone_channels.back();
  }
  return mc;
}

TrainConfig train_cfg_from(const json& file_j) {
  if (!file_j.contains("train")) return TrainConfig{};
  return train_config_from_json_string(file_j["train"].dump());
}

SyntheticSpec data_spec_from(const json& file_j) {
  if (!file_j.contains("data")) return SyntheticSpec{};
  return synthetic_spec_from_json_string(file_j["data"].dump());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!text.empty() && text.back() != '\n') os << "\n";
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

/// Fits model input / class count to the dataset unless the config file
/// pinned them explicitly.
void adapt_model_to_data(ModelConfig& mc, const json& file_j, const SplitDataset& ds) {
  bool input_explicit = file_j.contains("model") && file_j["model"].contains("input");
  bool classes_explicit = file_j.contains("model") && file_j["model"].contains("num_classes");
  const std::vector<Sample>* any = nullptr;
  if (!ds.train.empty())
    any = &ds.train;
  else if (!ds.val.empty())
    any = &ds.val;
  else if (!ds.test.empty())
    any = &ds.test;
  if (!input_explicit && any) {
    const Shape& s = (*any)[0].image.shape();
    mc.input_h = s[0];
    mc.input_w = s[1];
    mc.input_c = s[2];
  }
  if (!classes_explicit) mc.num_classes = std::max(2, ds.num_classes);
  if (mc.num_classes < ds.num_classes) {
    throw ConfigError("model num_classes " + std::to_string(mc.num_classes) +
                      " is smaller than the dataset's " + std::to_string(ds.num_classes));
  }
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string fmt6(double v) {
  if (v == 0.0) v = 0.0; // never print "-0.000000"
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct ComparisonRow {
  std::string approach;
  double accuracy, precision, recall, f1, kappa, auc;
};

void write_comparison(const std::vector<ComparisonRow>& rows, const std::string& out_dir) {
  std::string csv = "approach,accuracy,precision,recall,f1,kappa,auc\n";
  json jrows = json::array();
  for (const ComparisonRow& r : rows) {
    csv += r.approach + "," + fmt6(r.accuracy) + "," + fmt6(r.precision) + "," +
           fmt6(r.recall) + "," + fmt6(r.f1) + "," + fmt6(r.kappa) + "," + fmt6(r.auc) + "\n";
    jrows.push_back(json{{"approach", r.approach},
                         {"accuracy", r.accuracy},
                         {"precision", r.precision},
                         {"recall", r.recall},
                         {"f1", r.f1},
                         {"kappa", r.kappa},
                         {"auc", r.auc}});
  }
  write_text_file((fs::path(out_dir) / "comparison.csv").string(), csv);
  write_text_file((fs::path(out_dir) / "comparison.json").string(), jrows.dump(2));
}

} // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"guided context gating: synthetic-retina classifier toolkit"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic lesion dataset");
  struct {
    std::string out, config, preset;
    uint64_t seed = 0;
    int classes = 0, image_size = 0;
    std::vector<int> samples;
    double train_frac = -1, val_frac = -1;
  } g;
  gen->add_option("--out", g.out, "Output directory")->required();
  auto* g_seed = gen->add_option("--seed", g.seed, "Master seed");
  gen->add_option("--config", g.config, "JSON config file (data section)");
  gen->add_option("--classes", g.classes, "Number of classes");
  gen->add_option("--samples-per-class", g.samples, "Per-class sample counts");
  gen->add_option("--image-size", g.image_size, "Square image size in pixels");
  gen->add_option("--train-frac", g.train_frac, "Training split fraction");
  gen->add_option("--val-frac", g.val_frac, "Validation split fraction");
  gen->add_option("--preset", g.preset, "Spec preset: imbalanced7");
  gen->callback([&] {
    json cfg = load_config_json(g.config);
    SyntheticSpec spec;
    if (!g.preset.empty()) {
      if (g.preset != "imbalanced7") throw ConfigError("unknown preset '" + g.preset + "'");
      spec = SyntheticSpec::imbalanced7();
    } else {
      spec = data_spec_from(cfg);
    }
    if (g.classes > 0) {
      spec.num_classes = g.classes;
      spec.samples_per_class.clear();
      spec.grammar.clear();
    }
    if (!g.samples.empty()) spec.samples_per_class = g.samples;
    if (g.image_size > 0) spec.image_size = g.image_size;
    if (g.train_frac >= 0) spec.train_fraction = g.train_frac;
    if (g.val_frac >= 0) spec.val_fraction = g.val_frac;
    if (g_seed->count() > 0) spec.seed = g.seed;
    auto rows = generate_dataset(spec, g.out);
    write_text_file((fs::path(g.out) / "spec.json").string(),
                    synthetic_spec_to_json_string(spec));
    std::cout << "wrote " << rows.size() << " images + manifest.csv to " << g.out << "\n";
  });

  // ---- train ----
  auto* tr = app.add_subcommand("train", "Train a model on a manifest dataset");
  struct {
    std::string data, out, config, attention;
    uint64_t seed = 0;
    int epochs = 0, batch_size = 0;
    double lr = 0;
  } t;
  tr->add_option("--data", t.data, "Dataset directory or manifest.csv path")->required();
  tr->add_option("--out", t.out, "Output directory (checkpoint, logs)")->required();
  auto* t_seed = tr->add_option("--seed", t.seed, "Master seed (overrides config)");
  tr->add_option("--config", t.config, "JSON config file (model/train sections)");
  tr->add_option("--attention", t.attention,
                 "Attention kind: none|spatial|channel_se|global_context|gated|gcg");
  auto* t_epochs = tr->add_option("--epochs", t.epochs, "Epoch count override");
  auto* t_batch = tr->add_option("--batch-size", t.batch_size, "Batch size override");
  auto* t_lr = tr->add_option("--lr", t.lr, "Learning rate override");
  tr->callback([&] {
    json cfg = load_config_json(t.config);
    TrainConfig tc = train_cfg_from(cfg);
    if (t_seed->count() > 0) tc.seed = t.seed;
    if (t_epochs->count() > 0) tc.epochs = t.epochs;
    if (t_batch->count() > 0) tc.batch_size = t.batch_size;
    if (t_lr->count() > 0) tc.learning_rate = t.lr;
    SplitDataset ds = load_dataset(t.data);
    ModelConfig mc = model_cfg_from(cfg);
    adapt_model_to_data(mc, cfg, ds);
    if (!t.attention.empty()) mc.attention = attention_kind_from_string(t.attention);
    if (ds.train.empty()) throw DataError("manifest has no train rows");
    if (ds.val.empty()) ds.val = carve_holdout(ds.train, tc.holdout_fraction, tc.seed);
    ensure_dir(t.out);
    Model model(mc, tc.seed);
    std::string ckpt = (fs::path(t.out) / "best.ckpt").string();
    std::ofstream log_os((fs::path(t.out) / "log.jsonl").string(), std::ios::trunc);
    if (!log_os) throw IoError("cannot open training log in '" + t.out + "'");
    TrainResult res = fit(model, ds.train, ds.val, tc, ckpt, &log_os);
    json summary{{"best_val_accuracy", res.best_val_accuracy},
                 {"best_epoch", res.best_epoch},
                 {"epochs_run", res.log.size()},
                 {"train_samples", ds.train.size()},
                 {"val_samples", ds.val.size()},
                 {"checkpoint", "best.ckpt"},
                 {"model", json::parse(config_to_json_string(mc))},
                 {"train", json::parse(train_config_to_json_string(tc))}};
    write_text_file((fs::path(t.out) / "summary.json").string(), summary.dump(2));
    std::cout << "best val accuracy " << fmt6(res.best_val_accuracy) << " at epoch "
              << res.best_epoch << "; checkpoint " << ckpt << "\n";
  });

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  struct {
    std::string checkpoint, data, split = "auto", out, config;
    uint64_t seed = 0;
  } e;
  ev->add_option("--checkpoint", e.checkpoint, "Checkpoint path")->required();
  ev->add_option("--data", e.data, "Dataset directory or manifest.csv path")->required();
  ev->add_option("--split", e.split, "Split to score: train|val|test|auto");
  ev->add_option("--out", e.out, "Metrics JSON output path (default: stdout)");
  ev->add_option("--seed", e.seed, "Accepted for interface parity; unused");
  ev->add_option("--config", e.config, "Accepted for interface parity; unused");
  ev->callback([&] {
    Model model = load_checkpoint(e.checkpoint);
    SplitDataset ds = load_dataset(e.data);
    const std::vector<Sample>* chosen = nullptr;
    std::string split = e.split;
    if (split == "auto") split = !ds.test.empty() ? "test" : "val";
    if (split == "train")
      chosen = &ds.train;
    else if (split == "val")
      chosen = &ds.val;
    else if (split == "test")
      chosen = &ds.test;
    else
      throw ConfigError("unknown split '" + e.split + "'");
    if (chosen->empty()) throw DataError("split '" + split + "' has no samples");
    for (const Sample& s : *chosen) {
      if (s.label >= model.config().num_classes) {
        throw DataError("sample label " + std::to_string(s.label) +
                        " outside the checkpoint's " +
                        std::to_string(model.config().num_classes) + " classes");
      }
    }
    EvalStats stats = evaluate(model, *chosen);
    MetricsReport rep = compute_metrics(stats.y_true, stats.y_prob,
                                        model.config().num_classes);
    std::string js = rep.to_json_string();
    if (!e.out.empty()) {
      if (fs::path(e.out).has_parent_path()) ensure_dir(fs::path(e.out).parent_path().string());
      write_text_file(e.out, js);
      std::cout << "split " << split << ": accuracy " << fmt6(rep.overall_accuracy)
                << ", kappa " << fmt6(rep.kappa) << "; report " << e.out << "\n";
    } else {
      std::cout << js << "\n";
    }
  });

  // ---- explain ----
  auto* ex = app.add_subcommand("explain", "Export attention heatmaps for images");
  struct {
    std::string checkpoint, out, channel = "gate", config;
    std::vector<std::string> images;
    uint64_t seed = 0;
  } x;
  ex->add_option("--checkpoint", x.checkpoint, "Checkpoint path (attention must be gcg)")
      ->required();
  ex->add_option("--image", x.images, "Input image (repeatable)")->required();
  ex->add_option("--out", x.out, "Output directory")->required();
  ex->add_option("--channel", x.channel, "Artifact to render: gate|spatial_map");
  ex->add_option("--seed", x.seed, "Accepted for interface parity; unused");
  ex->add_option("--config", x.config, "Accepted for interface parity; unused");
  ex->callback([&] {
    HeatmapChannel channel = heatmap_channel_from_string(x.channel);
    Model model = load_checkpoint(x.checkpoint);
    if (model.attention().config().kind != AttentionKind::gcg) {
      throw ConfigError("explain needs a checkpoint whose attention kind is 'gcg', got '" +
                        to_string(model.attention().config().kind) + "'");
    }
    model.set_mode(Mode::eval);
    ensure_dir(x.out);
    for (const std::string& img_path : x.images) {
      Image img = read_pnm(img_path);
      AttentionArtifacts art;
      model.forward(image_to_tensor(img), &art);
      HeatmapPair hp = render_heatmaps(art, img, channel);
      std::string stem = fs::path(img_path).stem().string();
      std::string gray_path =
          (fs::path(x.out) / (stem + "." + to_string(channel) + ".pgm")).string();
      std::string overlay_path = (fs::path(x.out) / (stem + ".overlay.ppm")).string();
      write_pnm(hp.gray, gray_path);
      write_pnm(hp.overlay, overlay_path);
      std::cout << gray_path << "\n" << overlay_path << "\n";
    }
  });

  // ---- compare ----
  auto* cp = app.add_subcommand("compare", "Train and score every attention variant");
  struct {
    std::string data, out, config;
    std::string variants = "none,spatial,channel_se,global_context,gated,gcg";
    uint64_t seed = 0;
    int epochs = 0;
  } c;
  cp->add_option("--data", c.data, "Dataset directory or manifest.csv path")->required();
  cp->add_option("--out", c.out, "Output directory")->required();
  cp->add_option("--variants", c.variants, "Comma-separated attention kinds");
  auto* c_seed = cp->add_option("--seed", c.seed, "Master seed (overrides config)");
  cp->add_option("--config", c.config, "JSON config file (model/train sections)");
  auto* c_epochs = cp->add_option("--epochs", c.epochs, "Epochs per variant (default 5)");
  cp->callback([&] {
    json cfg = load_config_json(c.config);
    TrainConfig tc = train_cfg_from(cfg);
    if (!cfg.contains("train") || !cfg["train"].contains("epochs")) tc.epochs = 5;
    if (c_seed->count() > 0) tc.seed = c.seed;
    if (c_epochs->count() > 0) tc.epochs = c.epochs;
    std::vector<std::string> kinds = split_csv_list(c.variants);
    if (kinds.empty()) throw ConfigError("no attention variants requested");
    SplitDataset ds = load_dataset(c.data);
    ModelConfig mc = model_cfg_from(cfg);
    adapt_model_to_data(mc, cfg, ds);
    if (ds.train.empty()) throw DataError("manifest has no train rows");
    if (ds.val.empty()) ds.val = carve_holdout(ds.train, tc.holdout_fraction, tc.seed);
    const std::vector<Sample>& score_set = !ds.test.empty() ? ds.test : ds.val;
    ensure_dir(c.out);
    std::vector<ComparisonRow> rows;
    for (const std::string& kind_s : kinds) {
      AttentionKind kind = attention_kind_from_string(kind_s);
      ModelConfig vmc = mc;
      vmc.attention = kind;
      Model model(vmc, tc.seed);
      fit(model, ds.train, ds.val, tc);
      EvalStats stats = evaluate(model, score_set);
      MetricsReport rep = compute_metrics(stats.y_true, stats.y_prob, vmc.num_classes);
      rows.push_back({to_string(kind), rep.overall_accuracy, rep.macro.precision,
                      rep.macro.recall, rep.macro.f1, rep.kappa, rep.macro.auc});
      std::cout << to_string(kind) << ": accuracy " << fmt6(rep.overall_accuracy) << "\n";
    }
    write_comparison(rows, c.out);
    std::cout << "comparison table written to " << c.out << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : 1;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return 3;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 0;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("gcg");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const std::string& s : full) argv.push_back(s.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

} // namespace gcg
