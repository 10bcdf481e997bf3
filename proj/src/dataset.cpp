#include "gcg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcg/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace gcg {

using nlohmann::json;

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic spec needs at least 2 classes");
  if (image_size < 16) throw ConfigError("synthetic image_size must be >= 16");
  if (!samples_per_class.empty() &&
      static_cast<int>(samples_per_class.size()) != num_classes) {
    throw ConfigError("samples_per_class must have one entry per class");
  }
  for (int n : samples_per_class) {
    if (n < 0) throw ConfigError("samples_per_class entries must be >= 0");
  }
  if (train_fraction <= 0.0 || train_fraction > 1.0 || val_fraction < 0.0 ||
      train_fraction + val_fraction > 1.0 + 1e-9) {
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, train+val <= 1");
  }
  if (!grammar.empty() && static_cast<int>(grammar.size()) != num_classes) {
    throw ConfigError("lesion grammar must have one entry per class");
  }
}

std::vector<int> SyntheticSpec::resolved_counts() const {
  if (!samples_per_class.empty()) return samples_per_class;
  return std::vector<int>(num_classes, 100);
}

std::vector<LesionClassSpec> SyntheticSpec::resolved_grammar() const {
  if (!grammar.empty()) return grammar;
  return default_grammar(num_classes);
}

std::vector<LesionClassSpec> SyntheticSpec::default_grammar(int num_classes) {
  // Severity grows with the label; count ranges of adjacent classes never
  // overlap, so each class is identifiable from lesion load alone.
  std::vector<LesionClassSpec> g(num_classes);
  for (int i = 1; i < num_classes; ++i) {
    g[i].exudates_min = 3 * i - 1;
    g[i].exudates_max = 3 * i;
    g[i].dots_min = 2 * i - 1;
    g[i].dots_max = 2 * i;
    g[i].patches = i - 1;
  }
  return g;
}

SyntheticSpec SyntheticSpec::imbalanced7(int image_size) {
  SyntheticSpec s;
  s.num_classes = 7;
  s.image_size = image_size;
  const int full[7] = {187, 4, 80, 176, 108, 88, 114};
  for (int n : full) {
    s.samples_per_class.push_back(std::max(2, static_cast<int>(std::lround(n * 0.2))));
  }
  return s;
}

std::string synthetic_spec_to_json_string(const SyntheticSpec& spec) {
  json g = json::array();
  for (const LesionClassSpec& c : spec.resolved_grammar()) {
    g.push_back(json{{"exudates", {c.exudates_min, c.exudates_max}},
                     {"dots", {c.dots_min, c.dots_max}},
                     {"patches", c.patches}});
  }
  return json{{"num_classes", spec.num_classes},
              {"samples_per_class", spec.resolved_counts()},
              {"image_size", spec.image_size},
              {"train_fraction", spec.train_fraction},
              {"val_fraction", spec.val_fraction},
              {"seed", spec.seed},
              {"grammar", g}}
      .dump();
}

SyntheticSpec synthetic_spec_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("data spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("data spec must be a JSON object");
  SyntheticSpec s;
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "num_classes")
        s.num_classes = val.get<int>();
      else if (key == "samples_per_class")
        s.samples_per_class = val.get<std::vector<int>>();
      else if (key == "image_size")
        s.image_size = val.get<int>();
      else if (key == "train_fraction")
        s.train_fraction = val.get<double>();
      else if (key == "val_fraction")
        s.val_fraction = val.get<double>();
      else if (key == "seed")
        s.seed = val.get<uint64_t>();
      else if (key == "grammar") {
        for (const json& c : val) {
          LesionClassSpec l;
          l.exudates_min = c.at("exudates")[0].get<int>();
          l.exudates_max = c.at("exudates")[1].get<int>();
          l.dots_min = c.at("dots")[0].get<int>();
          l.dots_max = c.at("dots")[1].get<int>();
          l.patches = c.at("patches").get<int>();
          s.grammar.push_back(l);
        }
      } else {
        throw ConfigError("unknown data spec key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad data spec value: ") + e.what());
  }
  return s;
}

namespace {

unsigned char clamp_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)));
}

// soft-edged disc: 1px linear falloff keeps small lesions visible after pooling
void draw_disc(Image& img, double cx, double cy, double rad, const double rgb[3]) {
  int y0 = std::max(0, static_cast<int>(std::floor(cy - rad - 1)));
  int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + rad + 1)));
  int x0 = std::max(0, static_cast<int>(std::floor(cx - rad - 1)));
  int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + rad + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      double dx = x - cx, dy = y - cy;
      double dist = std::sqrt(dx * dx + dy * dy);
      double cov = std::min(1.0, std::max(0.0, rad + 0.5 - dist));
      if (cov <= 0.0) continue;
      for (int ch = 0; ch < 3; ++ch) {
        img.at(y, x, ch) = clamp_byte(cov * rgb[ch] + (1.0 - cov) * img.at(y, x, ch));
      }
    }
  }
}

struct FundusGeometry {
  double cx, cy, radius;
};

// Position strictly inside the disc, biased uniform over the area.
void sample_position(Rng& rng, const FundusGeometry& g, double margin, double& x, double& y) {
  double ang = rng.uniform(0.0, 6.283185307179586);
  double r = std::sqrt(rng.next_double()) * g.radius * margin;
  x = g.cx + r * std::cos(ang);
  y = g.cy + r * std::sin(ang);
}

} // namespace

Image render_synthetic_image(const SyntheticSpec& spec, int label, int index_in_class) {
  spec.validate();
  if (label < 0 || label >= spec.num_classes) throw ContractError("render: bad label");
  int s = spec.image_size;
  Rng rng(derive_seed(spec.seed,
                      "img:" + std::to_string(label) + ":" + std::to_string(index_in_class)));
  Image img = Image::blank(s, s, 3, 6);

  FundusGeometry geo;
  geo.cx = s / 2.0 + rng.int_range(-2, 2);
  geo.cy = s / 2.0 + rng.int_range(-2, 2);
  geo.radius = 0.45 * s * rng.uniform(0.95, 1.05);

  double base_r = 168 + rng.int_range(-15, 15);
  double base_g = 88 + rng.int_range(-12, 12);
  double base_b = 46 + rng.int_range(-10, 10);

  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      double dx = x - geo.cx, dy = y - geo.cy;
      double d2 = dx * dx + dy * dy;
      if (d2 > geo.radius * geo.radius) continue;
      double shade = 1.0 - 0.35 * (d2 / (geo.radius * geo.radius));
      double noise = rng.int_range(-5, 5);
      img.at(y, x, 0) = clamp_byte(base_r * shade + noise);
      img.at(y, x, 1) = clamp_byte(base_g * shade + noise * 0.6);
      img.at(y, x, 2) = clamp_byte(base_b * shade + noise * 0.4);
    }
  }

  // sparse dark vessels radiating from a jittered hub
  int vessels = rng.int_range(2, 4);
  for (int v = 0; v < vessels; ++v) {
    double ang = rng.uniform(0.0, 6.283185307179586);
    double px = geo.cx + rng.int_range(-3, 3);
    double py = geo.cy + rng.int_range(-3, 3);
    double len = geo.radius * rng.uniform(0.55, 0.9);
    for (double t = 0; t < len; t += 0.7) {
      ang += rng.uniform(-0.12, 0.12);
      px += 0.7 * std::cos(ang);
      py += 0.7 * std::sin(ang);
      int ix = static_cast<int>(std::lround(px));
      int iy = static_cast<int>(std::lround(py));
      if (ix < 0 || iy < 0 || ix >= s || iy >= s) break;
      double ddx = ix - geo.cx, ddy = iy - geo.cy;
      if (ddx * ddx + ddy * ddy > geo.radius * geo.radius) break;
      for (int ch = 0; ch < 3; ++ch) {
        img.at(iy, ix, ch) = static_cast<unsigned char>(img.at(iy, ix, ch) * 0.55);
      }
    }
  }

  LesionClassSpec g = spec.resolved_grammar()[label];

  // lesion sizes scale with the frame so the grammar survives downsampling
  int exudates = g.exudates_max > 0 ? rng.int_range(g.exudates_min, g.exudates_max) : 0;
  for (int i = 0; i < exudates; ++i) {
    double x, y;
    sample_position(rng, geo, 0.78, x, y);
    double rad = s * rng.uniform(0.035, 0.06);
    double rgb[3] = {232 + rng.int_range(-8, 8) * 1.0, 214 + rng.int_range(-10, 10) * 1.0,
                     128 + rng.int_range(-12, 12) * 1.0};
    draw_disc(img, x, y, rad, rgb);
  }

  int dots = g.dots_max > 0 ? rng.int_range(g.dots_min, g.dots_max) : 0;
  for (int i = 0; i < dots; ++i) {
    double x, y;
    sample_position(rng, geo, 0.82, x, y);
    double rad = s * rng.uniform(0.02, 0.032);
    double rgb[3] = {55 + rng.int_range(-6, 6) * 1.0, 18.0, 12.0};
    draw_disc(img, x, y, rad, rgb);
  }

  for (int i = 0; i < g.patches; ++i) {
    double x, y;
    sample_position(rng, geo, 0.7, x, y);
    int lobes = rng.int_range(2, 3);
    for (int l = 0; l < lobes; ++l) {
      double ox = x + s * rng.uniform(-0.03, 0.03);
      double oy = y + s * rng.uniform(-0.03, 0.03);
      double rad = s * rng.uniform(0.045, 0.065);
      double rgb[3] = {84 + rng.int_range(-8, 8) * 1.0, 27.0, 20.0};
      draw_disc(img, ox, oy, rad, rgb);
    }
  }

  return img;
}

std::vector<ManifestRow> generate_dataset(const SyntheticSpec& spec,
                                          const std::string& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

  std::vector<int> counts = spec.resolved_counts();
  std::vector<ManifestRow> rows;
  int global = 0;
  for (int label = 0; label < spec.num_classes; ++label) {
    if (counts[label] == 0) {
      std::fprintf(stderr, "warning: class %d has no samples; it will be absent from the manifest\n",
                   label);
      continue;
    }
    // stratified split of this class's indices
    int n = counts[label];
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng split_rng(derive_seed(spec.seed, "split:" + std::to_string(label)));
    for (int i = n - 1; i > 0; --i) {
      int j = static_cast<int>(split_rng.next_below(static_cast<uint64_t>(i) + 1));
      std::swap(order[i], order[j]);
    }
    int n_train = static_cast<int>(std::lround(n * spec.train_fraction));
    int n_val = static_cast<int>(std::lround(n * spec.val_fraction));
    if (n_train + n_val > n) n_val = n - n_train;
    std::vector<std::string> split_of(n);
    for (int i = 0; i < n; ++i) {
      split_of[order[i]] = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    }
    for (int i = 0; i < n; ++i) {
      Image img = render_synthetic_image(spec, label, i);
      char name[32];
      std::snprintf(name, sizeof(name), "img_%04d.ppm", global);
      write_pnm(img, (fs::path(out_dir) / name).string());
      rows.push_back({name, label, split_of[i]});
      ++global;
    }
  }
  if (rows.empty()) throw ConfigError("synthetic spec produced no samples");

  std::ofstream mf(fs::path(out_dir) / "manifest.csv", std::ios::trunc);
  if (!mf) throw IoError("cannot write manifest in '" + out_dir + "'");
  mf << "path,label,split\n";
  for (const ManifestRow& r : rows) mf << r.path << "," << r.label << "," << r.split << "\n";
  mf.flush();
  if (!mf) throw IoError("manifest write failed in '" + out_dir + "'");
  return rows;
}

namespace {

std::string resolve_manifest_path(const std::string& p) {
  fs::path path(p);
  std::error_code ec;
  if (fs::is_directory(path, ec)) return (path / "manifest.csv").string();
  return p;
}

} // namespace

std::vector<ManifestRow> read_manifest(const std::string& manifest_path) {
  std::string path = resolve_manifest_path(manifest_path);
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line != "path,label,split") {
    throw DataError("manifest '" + path + "' must start with header 'path,label,split'");
  }
  std::vector<ManifestRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRow row;
    std::string label_s;
    if (!std::getline(ls, row.path, ',') || !std::getline(ls, label_s, ',') ||
        !std::getline(ls, row.split)) {
      throw DataError("manifest '" + path + "' line " + std::to_string(lineno) +
                      " is not 'path,label,split'");
    }
    try {
      row.label = std::stoi(label_s);
    } catch (const std::exception&) {
      throw DataError("manifest '" + path + "' line " + std::to_string(lineno) +
                      ": bad label '" + label_s + "'");
    }
    if (row.label < 0) {
      throw DataError("manifest '" + path + "' line " + std::to_string(lineno) +
                      ": negative label");
    }
    if (row.split != "train" && row.split != "val" && row.split != "test") {
      throw DataError("manifest '" + path + "' line " + std::to_string(lineno) +
                      ": unknown split '" + row.split + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("manifest '" + path + "' has no data rows");
  return rows;
}

SplitDataset load_dataset(const std::string& manifest_path) {
  std::string path = resolve_manifest_path(manifest_path);
  std::vector<ManifestRow> rows = read_manifest(path);
  fs::path dir = fs::path(path).parent_path();
  SplitDataset ds;
  for (const ManifestRow& r : rows) {
    fs::path img_path = fs::path(r.path).is_absolute() ? fs::path(r.path) : dir / r.path;
    Image img = read_pnm(img_path.string());
    Sample s{image_to_tensor(img), r.label};
    ds.num_classes = std::max(ds.num_classes, r.label + 1);
    if (r.split == "train")
      ds.train.push_back(std::move(s));
    else if (r.split == "val")
      ds.val.push_back(std::move(s));
    else
      ds.test.push_back(std::move(s));
  }
  return ds;
}

std::vector<Sample> carve_holdout(std::vector<Sample>& train, double fraction, uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0) {
    throw ConfigError("holdout fraction must be in (0,1)");
  }
  int max_label = -1;
  for (const Sample& s : train) max_label = std::max(max_label, s.label);
  std::vector<std::vector<size_t>> by_class(max_label + 1);
  for (size_t i = 0; i < train.size(); ++i) by_class[train[i].label].push_back(i);

  std::vector<char> to_val(train.size(), 0);
  for (int c = 0; c <= max_label; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    Rng rng(derive_seed(seed, "holdout:" + std::to_string(c)));
    for (size_t i = idx.size() - 1; i > 0; --i) {
      size_t j = rng.next_below(i + 1);
      std::swap(idx[i], idx[j]);
    }
    size_t take = static_cast<size_t>(std::lround(idx.size() * fraction));
    if (take == 0 && idx.size() >= 2) take = 1;
    for (size_t i = 0; i < take; ++i) to_val[idx[i]] = 1;
  }

  std::vector<Sample> val, kept;
  for (size_t i = 0; i < train.size(); ++i) {
    (to_val[i] ? val : kept).push_back(std::move(train[i]));
  }
  if (val.empty() || kept.empty()) {
    throw ConfigError("holdout carve left an empty split; dataset too small");
  }
  train = std::move(kept);
  return val;
}

} // namespace gcg
