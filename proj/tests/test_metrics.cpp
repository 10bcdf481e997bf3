#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "gcg/heatmap.hpp"
#include "gcg/metrics.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace gcg;

namespace {

// y_prob rows that argmax straight back to the requested predictions,
// letting a target confusion matrix be laid out exactly
std::vector<std::vector<double>> prob_rows_for_preds(const std::vector<int>& preds, int C) {
  std::vector<std::vector<double>> rows;
  for (int p : preds) {
    std::vector<double> row(C, 0.1 / (C - 1));
    row[p] = 0.9;
    rows.push_back(row);
  }
  return rows;
}

struct LabeledProbs {
  std::vector<int> y_true;
  std::vector<std::vector<double>> y_prob;
};

LabeledProbs from_confusion(const std::vector<std::vector<long long>>& m) {
  LabeledProbs lp;
  int C = static_cast<int>(m.size());
  std::vector<int> preds;
  for (int t = 0; t < C; ++t) {
    for (int p = 0; p < C; ++p) {
      for (long long k = 0; k < m[t][p]; ++k) {
        lp.y_true.push_back(t);
        preds.push_back(p);
      }
    }
  }
  lp.y_prob = prob_rows_for_preds(preds, C);
  return lp;
}

LabeledProbs random_case(Rng& rng) {
  LabeledProbs lp;
  int n = static_cast<int>(rng.int_range(3, 40));
  int C = static_cast<int>(rng.int_range(2, 5));
  for (int i = 0; i < n; ++i) {
    lp.y_true.push_back(static_cast<int>(rng.int_range(0, C - 1)));
    if (i > 0 && rng.next_double() < 0.3) {
      lp.y_prob.push_back(lp.y_prob[rng.next_below(i)]); // exact score ties across rows
      continue;
    }
    std::vector<double> row(C);
    double s = 0;
    for (double& v : row) {
      v = rng.uniform(0.01, 1.0);
      s += v;
    }
    for (double& v : row) v /= s;
    lp.y_prob.push_back(row);
  }
  return lp;
}

} // namespace

TEST_CASE("argmax ties resolve to the lowest index") {
  CHECK(argmax_label({0.1, 0.7, 0.2}) == 1);
  CHECK(argmax_label({0.4, 0.4, 0.2}) == 0);
  CHECK(argmax_label({0.2, 0.4, 0.4}) == 1);
  CHECK(argmax_label({1.0}) == 0);
  CHECK_THROWS_AS(argmax_label({}), ContractError);
}

TEST_CASE("roc auc textbook example and edge cases") {
  // the classic 4-sample example: one discordant pair out of four
  std::optional<double> a = roc_auc({0, 0, 1, 1}, {0.1, 0.4, 0.35, 0.8});
  REQUIRE(a.has_value());
  CHECK(*a == 0.75);

  CHECK(*roc_auc({0, 1}, {0.2, 0.9}) == 1.0);
  CHECK(*roc_auc({1, 0}, {0.2, 0.9}) == 0.0);
  CHECK(*roc_auc({0, 1}, {0.5, 0.5}) == 0.5); // tie scores as half-wins

  CHECK_FALSE(roc_auc({1, 1}, {0.2, 0.9}).has_value());
  CHECK_FALSE(roc_auc({0, 0}, {0.2, 0.9}).has_value());
  CHECK_THROWS_AS(roc_auc({0, 1}, {0.5}), ContractError);
}

TEST_CASE("roc auc is invariant under monotone score transforms") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 12;
    std::vector<int> pos(n);
    std::vector<double> sc(n), sq(n);
    int p = 0;
    for (int i = 0; i < n; ++i) {
      pos[i] = rng.next_double() < 0.5 ? 1 : 0;
      p += pos[i];
      sc[i] = rng.uniform(0.05, 0.95);
      sq[i] = sc[i] * sc[i]; // strictly increasing on (0,1)
    }
    if (p == 0 || p == n) continue;
    CHECK(*roc_auc(pos, sc) == *roc_auc(pos, sq));
  }
}

TEST_CASE("compute_metrics matches the brute-force oracle on 50 random cases") {
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(1000 + trial);
    LabeledProbs lp = random_case(rng);
    int C = static_cast<int>(lp.y_prob[0].size());
    MetricsReport rep = compute_metrics(lp.y_true, lp.y_prob, C);
    oracle::BruteReport want = oracle::brute_metrics(lp.y_true, lp.y_prob, C);
    CAPTURE(trial);

    REQUIRE(rep.confusion == want.confusion);
    CHECK(std::abs(rep.overall_accuracy - want.accuracy) < 1e-9);
    CHECK(std::abs(rep.kappa - want.kappa) < 1e-9);
    REQUIRE(static_cast<int>(rep.per_class.size()) == C);
    for (int c = 0; c < C; ++c) {
      const ClassMetrics& m = rep.per_class[c];
      CHECK(m.support == want.support[c]);
      CHECK(m.recall.has_value() == want.defined[c]);
      CHECK(m.precision.has_value() == want.defined[c]);
      CHECK(m.f1.has_value() == want.defined[c]);
      CHECK(m.accuracy.has_value() == want.defined[c]);
      CHECK(m.auc.has_value() == want.auc_defined[c]);
      if (want.defined[c]) {
        CHECK(std::abs(*m.precision - want.precision[c]) < 1e-9);
        CHECK(std::abs(*m.recall - want.recall[c]) < 1e-9);
        CHECK(std::abs(*m.f1 - want.f1[c]) < 1e-9);
        CHECK(std::abs(*m.accuracy - want.recall[c]) < 1e-9); // accuracy column == recall
      }
      if (want.auc_defined[c]) CHECK(std::abs(*m.auc - want.auc[c]) < 1e-9);
    }
    CHECK(std::abs(rep.macro.precision - want.macro_precision) < 1e-9);
    CHECK(std::abs(rep.macro.recall - want.macro_recall) < 1e-9);
    CHECK(std::abs(rep.macro.f1 - want.macro_f1) < 1e-9);
    CHECK(std::abs(rep.macro.accuracy - want.macro_acc) < 1e-9);
    CHECK(std::abs(rep.macro.auc - want.macro_auc) < 1e-9);
    CHECK(std::abs(rep.weighted.precision - want.w_precision) < 1e-9);
    CHECK(std::abs(rep.weighted.recall - want.w_recall) < 1e-9);
    CHECK(std::abs(rep.weighted.f1 - want.w_f1) < 1e-9);
    CHECK(std::abs(rep.weighted.accuracy - want.w_acc) < 1e-9);
    CHECK(std::abs(rep.weighted.auc - want.w_auc) < 1e-9);
  }
}

TEST_CASE("kappa closed forms") {
  // [[20,5],[10,15]]: p_o = 0.7, p_e = 0.5 -> exactly 0.4
  LabeledProbs lp = from_confusion({{20, 5}, {10, 15}});
  MetricsReport rep = compute_metrics(lp.y_true, lp.y_prob, 2);
  CHECK(std::abs(rep.kappa - 0.4) < 1e-12);

  // [[10,4],[8,18]]: p_o = 0.7, p_e = 0.515 -> 0.18/0.485... = 0.381443
  lp = from_confusion({{10, 4}, {8, 18}});
  rep = compute_metrics(lp.y_true, lp.y_prob, 2);
  CHECK(std::abs(rep.kappa - 0.38144329896907214) < 1e-12);
  CHECK(std::abs(rep.kappa - 0.381443) < 1e-6);

  // perfect agreement
  lp = from_confusion({{7, 0}, {0, 9}});
  rep = compute_metrics(lp.y_true, lp.y_prob, 2);
  CHECK(rep.kappa == 1.0);
  CHECK(rep.overall_accuracy == 1.0);
  for (const ClassMetrics& m : rep.per_class) {
    CHECK(*m.precision == 1.0);
    CHECK(*m.recall == 1.0);
    CHECK(*m.f1 == 1.0);
  }

  // marginal independence: agreement no better than chance
  lp = from_confusion({{1, 1}, {1, 1}});
  rep = compute_metrics(lp.y_true, lp.y_prob, 2);
  CHECK(std::abs(rep.kappa) < 1e-12);

  // degenerate: one class only, predicted perfectly -> p_e = 1, guarded to 0
  std::vector<int> y(6, 1);
  MetricsReport deg = compute_metrics(y, prob_rows_for_preds(std::vector<int>(6, 1), 3), 3);
  CHECK(deg.kappa == 0.0);
  CHECK(deg.overall_accuracy == 1.0);
}

TEST_CASE("absent classes go undefined and drop out of macro but not weighted") {
  // class 2 never occurs in y_true; class 1 spot-on, class 0 half right
  std::vector<int> y = {0, 0, 1, 1};
  auto probs = prob_rows_for_preds({0, 2, 1, 1}, 3);
  MetricsReport rep = compute_metrics(y, probs, 3);

  CHECK(rep.per_class[2].support == 0);
  CHECK_FALSE(rep.per_class[2].accuracy.has_value());
  CHECK_FALSE(rep.per_class[2].precision.has_value());
  CHECK_FALSE(rep.per_class[2].recall.has_value());
  CHECK_FALSE(rep.per_class[2].f1.has_value());
  CHECK_FALSE(rep.per_class[2].auc.has_value());
  bool warned = false;
  for (const std::string& w : rep.warnings) {
    if (w.find("class 2") != std::string::npos) warned = true;
  }
  CHECK(warned);

  // macro over the two defined classes only
  CHECK(std::abs(rep.macro.recall - 0.5 * (0.5 + 1.0)) < 1e-12);
  // weighted by support, absent class contributes nothing either way
  CHECK(std::abs(rep.weighted.recall - (0.5 * 2 + 1.0 * 2) / 4.0) < 1e-12);
}

TEST_CASE("compute_metrics validates inputs") {
  auto ok = prob_rows_for_preds({0, 1}, 2);
  CHECK_THROWS_AS(compute_metrics({0}, ok, 2), ContractError);
  CHECK_THROWS_AS(compute_metrics({}, {}, 2), ContractError);
  CHECK_THROWS_AS(compute_metrics({0, 2}, ok, 2), ContractError);
  CHECK_THROWS_AS(compute_metrics({0, 1}, ok, 1), ContractError);
  CHECK_THROWS_AS(compute_metrics({0, 1}, {{0.9, 0.1}, {0.8, 0.8}}, 2), ContractError);
  CHECK_THROWS_AS(compute_metrics({0, 1}, {{0.9, 0.1}, {0.5, 0.3, 0.2}}, 2), ContractError);
}

TEST_CASE("metrics report serializes with nulls for undefined entries") {
  std::vector<int> y = {0, 0, 1};
  MetricsReport rep = compute_metrics(y, prob_rows_for_preds({0, 1, 1}, 3), 3);
  auto j = nlohmann::json::parse(rep.to_json_string());
  CHECK(j["overall_accuracy"].get<double>() == rep.overall_accuracy);
  CHECK(j["kappa"].get<double>() == rep.kappa);
  CHECK(j["confusion"][0][0].get<long long>() == 1);
  CHECK(j["per_class"].size() == 3);
  CHECK(j["per_class"][2]["precision"].is_null());
  CHECK(j["per_class"][0]["recall"].get<double>() == 0.5);
  CHECK(j["macro"].contains("auc"));
  CHECK(j["weighted"].contains("f1"));
  CHECK(j["warnings"].is_array());
}

TEST_CASE("normalize_map rescales to [0,1] and flattens constants to 0.5") {
  std::vector<double> n = normalize_map({2.0, 4.0, 6.0});
  CHECK(n == std::vector<double>{0.0, 0.5, 1.0});
  n = normalize_map({3.0, 3.0, 3.0});
  CHECK(n == std::vector<double>{0.5, 0.5, 0.5});
  CHECK_THROWS_AS(normalize_map({}), ContractError);
}

TEST_CASE("attention colormap endpoints: white for none, dark blue for full") {
  unsigned char rgb[3];
  attention_color(0.0, rgb);
  CHECK(rgb[0] == 255);
  CHECK(rgb[1] == 255);
  CHECK(rgb[2] == 255);
  attention_color(1.0, rgb);
  CHECK(rgb[0] == 0);
  CHECK(rgb[1] == 0);
  CHECK(rgb[2] == 128);
  attention_color(0.5, rgb);
  CHECK(rgb[0] == 128);
  CHECK(rgb[1] == 128);
  CHECK(rgb[2] == 191);
  // out-of-range inputs clamp
  attention_color(-3.0, rgb);
  CHECK(rgb[0] == 255);
  attention_color(7.0, rgb);
  CHECK(rgb[2] == 128);
}

TEST_CASE("heatmap_gray nearest-neighbor geometry") {
  Image img = heatmap_gray({0.0, 1.0, 0.25, 0.75}, 2, 2, 4, 4);
  REQUIRE(img.h == 4);
  REQUIRE(img.w == 4);
  REQUIRE(img.c == 1);
  auto block = [&img](int y, int x) { return img.at(y, x, 0); };
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      CHECK(block(y, x) == 0);
      CHECK(block(y, x + 2) == 255);
      CHECK(block(y + 2, x) == 64);
      CHECK(block(y + 2, x + 2) == 191);
    }
  }
  CHECK_THROWS_AS(heatmap_gray({0.5}, 1, 2, 4, 4), ContractError);
  CHECK_THROWS_AS(heatmap_gray({0.5}, 1, 1, 0, 4), ConfigError);
}

TEST_CASE("heatmap_overlay blends half base half colormap") {
  Image base = Image::blank(2, 2, 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) base.at(y, x, c) = 100;
  Image over = heatmap_overlay({1.0}, 1, 1, base);
  REQUIRE(over.c == 3);
  CHECK(over.at(0, 0, 0) == 50);  // (100 + 0) / 2
  CHECK(over.at(0, 0, 1) == 50);
  CHECK(over.at(1, 1, 2) == 114); // (100 + 128) / 2
  Image gray_base = Image::blank(2, 2, 1);
  CHECK_THROWS_AS(heatmap_overlay({1.0}, 1, 1, gray_base), DataError);
}

TEST_CASE("render_heatmaps consumes artifacts and reduces per-channel gates") {
  AttentionArtifacts art;
  Image input = Image::blank(4, 4, 3);

  CHECK_THROWS_AS(render_heatmaps(art, input, HeatmapChannel::spatial_map), ContractError);

  art.spatial_map = Tensor::from_data({2, 2}, {0.1, 0.4, 0.3, 0.2});
  HeatmapPair pair = render_heatmaps(art, input, HeatmapChannel::spatial_map);
  CHECK(pair.gray.h == 4);
  CHECK(pair.gray.c == 1);
  CHECK(pair.overlay.c == 3);
  // brightest block of the gray map sits where the map peaks (top right)
  CHECK(pair.gray.at(0, 2, 0) == 255);
  CHECK(pair.gray.at(2, 0, 0) > pair.gray.at(2, 2, 0));

  // rank-3 gate collapses to channel means: both channels 0.2/0.8 vs 0.5/0.5
  art.gate = Tensor::from_data({1, 2, 2}, {0.2, 0.8, 0.5, 0.5});
  HeatmapPair gates = render_heatmaps(art, input, HeatmapChannel::gate);
  CHECK(gates.gray.at(0, 0, 0) == 128); // means tie -> constant map -> 0.5
  CHECK(gates.gray.at(0, 2, 0) == 128);

  CHECK(heatmap_channel_from_string("gate") == HeatmapChannel::gate);
  CHECK(to_string(HeatmapChannel::spatial_map) == "spatial_map");
  CHECK_THROWS_AS(heatmap_channel_from_string("output"), ConfigError);
}
