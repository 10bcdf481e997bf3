#include "gcg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gcg/errors.hpp"
#include "json.hpp"

namespace gcg {

using nlohmann::json;

int argmax_label(const std::vector<double>& probs) {
  if (probs.empty()) throw ContractError("argmax_label: empty probability row");
  int best = 0;
  for (int i = 1; i < static_cast<int>(probs.size()); ++i) {
    if (probs[i] > probs[best]) best = i; // strict: ties keep the lowest index
  }
  return best;
}

std::optional<double> roc_auc(const std::vector<int>& is_positive,
                              const std::vector<double>& scores) {
  if (is_positive.size() != scores.size()) throw ContractError("roc_auc: size mismatch");
  long long pos = 0, neg = 0;
  for (int p : is_positive) (p ? pos : neg)++;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](size_t a, size_t b) { return scores[a] > scores[b]; });

  // Walk thresholds from high to low; each group of tied scores moves the
  // ROC point once, and the trapezoid between points scores ties as
  // half-wins.
  double area = 0.0;
  long long tp = 0, fp = 0, prev_tp = 0, prev_fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (is_positive[order[i]] ? tp : fp)++;
      ++i;
    }
    area += static_cast<double>(fp - prev_fp) * static_cast<double>(tp + prev_tp) / 2.0;
    prev_tp = tp;
    prev_fp = fp;
  }
  return area / (static_cast<double>(pos) * static_cast<double>(neg));
}

MetricsReport compute_metrics(const std::vector<int>& y_true,
                              const std::vector<std::vector<double>>& y_prob,
                              int num_classes) {
  if (num_classes < 2) throw ContractError("compute_metrics: need at least 2 classes");
  if (y_true.size() != y_prob.size() || y_true.empty()) {
    throw ContractError("compute_metrics: y_true/y_prob must be equal-length and non-empty");
  }
  for (size_t i = 0; i < y_prob.size(); ++i) {
    if (static_cast<int>(y_prob[i].size()) != num_classes) {
      throw ContractError("compute_metrics: probability row has wrong width");
    }
    if (y_true[i] < 0 || y_true[i] >= num_classes) {
      throw ContractError("compute_metrics: label out of range");
    }
    double s = std::accumulate(y_prob[i].begin(), y_prob[i].end(), 0.0);
    if (std::abs(s - 1.0) > 1e-6) {
      throw ContractError("compute_metrics: probability row does not sum to 1");
    }
  }

  const long long n = static_cast<long long>(y_true.size());
  MetricsReport rep;
  rep.confusion.assign(num_classes, std::vector<long long>(num_classes, 0));
  std::vector<int> y_pred(y_true.size());
  for (size_t i = 0; i < y_true.size(); ++i) {
    y_pred[i] = argmax_label(y_prob[i]);
    rep.confusion[y_true[i]][y_pred[i]]++;
  }

  long long trace = 0;
  std::vector<long long> row_sum(num_classes, 0), col_sum(num_classes, 0);
  for (int r = 0; r < num_classes; ++r) {
    for (int c = 0; c < num_classes; ++c) {
      row_sum[r] += rep.confusion[r][c];
      col_sum[c] += rep.confusion[r][c];
    }
    trace += rep.confusion[r][r];
  }
  rep.overall_accuracy = static_cast<double>(trace) / static_cast<double>(n);

  double p_o = rep.overall_accuracy;
  double p_e = 0.0;
  for (int k = 0; k < num_classes; ++k) {
    p_e += (static_cast<double>(row_sum[k]) / n) * (static_cast<double>(col_sum[k]) / n);
  }
  rep.kappa = std::abs(1.0 - p_e) < 1e-15 ? 0.0 : (p_o - p_e) / (1.0 - p_e);

  rep.per_class.resize(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    ClassMetrics& m = rep.per_class[k];
    m.support = static_cast<int>(row_sum[k]);
    if (row_sum[k] == 0) {
      rep.warnings.push_back("class " + std::to_string(k) +
                             " absent from y_true; its metrics are undefined");
      continue;
    }
    long long tp = rep.confusion[k][k];
    double recall = static_cast<double>(tp) / static_cast<double>(row_sum[k]);
    double precision =
        col_sum[k] > 0 ? static_cast<double>(tp) / static_cast<double>(col_sum[k]) : 0.0;
    m.recall = recall;
    m.accuracy = recall; // per-class accuracy column == one-vs-rest recall
    m.precision = precision;
    m.f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    std::vector<int> is_pos(y_true.size());
    std::vector<double> scores(y_true.size());
    for (size_t i = 0; i < y_true.size(); ++i) {
      is_pos[i] = y_true[i] == k ? 1 : 0;
      scores[i] = y_prob[i][k];
    }
    m.auc = roc_auc(is_pos, scores);
    if (!m.auc) {
      rep.warnings.push_back("class " + std::to_string(k) +
                             " has no negatives; AUC undefined");
    }
  }

  auto aggregate = [&rep](auto pick, double& macro_out, double& weighted_out) {
    double macro_sum = 0.0, weighted_sum = 0.0;
    long long macro_n = 0, weight_n = 0;
    for (const ClassMetrics& m : rep.per_class) {
      std::optional<double> v = pick(m);
      if (!v) continue;
      macro_sum += *v;
      macro_n++;
      weighted_sum += *v * m.support;
      weight_n += m.support;
    }
    macro_out = macro_n > 0 ? macro_sum / macro_n : 0.0;
    weighted_out = weight_n > 0 ? weighted_sum / weight_n : 0.0;
  };
  aggregate([](const ClassMetrics& m) { return m.accuracy; }, rep.macro.accuracy,
            rep.weighted.accuracy);
  aggregate([](const ClassMetrics& m) { return m.precision; }, rep.macro.precision,
            rep.weighted.precision);
  aggregate([](const ClassMetrics& m) { return m.recall; }, rep.macro.recall,
            rep.weighted.recall);
  aggregate([](const ClassMetrics& m) { return m.f1; }, rep.macro.f1, rep.weighted.f1);
  aggregate([](const ClassMetrics& m) { return m.auc; }, rep.macro.auc, rep.weighted.auc);
  return rep;
}

namespace {

json opt_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

json aggregate_to_json(const Aggregate& a) {
  return json{{"accuracy", a.accuracy},
              {"precision", a.precision},
              {"recall", a.recall},
              {"f1", a.f1},
              {"auc", a.auc}};
}

} // namespace

std::string MetricsReport::to_json_string() const {
  json per = json::array();
  for (const ClassMetrics& m : per_class) {
    per.push_back(json{{"support", m.support},
                       {"accuracy", opt_to_json(m.accuracy)},
                       {"precision", opt_to_json(m.precision)},
                       {"recall", opt_to_json(m.recall)},
                       {"f1", opt_to_json(m.f1)},
                       {"auc", opt_to_json(m.auc)}});
  }
  json j{{"confusion", confusion},
         {"overall_accuracy", overall_accuracy},
         {"kappa", kappa},
         {"per_class", per},
         {"macro", aggregate_to_json(macro)},
         {"weighted", aggregate_to_json(weighted)},
         {"warnings", warnings}};
  return j.dump(2);
}

} // namespace gcg
