#pragma once

#include <optional>
#include <string>
#include <vector>

namespace gcg {

struct ClassMetrics {
  int support = 0;
  // nullopt = undefined (class absent from y_true); excluded from macro
  // aggregates. Per-class accuracy is one-vs-rest recall, so the two
  // columns always agree.
  std::optional<double> accuracy, precision, recall, f1, auc;
};

struct Aggregate {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, auc = 0;
};

struct MetricsReport {
  std::vector<std::vector<long long>> confusion; // rows = true, cols = predicted
  std::vector<ClassMetrics> per_class;
  double overall_accuracy = 0;
  double kappa = 0;
  Aggregate macro;    // unweighted mean over defined classes
  Aggregate weighted; // support-weighted mean
  std::vector<std::string> warnings;

  std::string to_json_string() const;
};

/// Argmax with ties resolved to the lowest class index.
int argmax_label(const std::vector<double>& probs);

MetricsReport compute_metrics(const std::vector<int>& y_true,
                              const std::vector<std::vector<double>>& y_prob,
                              int num_classes);

/// One-vs-rest ROC area by trapezoidal sweep over score thresholds
/// (ties count as half-wins). nullopt when positives or negatives are
/// missing.
std::optional<double> roc_auc(const std::vector<int>& is_positive,
                              const std::vector<double>& scores);

} // namespace gcg
