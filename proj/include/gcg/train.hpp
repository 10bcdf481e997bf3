#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gcg/dataset.hpp"
#include "gcg/model.hpp"
#include "gcg/param.hpp"
#include "gcg/tensor.hpp"

namespace gcg {

enum class RegKind { none, l1, l2, l1l2 };
enum class GcMode { off, zero_mean, zscore };

RegKind reg_kind_from_string(const std::string& s);
std::string to_string(RegKind kind);
GcMode gc_mode_from_string(const std::string& s);
std::string to_string(GcMode mode);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int epochs = 100;
  RegKind weight_reg = RegKind::l2;
  double weight_reg_coeff = 0.005;
  RegKind bias_reg = RegKind::l1l2;
  double bias_reg_coeff = 0.005;
  double rmsprop_rho = 0.9;
  double rmsprop_eps = 1e-7;
  GcMode gc_mode = GcMode::zero_mean;
  uint64_t seed = 0;
  double holdout_fraction = 0.2; // used only when a manifest lacks val rows
  bool class_weights = false;    // inverse-frequency loss weighting

  void validate() const;
};

std::string train_config_to_json_string(const TrainConfig& cfg);
TrainConfig train_config_from_json_string(const std::string& text);

/// labels -> one-hot rows [N,C] (constant tensor).
Tensor one_hot(const std::vector<int>& labels, int num_classes);

/// Mean over the batch of -sum(target * log(prob + 1e-12)). targets must
/// be exactly one-hot per row. row_weights, when given, scale each row's
/// term before the mean.
Tensor cross_entropy_loss(const Tensor& probs, const Tensor& targets,
                          const std::vector<double>* row_weights = nullptr);

/// Sum over weight parameters of coeff * (L1 and/or L2 norms) plus the
/// same for biases per the configured kinds.
Tensor regularization_penalty(const std::vector<Parameter>& params, const TrainConfig& cfg);

/// In-place centralization of a weight gradient; statistics are taken
/// over every axis except the output-channel (last) axis. Biases and
/// rank<2 tensors pass through untouched.
void gradient_centralize(Parameter& p, GcMode mode);

struct RmsPropState {
  std::vector<std::vector<double>> acc; // per parameter, same layout
  long long step = 0;
};

/// acc <- rho*acc + (1-rho)*g^2 ; theta <- theta - lr*g/(sqrt(acc)+eps).
/// A non-finite gradient aborts with a diagnostic naming the parameter.
void rmsprop_step(std::vector<Parameter>& params, RmsPropState& state,
                  const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0; // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double lr = 0;
  std::string timestamp;
};

std::string epoch_log_to_json_line(const EpochLog& log);

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val_accuracy = -1.0;
  int best_epoch = -1;
};

/// Per-class inverse-frequency weights, total / (C * count_c); absent
/// classes get 0.
std::vector<double> inverse_frequency_weights(const std::vector<int>& labels, int num_classes);

/// Accuracy + mean CE of an eval-mode pass over samples.
struct EvalStats {
  double loss = 0;
  double accuracy = 0;
  std::vector<int> y_true;
  std::vector<std::vector<double>> y_prob;
};
EvalStats evaluate(Model& model, const std::vector<Sample>& samples);

/// Seeded-shuffle mini-batch epochs with RMSProp + gradient
/// centralization; saves a checkpoint to checkpoint_path whenever val
/// accuracy improves (empty path = no saving). log_stream, when given,
/// receives one JSON line per epoch.
TrainResult fit(Model& model, const std::vector<Sample>& train_set,
                const std::vector<Sample>& val_set, const TrainConfig& cfg,
                const std::string& checkpoint_path = "", std::ostream* log_stream = nullptr);

} // namespace gcg
