#include "gcg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <ostream>

#include "gcg/metrics.hpp"
#include "gcg/ops.hpp"
#include "json.hpp"

namespace gcg {

using nlohmann::json;

RegKind reg_kind_from_string(const std::string& s) {
  if (s == "none") return RegKind::none;
  if (s == "l1") return RegKind::l1;
  if (s == "l2") return RegKind::l2;
  if (s == "l1l2") return RegKind::l1l2;
  throw ConfigError("unknown regularization kind: '" + s + "'");
}

std::string to_string(RegKind kind) {
  switch (kind) {
    case RegKind::none: return "none";
    case RegKind::l1: return "l1";
    case RegKind::l2: return "l2";
    case RegKind::l1l2: return "l1l2";
  }
  throw ContractError("unreachable reg kind");
}

GcMode gc_mode_from_string(const std::string& s) {
  if (s == "off") return GcMode::off;
  if (s == "zero_mean") return GcMode::zero_mean;
  if (s == "zscore") return GcMode::zscore;
  throw ConfigError("unknown gc_mode: '" + s + "'");
}

std::string to_string(GcMode mode) {
  switch (mode) {
    case GcMode::off: return "off";
    case GcMode::zero_mean: return "zero_mean";
    case GcMode::zscore: return "zscore";
  }
  throw ContractError("unreachable gc mode");
}

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (weight_reg_coeff < 0.0 || bias_reg_coeff < 0.0) {
    throw ConfigError("regularization coefficients must be >= 0");
  }
  if (rmsprop_rho <= 0.0 || rmsprop_rho >= 1.0) throw ConfigError("rmsprop_rho must be in (0,1)");
  if (rmsprop_eps <= 0.0) throw ConfigError("rmsprop_eps must be > 0");
  if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout_fraction must be in (0,1)");
  }
}

std::string train_config_to_json_string(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"weight_reg", to_string(c.weight_reg)},
              {"weight_reg_coeff", c.weight_reg_coeff},
              {"bias_reg", to_string(c.bias_reg)},
              {"bias_reg_coeff", c.bias_reg_coeff},
              {"rmsprop_rho", c.rmsprop_rho},
              {"rmsprop_eps", c.rmsprop_eps},
              {"gc_mode", to_string(c.gc_mode)},
              {"seed", c.seed},
              {"holdout_fraction", c.holdout_fraction},
              {"class_weights", c.class_weights}}
      .dump();
}

TrainConfig train_config_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "learning_rate")
        c.learning_rate = val.get<double>();
      else if (key == "batch_size")
        c.batch_size = val.get<int>();
      else if (key == "epochs")
        c.epochs = val.get<int>();
      else if (key == "weight_reg")
        c.weight_reg = reg_kind_from_string(val.get<std::string>());
      else if (key == "weight_reg_coeff")
        c.weight_reg_coeff = val.get<double>();
      else if (key == "bias_reg")
        c.bias_reg = reg_kind_from_string(val.get<std::string>());
      else if (key == "bias_reg_coeff")
        c.bias_reg_coeff = val.get<double>();
      else if (key == "rmsprop_rho")
        c.rmsprop_rho = val.get<double>();
      else if (key == "rmsprop_eps")
        c.rmsprop_eps = val.get<double>();
      else if (key == "gc_mode")
        c.gc_mode = gc_mode_from_string(val.get<std::string>());
      else if (key == "seed")
        c.seed = val.get<uint64_t>();
      else if (key == "holdout_fraction")
        c.holdout_fraction = val.get<double>();
      else if (key == "class_weights")
        c.class_weights = val.get<bool>();
      else
        throw ConfigError("unknown train config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config value: ") + e.what());
  }
  return c;
}

Tensor one_hot(const std::vector<int>& labels, int num_classes) {
  if (labels.empty()) throw ContractError("one_hot: empty label list");
  std::vector<double> data(labels.size() * static_cast<size_t>(num_classes), 0.0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ContractError("one_hot: label " + std::to_string(labels[i]) + " out of range");
    }
    data[i * num_classes + labels[i]] = 1.0;
  }
  return Tensor::from_data({static_cast<int>(labels.size()), num_classes}, std::move(data));
}

Tensor cross_entropy_loss(const Tensor& probs, const Tensor& targets,
                          const std::vector<double>* row_weights) {
  if (probs.rank() != 2 || !shape_eq(probs.shape(), targets.shape())) {
    throw DimensionError("cross_entropy_loss: probs " + shape_str(probs.shape()) +
                         " vs targets " + shape_str(targets.shape()));
  }
  int n = probs.dim(0), c = probs.dim(1);
  for (int r = 0; r < n; ++r) {
    int ones = 0;
    for (int k = 0; k < c; ++k) {
      double t = targets.data()[static_cast<size_t>(r) * c + k];
      if (t == 1.0)
        ++ones;
      else if (t != 0.0)
        throw ContractError("cross_entropy_loss: targets must be one-hot");
    }
    if (ones != 1) throw ContractError("cross_entropy_loss: targets must be one-hot");
  }
  Tensor weighted_targets = targets;
  if (row_weights) {
    if (static_cast<int>(row_weights->size()) != n) {
      throw DimensionError("cross_entropy_loss: row_weights length mismatch");
    }
    std::vector<double> wt(targets.data());
    for (int r = 0; r < n; ++r) {
      for (int k = 0; k < c; ++k) wt[static_cast<size_t>(r) * c + k] *= (*row_weights)[r];
    }
    weighted_targets = Tensor::from_data(targets.shape(), std::move(wt));
  }
  Tensor log_p = ops::log_elem(ops::add_scalar(probs, 1e-12));
  Tensor picked = ops::mul(log_p, weighted_targets);
  return ops::scale(ops::sum(picked), -1.0 / static_cast<double>(n));
}

Tensor regularization_penalty(const std::vector<Parameter>& params, const TrainConfig& cfg) {
  Tensor total;
  auto add_term = [&total](Tensor term) {
    total = total.defined() ? ops::add(total, term) : term;
  };
  for (const Parameter& p : params) {
    RegKind kind = p.kind == ParamKind::weight ? cfg.weight_reg : cfg.bias_reg;
    double coeff = p.kind == ParamKind::weight ? cfg.weight_reg_coeff : cfg.bias_reg_coeff;
    if (kind == RegKind::none || coeff == 0.0) continue;
    switch (kind) {
      case RegKind::l1:
        add_term(ops::scale(ops::sum_abs(p.value), coeff));
        break;
      case RegKind::l2:
        add_term(ops::scale(ops::sum_square(p.value), coeff));
        break;
      case RegKind::l1l2:
        add_term(ops::scale(ops::add(ops::sum_abs(p.value), ops::sum_square(p.value)), coeff));
        break;
      case RegKind::none:
        break;
    }
  }
  if (!total.defined()) return Tensor::scalar(0.0);
  return total;
}

void gradient_centralize(Parameter& p, GcMode mode) {
  if (mode == GcMode::off || p.kind != ParamKind::weight) return;
  Tensor& t = p.value;
  if (t.rank() < 2 || !t.has_grad()) return;
  int out = t.shape().back();
  size_t per_slice = t.size() / static_cast<size_t>(out);
  auto& g = t.mutable_grad();
  for (int o = 0; o < out; ++o) {
    double mean = 0.0;
    for (size_t i = 0; i < per_slice; ++i) mean += g[i * out + o];
    mean /= static_cast<double>(per_slice);
    if (mode == GcMode::zero_mean) {
      for (size_t i = 0; i < per_slice; ++i) g[i * out + o] -= mean;
    } else {
      double var = 0.0;
      for (size_t i = 0; i < per_slice; ++i) {
        double d = g[i * out + o] - mean;
        var += d * d;
      }
      double sd = std::sqrt(var / static_cast<double>(per_slice));
      for (size_t i = 0; i < per_slice; ++i) {
        g[i * out + o] = (g[i * out + o] - mean) / (sd + 1e-8);
      }
    }
  }
}

void rmsprop_step(std::vector<Parameter>& params, RmsPropState& state,
                  const TrainConfig& cfg) {
  if (state.acc.size() != params.size()) {
    state.acc.clear();
    for (const Parameter& p : params) state.acc.emplace_back(p.value.size(), 0.0);
  }
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    if (!p.value.has_grad()) continue;
    const auto& g = p.value.grad();
    auto& acc = state.acc[pi];
    auto& theta = p.value.mutable_data();
    for (size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      }
      acc[i] = cfg.rmsprop_rho * acc[i] + (1.0 - cfg.rmsprop_rho) * g[i] * g[i];
      theta[i] -= cfg.learning_rate * g[i] / (std::sqrt(acc[i]) + cfg.rmsprop_eps);
    }
  }
  state.step++;
}

std::string epoch_log_to_json_line(const EpochLog& log) {
  return json{{"epoch", log.epoch},
              {"train_loss", log.train_loss},
              {"val_loss", log.val_loss},
              {"val_accuracy", log.val_accuracy},
              {"lr", log.lr},
              {"timestamp", log.timestamp}}
      .dump();
}

std::vector<double> inverse_frequency_weights(const std::vector<int>& labels,
                                              int num_classes) {
  std::vector<long long> count(num_classes, 0);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw ContractError("inverse_frequency_weights: bad label");
    count[l]++;
  }
  std::vector<double> w(num_classes, 0.0);
  for (int c = 0; c < num_classes; ++c) {
    if (count[c] > 0) {
      w[c] = static_cast<double>(labels.size()) /
             (static_cast<double>(num_classes) * static_cast<double>(count[c]));
    }
  }
  return w;
}

EvalStats evaluate(Model& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw ConfigError("evaluate: empty sample set");
  model.set_mode(Mode::eval);
  EvalStats st;
  double loss_sum = 0.0;
  long long correct = 0;
  for (const Sample& s : samples) {
    Tensor probs = model.forward(s.image);
    std::vector<double> row = probs.data();
    loss_sum += -std::log(row[s.label] + 1e-12);
    if (argmax_label(row) == s.label) ++correct;
    st.y_true.push_back(s.label);
    st.y_prob.push_back(std::move(row));
  }
  st.loss = loss_sum / static_cast<double>(samples.size());
  st.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return st;
}

namespace {

std::string iso8601_utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

} // namespace

TrainResult fit(Model& model, const std::vector<Sample>& train_set,
                const std::vector<Sample>& val_set, const TrainConfig& cfg,
                const std::string& checkpoint_path, std::ostream* log_stream) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) {
    throw ConfigError("fit: train and validation sets must be non-empty");
  }
  int num_classes = model.config().num_classes;
  std::vector<int> train_labels;
  train_labels.reserve(train_set.size());
  for (const Sample& s : train_set) {
    if (s.label < 0 || s.label >= num_classes) {
      throw DataError("fit: sample label " + std::to_string(s.label) +
                      " outside model's " + std::to_string(num_classes) + " classes");
    }
    train_labels.push_back(s.label);
  }
  std::vector<double> class_w;
  if (cfg.class_weights) class_w = inverse_frequency_weights(train_labels, num_classes);

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  RmsPropState opt_state;
  TrainResult res;
  const size_t n = train_set.size();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    model.set_mode(Mode::train);
    std::vector<size_t> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = i;
    for (size_t i = n - 1; i > 0; --i) {
      size_t j = shuffle_rng.next_below(i + 1);
      std::swap(perm[i], perm[j]);
    }

    double loss_sum = 0.0;
    for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
      size_t stop = std::min(n, start + static_cast<size_t>(cfg.batch_size));
      std::vector<Tensor> images;
      std::vector<int> labels;
      std::vector<double> row_w;
      for (size_t i = start; i < stop; ++i) {
        const Sample& s = train_set[perm[i]];
        images.push_back(s.image);
        labels.push_back(s.label);
        if (cfg.class_weights) row_w.push_back(class_w[s.label]);
      }
      model.zero_grads();
      Tensor total;
      {
        Tape tape;
        Tensor probs = model.forward_batch(images);
        Tensor ce = cross_entropy_loss(probs, one_hot(labels, num_classes),
                                       cfg.class_weights ? &row_w : nullptr);
        total = ops::add(ce, regularization_penalty(model.parameters(), cfg));
        if (!std::isfinite(total.value())) {
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        }
        tape.backward(total);
      }
      for (Parameter& p : model.parameters()) gradient_centralize(p, cfg.gc_mode);
      rmsprop_step(model.parameters(), opt_state, cfg);
      loss_sum += total.value() * static_cast<double>(stop - start);
    }

    EvalStats ev = evaluate(model, val_set);
    EpochLog el;
    el.epoch = epoch;
    el.train_loss = loss_sum / static_cast<double>(n);
    el.val_loss = ev.loss;
    el.val_accuracy = ev.accuracy;
    el.lr = cfg.learning_rate;
    el.timestamp = iso8601_utc_now();
    res.log.push_back(el);
    if (log_stream) {
      *log_stream << epoch_log_to_json_line(el) << "\n";
      log_stream->flush();
    }
    if (ev.accuracy > res.best_val_accuracy) {
      res.best_val_accuracy = ev.accuracy;
      res.best_epoch = epoch;
      if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
    }
  }
  return res;
}

} // namespace gcg
