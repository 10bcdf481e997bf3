#pragma once

#include <string>
#include <vector>

#include "gcg/rng.hpp"
#include "gcg/tensor.hpp"

namespace gcg {

/// Regularization and gradient-centralization treat the two kinds
/// differently; norm scales count as weights, norm shifts as biases.
enum class ParamKind { weight, bias };

/// Named handle into a model's learnable state. Copies alias the same
/// storage, so a registry entry and the layer struct that owns the
/// tensor always agree.
struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::weight;
  Tensor value;
};

/// Uniform Kaiming-style init: U(-limit, limit) with limit = sqrt(6/fan_in).
Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng);

} // namespace gcg
