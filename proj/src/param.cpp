#include "gcg/param.hpp"

#include <cmath>

namespace gcg {

Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng) {
  if (fan_in <= 0) throw ContractError("kaiming_uniform: fan_in must be positive");
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(-limit, limit);
  return t;
}

} // namespace gcg
