#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gcg/errors.hpp"

namespace gcg {

/// Dense tensor shape, row-major, channels-last. Every axis is positive.
using Shape = std::vector<int>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shape_eq(const Shape& a, const Shape& b);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in the computation graph. Leaves carry no backprop function;
/// op results carry a closure that pushes the accumulated gradient into
/// their parents.
struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad; // empty until first accumulation
  std::function<void(Node&)> backprop;
  std::vector<NodePtr> parents;

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

} // namespace detail

/// Shared handle to an immutable tensor value. Copies alias the same
/// storage; ops never mutate an input, so handles are safe to share.
/// Parameters are the one exception: the optimizer rewrites their data
/// in place between forward passes.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  size_t size() const;

  const std::vector<double>& data() const;
  /// Direct write access to the storage. Intended for parameter
  /// initialization and optimizer updates, not for op results.
  std::vector<double>& mutable_data();

  /// Value of a scalar (size-1) tensor.
  double value() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  /// Allocates (if needed) and zero-fills the gradient slot.
  void zero_grad();

  detail::NodePtr node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

private:
  detail::NodePtr node_;
};

/// Ordered record of executed primitive ops. While a Tape is alive it is
/// the active recording scope: any op whose inputs require gradients
/// appends itself. backward() replays the record in exact reverse
/// execution order, which is a topological order by construction, and
/// accumulates gradients additively at fan-out points.
class Tape {
public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(detail::NodePtr node);
  size_t num_recorded() const { return entries_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates through the record. The
  /// loss must be a scalar produced while this tape was active.
  void backward(const Tensor& loss);

private:
  std::vector<detail::NodePtr> entries_;
  Tape* previous_ = nullptr;
};

/// Largest elementwise |a - b|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Row-major flat index helpers for rank-2/3 tensors.
inline size_t idx2(const Shape& s, int i, int j) {
  return static_cast<size_t>(i) * s[1] + j;
}
inline size_t idx3(const Shape& s, int i, int j, int k) {
  return (static_cast<size_t>(i) * s[1] + j) * s[2] + k;
}

} // namespace gcg
