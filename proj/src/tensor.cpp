#include "gcg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gcg {

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("shape has non-positive axis: " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double value) {
  size_t n = shape_numel(shape);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data.assign(n, value);
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  size_t n = shape_numel(shape);
  if (data.size() != n) {
    throw DimensionError("data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) {
  return from_data({1}, {value});
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("shape() on undefined tensor");
  return node_->shape;
}

int Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

size_t Tensor::size() const { return data().size(); }

const std::vector<double>& Tensor::data() const {
  if (!node_) throw ContractError("data() on undefined tensor");
  return node_->data;
}

std::vector<double>& Tensor::mutable_data() {
  if (!node_) throw ContractError("mutable_data() on undefined tensor");
  return node_->data;
}

double Tensor::value() const {
  const auto& d = data();
  if (d.size() != 1) throw ContractError("value() on non-scalar tensor " + shape_str(shape()));
  return d[0];
}

bool Tensor::requires_grad() const {
  return node_ && node_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool value) {
  if (!node_) throw ContractError("set_requires_grad() on undefined tensor");
  node_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size();
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad() on tensor with no accumulated gradient");
  return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  if (!node_) throw ContractError("mutable_grad() on undefined tensor");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (!node_) throw ContractError("zero_grad() on undefined tensor");
  node_->grad.assign(node_->data.size(), 0.0);
}

namespace {
thread_local Tape* g_active_tape = nullptr;
} // namespace

Tape::Tape() {
  previous_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() {
  g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(detail::NodePtr node) {
  entries_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward() on undefined tensor");
  if (loss.size() != 1) {
    throw ContractError("backward() expects a scalar loss, got " + shape_str(loss.shape()));
  }
  detail::Node* root = loss.node().get();
  root->ensure_grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    detail::Node& n = **it;
    if (!n.backprop) continue;
    if (n.grad.size() != n.data.size()) continue; // nothing flowed into this node
    n.backprop(n);
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!shape_eq(a.shape(), b.shape())) {
    throw DimensionError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

} // namespace gcg
