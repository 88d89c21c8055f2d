#include "mmff/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mmff {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

namespace {

std::shared_ptr<detail::TensorNode> make_node(Shape shape, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  std::size_t n = shape_numel(shape);
  node->shape = std::move(shape);
  node->data.assign(n, 0.0);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(n, 0.0);
  return node;
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

Tensor make_op_output(Shape shape, bool track) {
  Tensor t;
  t.node_ = make_node(std::move(shape), track);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return make_op_output(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (!std::isfinite(value)) throw NumericError("Tensor::full: non-finite fill value");
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.node_->data) x = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("Tensor::from_data: " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  Tensor t = zeros(std::move(shape), requires_grad);
  t.node_->data = std::move(values);
  t.check_finite("Tensor::from_data");
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("Tensor: use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::size_t Tensor::size(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("Tensor::size: axis out of range");
  return s[axis];
}

double* Tensor::data() {
  if (!node_) throw ContractError("Tensor: use of undefined tensor");
  return node_->data.data();
}

const double* Tensor::data() const {
  if (!node_) throw ContractError("Tensor: use of undefined tensor");
  return node_->data.data();
}

std::span<const double> Tensor::values() const {
  return {data(), numel()};
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw ContractError("Tensor: use of undefined tensor");
  node_->requires_grad = on;
  if (on && node_->grad.size() != node_->data.size())
    node_->grad.assign(node_->data.size(), 0.0);
  if (!on) node_->grad.clear();
}

double* Tensor::grad() {
  if (!node_ || !node_->requires_grad) return nullptr;
  return node_->grad.data();
}

const double* Tensor::grad() const {
  if (!node_ || !node_->requires_grad) return nullptr;
  return node_->grad.data();
}

void Tensor::zero_grad() {
  if (node_ && node_->requires_grad)
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("Tensor::item: tensor is not scalar");
  return data()[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw DimensionError("Tensor::at: index out of range");
  return data()[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (ndim() != 2) throw DimensionError("Tensor::at(i,j): tensor is not 2-d");
  if (i >= size(0) || j >= size(1)) throw DimensionError("Tensor::at: index out of range");
  return data()[i * size(1) + j];
}

double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  if (ndim() != 3) throw DimensionError("Tensor::at(i,j,k): tensor is not 3-d");
  if (i >= size(0) || j >= size(1) || k >= size(2))
    throw DimensionError("Tensor::at: index out of range");
  return data()[(i * size(1) + j) * size(2) + k];
}

Tensor Tensor::detached() const {
  if (!node_) return Tensor();
  Tensor t = zeros(node_->shape, false);
  t.node_->data = node_->data;
  return t;
}

Tensor Tensor::clone() const {
  if (!node_) return Tensor();
  Tensor t = zeros(node_->shape, node_->requires_grad);
  t.node_->data = node_->data;
  return t;
}

void Tensor::check_finite(const char* what) const {
  for (double x : values())
    if (!std::isfinite(x))
      throw NumericError(std::string(what) + ": non-finite value in tensor " +
                         shape_str(shape()));
}

void Tape::record(std::function<void()> backward_rule) {
  rules_.push_back(std::move(backward_rule));
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ContractError("Tape::backward: loss must be scalar");
  if (!loss.requires_grad())
    throw ContractError("Tape::backward: loss is not connected to the tape");
  auto node = loss.node();
  node->grad[0] += 1.0;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
}

void Tape::clear() { rules_.clear(); }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

}  // namespace mmff
