#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmff/errors.hpp"

namespace mmff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized like data when requires_grad
  bool requires_grad = false;
};
}  // namespace detail

// Dense N-d array of 64-bit floats, row-major. A Tensor is a cheap handle
// onto shared storage; ops return fresh tensors and never alias inputs.
// All stored values are finite: constructors and every op validate, and a
// NaN/Inf raises NumericError at the point it appears.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t size(std::size_t axis) const;
  // 2-D conveniences.
  std::size_t rows() const { return size(0); }
  std::size_t cols() const { return size(1); }

  double* data();
  const double* data() const;
  std::span<const double> values() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  // Null when the tensor does not track gradients.
  double* grad();
  const double* grad() const;
  void zero_grad();

  // Scalar access; throws ContractError unless numel() == 1.
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  // Deep copy with gradient tracking stripped.
  Tensor detached() const;
  // Deep copy preserving requires_grad (fresh zero grad buffer).
  Tensor clone() const;

  void check_finite(const char* what) const;

  // Identity of the underlying storage; used by the tape.
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op_output(Shape shape, bool track);
};

// Used by ops.cpp to allocate outputs.
Tensor make_op_output(Shape shape, bool track);

// Records the backward rule of every op executed while active. Replaying
// the rules in reverse order accumulates d(loss)/d(leaf) into each
// grad-tracking tensor exactly once per recorded use.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_rule);
  std::size_t size() const { return rules_.size(); }

  // loss must be a connected scalar; seeds its grad with 1 and replays.
  void backward(const Tensor& loss);
  void clear();

 private:
  std::vector<std::function<void()>> rules_;
};

// RAII scope making a tape the active recording target for this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Null outside any TapeScope; ops then run forward-only.
Tape* active_tape();

}  // namespace mmff
