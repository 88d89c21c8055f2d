#pragma once

#include <functional>
#include <string>

#include "mmff/ops.hpp"
#include "mmff/rng.hpp"
#include "mmff/tensor.hpp"

namespace mmff {

// Callback used to enumerate trainable tensors: (qualified name, tensor).
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

namespace init {

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor scaled_uniform(Shape shape, std::size_t fan_in, Rng& rng);
// N(0, stddev^2); used for positional encodings and summary tokens.
Tensor normal(Shape shape, double stddev, Rng& rng);
Tensor ones(Shape shape);
Tensor zeros_param(Shape shape);

}  // namespace init

// Affine map: y = x * w + b, with w [in x out], b [1 x out].
struct Linear {
  Tensor w;
  Tensor b;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Two-layer feed-forward: w2 * gelu(w1 * x + b1) + b2.
struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(std::size_t dim, std::size_t hidden, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Multi-head self-attention with full DxD projections split into heads
// after projection; head outputs are concatenated, no output projection.
struct SelfAttention {
  Tensor wq;
  Tensor wk;
  Tensor wv;
  std::size_t heads = 1;

  SelfAttention() = default;
  SelfAttention(std::size_t dim, std::size_t num_heads, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Per-row normalization over columns with per-row affine; used by the
// audio frontend where channels are rows and time runs along columns.
// Composed from primitives so gradients come for free.
Tensor instance_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                          double eps = 1e-5);

}  // namespace mmff
