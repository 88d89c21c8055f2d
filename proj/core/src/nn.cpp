#include "mmff/nn.hpp"

#include <cmath>

namespace mmff {

namespace init {

Tensor scaled_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

Tensor normal(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, stddev);
  return t;
}

Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

}  // namespace init

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : w(init::scaled_uniform({in, out}, in, rng)), b(init::zeros_param({1, out})) {}

Tensor Linear::forward(const Tensor& x) const { return add_rowwise(matmul(x, w), b); }

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".w", w);
  fn(prefix + ".b", b);
}

Mlp::Mlp(std::size_t dim, std::size_t hidden, Rng& rng)
    : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

Tensor Mlp::forward(const Tensor& x) const {
  return fc2.forward(gelu(fc1.forward(x)));
}

void Mlp::visit(const std::string& prefix, const ParamVisitor& fn) {
  fc1.visit(prefix + ".fc1", fn);
  fc2.visit(prefix + ".fc2", fn);
}

SelfAttention::SelfAttention(std::size_t dim, std::size_t num_heads, Rng& rng)
    : wq(init::scaled_uniform({dim, dim}, dim, rng)),
      wk(init::scaled_uniform({dim, dim}, dim, rng)),
      wv(init::scaled_uniform({dim, dim}, dim, rng)),
      heads(num_heads) {
  if (num_heads == 0 || dim % num_heads != 0)
    throw ConfigError("SelfAttention: dim must be divisible by heads");
}

Tensor SelfAttention::forward(const Tensor& x) const {
  std::size_t dim = wq.cols();
  std::size_t head_dim = dim / heads;
  Tensor q = matmul(x, wq);
  Tensor k = matmul(x, wk);
  Tensor v = matmul(x, wv);
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * head_dim, head_dim);
    Tensor kh = slice_cols(k, h * head_dim, head_dim);
    Tensor vh = slice_cols(v, h * head_dim, head_dim);
    Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_d));
    outs.push_back(matmul(attn, vh));
  }
  return heads == 1 ? outs.front() : concat_cols(outs);
}

void SelfAttention::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".wq", wq);
  fn(prefix + ".wk", wk);
  fn(prefix + ".wv", wv);
}

Tensor instance_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                          double eps) {
  if (x.ndim() != 2) throw DimensionError("instance_norm_rows: expected 2-d input");
  std::size_t c = x.rows(), t = x.cols();
  if (gain.ndim() != 1 || gain.size(0) != c || bias.ndim() != 1 || bias.size(0) != c)
    throw DimensionError("instance_norm_rows: gain/bias must be 1-d of size " +
                         std::to_string(c));
  // Normalize each row over time using unit layer_norm, then apply the
  // per-row affine as rank-1 outer products with a constant ones row.
  Tensor unit_gain = Tensor::full({t}, 1.0);
  Tensor zero_bias = Tensor::zeros({t});
  Tensor normalized = layer_norm(x, unit_gain, zero_bias, eps);
  Tensor ones_row = Tensor::full({1, t}, 1.0);
  Tensor g_col = reshape(gain, {c, 1});
  Tensor b_col = reshape(bias, {c, 1});
  return add(mul(normalized, matmul(g_col, ones_row)), matmul(b_col, ones_row));
}

}  // namespace mmff
