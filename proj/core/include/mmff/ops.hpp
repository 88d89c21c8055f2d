#pragma once

#include <vector>

#include "mmff/tensor.hpp"

namespace mmff {

// Differentiable operations. Each op validates shapes, computes forward,
// checks the output for NaN/Inf, and (when a tape is active and any input
// tracks gradients) records its backward rule. Gradient conventions match
// the finite-difference checks in the test suite.

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// x: m x n, bias: 1 x n, added to every row.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

// a: m x k, b: k x n.
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-d transpose.
Tensor transpose(const Tensor& a);
// Same numel, new shape; data order unchanged.
Tensor reshape(const Tensor& a, Shape shape);

// 2-d row/column concatenation and slicing.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);

// Row-wise softmax with max-subtraction; every output row sums to 1.
Tensor softmax_rows(const Tensor& x);

// Normalizes over the last dimension (size D) at every leading position,
// then applies the per-feature affine: gain and bias both have shape [D].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Exact GELU (erf form).
Tensor gelu(const Tensor& x);

// x: C_in x T, kernels: C_out x C_in x K, zero padding both sides.
// Cross-correlation convention; output length floor((T + 2p - K)/s) + 1.
Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride,
              std::size_t padding);

// x: 1 x F x T, kernels: D x 1 x p_f x p_t, no padding. Output D x h x w
// with h = floor((F - p_f)/s_f) + 1, w = floor((T - p_t)/s_t) + 1.
Tensor conv2d_patches(const Tensor& x, const Tensor& kernels, std::size_t stride_f,
                      std::size_t stride_t);

// x: C x T -> C x target; bin i averages input range
// [floor(i*T/target), ceil((i+1)*T/target)).
Tensor adaptive_avg_pool(const Tensor& x, std::size_t target);

// x: D x h0 x w0 -> D x h x w, align-corners bilinear interpolation.
Tensor bilinear_resize2d(const Tensor& x, std::size_t out_h, std::size_t out_w);

// x: m x n -> 1 x n, arithmetic mean over rows.
Tensor mean_rows(const Tensor& x);

// Sum of all elements -> scalar.
Tensor sum_all(const Tensor& x);

// Rescales a tensor to sum to 1: y = x / sum(x). Sum must be nonzero.
Tensor normalize_sum(const Tensor& x);

// Mean softmax cross-entropy over rows of logits (B x C); labels in [0, C).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Populates grads of every tracked tensor reachable from loss through the
// active tape. Thin wrapper over Tape::backward for call-site symmetry.
void backward(Tape& tape, const Tensor& loss);

// While installed (RAII), records the row-sum deviation of every softmax
// computed on this thread. Used by normalization property checks.
class SoftmaxProbe {
 public:
  SoftmaxProbe();
  ~SoftmaxProbe();
  SoftmaxProbe(const SoftmaxProbe&) = delete;
  SoftmaxProbe& operator=(const SoftmaxProbe&) = delete;

  std::size_t rows_seen() const { return rows_seen_; }
  double max_row_sum_error() const { return max_err_; }

  void note(double row_sum_error, std::size_t rows);

 private:
  SoftmaxProbe* previous_;
  std::size_t rows_seen_ = 0;
  double max_err_ = 0.0;
};

}  // namespace mmff
