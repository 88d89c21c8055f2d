#include "mmff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>

namespace mmff {

namespace {

thread_local SoftmaxProbe* g_probe = nullptr;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2)
    throw DimensionError(std::string(op) + ": expected 2-d tensor, got " +
                         shape_str(t.shape()));
}

using Node = std::shared_ptr<detail::TensorNode>;

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T, B stored n x k
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[m x n] += A^T * B, A stored k x m, B stored k x n
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  bool track = tracking({&a, &b});
  Tensor out = make_op_output(a.shape(), track);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  out.check_finite("add");
  if (track) {
    Node an = a.node(), bn = b.node(), on = out.node();
    active_tape()->record([an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  bool track = tracking({&a, &b});
  Tensor out = make_op_output(a.shape(), track);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
  out.check_finite("sub");
  if (track) {
    Node an = a.node(), bn = b.node(), on = out.node();
    active_tape()->record([an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  bool track = tracking({&a, &b});
  Tensor out = make_op_output(a.shape(), track);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  out.check_finite("mul");
  if (track) {
    Node an = a.node(), bn = b.node(), on = out.node();
    active_tape()->record([an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->data[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->data[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  if (!std::isfinite(factor)) throw NumericError("scale: non-finite factor");
  bool track = tracking({&a});
  Tensor out = make_op_output(a.shape(), track);
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * factor;
  out.check_finite("scale");
  if (track) {
    Node an = a.node(), on = out.node();
    active_tape()->record([an, on, factor] {
      if (!an->requires_grad) return;
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += factor * on->grad[i];
    });
  }
  return out;
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_rowwise");
  if (bias.ndim() != 2 || bias.rows() != 1 || bias.cols() != x.cols())
    throw DimensionError("add_rowwise: bias must be 1x" + std::to_string(x.cols()));
  bool track = tracking({&x, &bias});
  Tensor out = make_op_output(x.shape(), track);
  std::size_t m = x.rows(), n = x.cols();
  const double* px = x.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
  out.check_finite("add_rowwise");
  if (track) {
    Node xn = x.node(), bn = bias.node(), on = out.node();
    active_tape()->record([xn, bn, on, m, n] {
      const auto& g = on->grad;
      if (xn->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) bn->grad[j] += g[i * n + j];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  bool track = tracking({&a, &b});
  Tensor out = make_op_output({m, n}, track);
  gemm_nn(m, k, n, a.data(), b.data(), out.data());
  out.check_finite("matmul");
  if (track) {
    Node an = a.node(), bn = b.node(), on = out.node();
    active_tape()->record([an, bn, on, m, k, n] {
      const double* g = on->grad.data();
      if (an->requires_grad) gemm_nt(m, n, k, g, bn->data.data(), an->grad.data());
      if (bn->requires_grad) gemm_tn(k, m, n, an->data.data(), g, bn->grad.data());
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  std::size_t m = a.rows(), n = a.cols();
  bool track = tracking({&a});
  Tensor out = make_op_output({n, m}, track);
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
  if (track) {
    Node an = a.node(), on = out.node();
    active_tape()->record([an, on, m, n] {
      if (!an->requires_grad) return;
      const double* g = on->grad.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
  bool track = tracking({&a});
  Tensor out = make_op_output(std::move(shape), track);
  std::copy(a.data(), a.data() + a.numel(), out.data());
  if (track) {
    Node an = a.node(), on = out.node();
    active_tape()->record([an, on] {
      if (!an->requires_grad) return;
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no parts");
  std::size_t n = 0, m = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (&p == &parts.front())
      n = p.cols();
    else if (p.cols() != n)
      throw DimensionError("concat_rows: column mismatch");
    m += p.rows();
  }
  bool track = false;
  for (const Tensor& p : parts) track = track || tracking({&p});
  Tensor out = make_op_output({m, n}, track);
  double* po = out.data();
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), po);
    po += p.numel();
  }
  if (track) {
    std::vector<Node> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    Node on = out.node();
    active_tape()->record([nodes, on] {
      std::size_t offset = 0;
      for (const Node& nd : nodes) {
        if (nd->requires_grad)
          for (std::size_t i = 0; i < nd->data.size(); ++i)
            nd->grad[i] += on->grad[offset + i];
        offset += nd->data.size();
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_2d(a, "slice_rows");
  if (start + count > a.rows()) throw DimensionError("slice_rows: range out of bounds");
  std::size_t n = a.cols();
  bool track = tracking({&a});
  Tensor out = make_op_output({count, n}, track);
  std::copy(a.data() + start * n, a.data() + (start + count) * n, out.data());
  if (track) {
    Node an = a.node(), on = out.node();
    active_tape()->record([an, on, start, n] {
      if (!an->requires_grad) return;
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[start * n + i] += on->grad[i];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no parts");
  std::size_t m = 0, n = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (&p == &parts.front())
      m = p.rows();
    else if (p.rows() != m)
      throw DimensionError("concat_cols: row mismatch");
    n += p.cols();
  }
  bool track = false;
  for (const Tensor& p : parts) track = track || tracking({&p});
  Tensor out = make_op_output({m, n}, track);
  double* po = out.data();
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    std::size_t pn = p.cols();
    const double* pp = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(pp + i * pn, pp + (i + 1) * pn, po + i * n + col);
    col += pn;
  }
  if (track) {
    std::vector<Node> nodes;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
      nodes.push_back(p.node());
      widths.push_back(p.cols());
    }
    Node on = out.node();
    active_tape()->record([nodes, widths, on, m, n] {
      std::size_t col = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const Node& nd = nodes[k];
        std::size_t pn = widths[k];
        if (nd->requires_grad)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pn; ++j)
              nd->grad[i * pn + j] += on->grad[i * n + col + j];
        col += pn;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_2d(a, "slice_cols");
  if (start + count > a.cols()) throw DimensionError("slice_cols: range out of bounds");
  std::size_t m = a.rows(), n = a.cols();
  bool track = tracking({&a});
  Tensor out = make_op_output({m, count}, track);
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy(pa + i * n + start, pa + i * n + start + count, po + i * count);
  if (track) {
    Node an = a.node(), on = out.node();
    active_tape()->record([an, on, start, count, m, n] {
      if (!an->requires_grad) return;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          an->grad[i * n + start + j] += on->grad[i * count + j];
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  x.check_finite("softmax_rows input");
  std::size_t m = x.rows(), n = x.cols();
  bool track = tracking({&x});
  Tensor out = make_op_output({m, n}, track);
  const double* px = x.data();
  double* po = out.data();
  double max_err = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = px + i * n;
    double hi = row[0];
    for (std::size_t j = 1; j < n; ++j) hi = std::max(hi, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double e = std::exp(row[j] - hi);
      po[i * n + j] = e;
      sum += e;
    }
    double check = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      po[i * n + j] /= sum;
      check += po[i * n + j];
    }
    max_err = std::max(max_err, std::abs(check - 1.0));
  }
  if (g_probe) g_probe->note(max_err, m);
  out.check_finite("softmax_rows");
  if (track) {
    Node xn = x.node(), on = out.node();
    active_tape()->record([xn, on, m, n] {
      if (!xn->requires_grad) return;
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = on->data.data() + i * n;
        const double* g = on->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        double* dx = xn->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() < 1) throw DimensionError("layer_norm: scalar input");
  std::size_t dim = x.shape().back();
  if (gain.ndim() != 1 || gain.size(0) != dim || bias.ndim() != 1 || bias.size(0) != dim)
    throw DimensionError("layer_norm: gain/bias must be 1-d of size " +
                         std::to_string(dim));
  std::size_t rows = x.numel() / dim;
  bool track = tracking({&x, &gain, &bias});
  Tensor out = make_op_output(x.shape(), track);
  const double* px = x.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  double* po = out.data();
  // Saved for backward: per-position normalized values and inverse stddev.
  std::vector<double> xhat(track ? x.numel() : 0);
  std::vector<double> inv_std(track ? rows : 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * dim;
    double mean = 0.0;
    for (std::size_t j = 0; j < dim; ++j) mean += row[j];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(dim);
    double is = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < dim; ++j) {
      double xh = (row[j] - mean) * is;
      po[r * dim + j] = pg[j] * xh + pb[j];
      if (track) xhat[r * dim + j] = xh;
    }
    if (track) inv_std[r] = is;
  }
  out.check_finite("layer_norm");
  if (track) {
    Node xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    active_tape()->record(
        [xn, gn, bn, on, rows, dim, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
          const double* g = on->grad.data();
          const double* pg = gn->data.data();
          for (std::size_t r = 0; r < rows; ++r) {
            const double* grow = g + r * dim;
            const double* xh = xhat.data() + r * dim;
            if (gn->requires_grad)
              for (std::size_t j = 0; j < dim; ++j) gn->grad[j] += grow[j] * xh[j];
            if (bn->requires_grad)
              for (std::size_t j = 0; j < dim; ++j) bn->grad[j] += grow[j];
            if (xn->requires_grad) {
              double m1 = 0.0, m2 = 0.0;
              for (std::size_t j = 0; j < dim; ++j) {
                double gh = grow[j] * pg[j];
                m1 += gh;
                m2 += gh * xh[j];
              }
              m1 /= static_cast<double>(dim);
              m2 /= static_cast<double>(dim);
              double* dx = xn->grad.data() + r * dim;
              for (std::size_t j = 0; j < dim; ++j) {
                double gh = grow[j] * pg[j];
                dx[j] += (gh - m1 - xh[j] * m2) * inv_std[r];
              }
            }
          }
        });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  bool track = tracking({&x});
  Tensor out = make_op_output(x.shape(), track);
  const double* px = x.data();
  double* po = out.data();
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double phi = 0.5 * (1.0 + std::erf(px[i] * inv_sqrt2));
    po[i] = px[i] * phi;
  }
  out.check_finite("gelu");
  if (track) {
    Node xn = x.node(), on = out.node();
    active_tape()->record([xn, on] {
      if (!xn->requires_grad) return;
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        double v = xn->data[i];
        double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        xn->grad[i] += on->grad[i] * (phi + v * pdf);
      }
    });
  }
  return out;
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
  require_2d(x, "conv1d");
  if (kernels.ndim() != 3) throw DimensionError("conv1d: kernels must be 3-d");
  if (stride == 0) throw ArgumentError("conv1d: stride must be >= 1");
  std::size_t c_in = x.rows(), t_in = x.cols();
  std::size_t c_out = kernels.size(0), kc = kernels.size(1), kw = kernels.size(2);
  if (kc != c_in)
    throw DimensionError("conv1d: kernel channels " + std::to_string(kc) +
                         " vs input channels " + std::to_string(c_in));
  if (t_in + 2 * padding < kw)
    throw DimensionError("conv1d: kernel larger than padded input");
  std::size_t t_out = (t_in + 2 * padding - kw) / stride + 1;
  bool track = tracking({&x, &kernels});
  Tensor out = make_op_output({c_out, t_out}, track);
  const double* px = x.data();
  const double* pk = kernels.data();
  double* po = out.data();
  for (std::size_t co = 0; co < c_out; ++co)
    for (std::size_t to = 0; to < t_out; ++to) {
      double acc = 0.0;
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* xr = px + ci * t_in;
        const double* kr = pk + (co * c_in + ci) * kw;
        for (std::size_t k = 0; k < kw; ++k) {
          std::ptrdiff_t pos =
              static_cast<std::ptrdiff_t>(to * stride + k) - static_cast<std::ptrdiff_t>(padding);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(t_in)) acc += xr[pos] * kr[k];
        }
      }
      po[co * t_out + to] = acc;
    }
  out.check_finite("conv1d");
  if (track) {
    Node xn = x.node(), kn = kernels.node(), on = out.node();
    active_tape()->record([xn, kn, on, c_in, t_in, c_out, kw, t_out, stride, padding] {
      const double* g = on->grad.data();
      for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t to = 0; to < t_out; ++to) {
          double gv = g[co * t_out + to];
          if (gv == 0.0) continue;
          for (std::size_t ci = 0; ci < c_in; ++ci)
            for (std::size_t k = 0; k < kw; ++k) {
              std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(to * stride + k) -
                                   static_cast<std::ptrdiff_t>(padding);
              if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(t_in)) continue;
              std::size_t ki = (co * c_in + ci) * kw + k;
              if (xn->requires_grad) xn->grad[ci * t_in + pos] += gv * kn->data[ki];
              if (kn->requires_grad) kn->grad[ki] += gv * xn->data[ci * t_in + pos];
            }
        }
    });
  }
  return out;
}

Tensor conv2d_patches(const Tensor& x, const Tensor& kernels, std::size_t stride_f,
                      std::size_t stride_t) {
  if (x.ndim() != 3 || x.size(0) != 1)
    throw DimensionError("conv2d_patches: input must be 1xFxT, got " +
                         shape_str(x.shape()));
  if (kernels.ndim() != 4 || kernels.size(1) != 1)
    throw DimensionError("conv2d_patches: kernels must be Dx1xPfxPt");
  if (stride_f == 0 || stride_t == 0)
    throw ArgumentError("conv2d_patches: strides must be >= 1");
  std::size_t f_in = x.size(1), t_in = x.size(2);
  std::size_t d = kernels.size(0), pf = kernels.size(2), pt = kernels.size(3);
  if (f_in < pf || t_in < pt)
    throw DimensionError("conv2d_patches: patch larger than input");
  std::size_t h = (f_in - pf) / stride_f + 1;
  std::size_t w = (t_in - pt) / stride_t + 1;
  bool track = tracking({&x, &kernels});
  Tensor out = make_op_output({d, h, w}, track);
  const double* px = x.data();
  const double* pk = kernels.data();
  double* po = out.data();
  for (std::size_t dd = 0; dd < d; ++dd)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double acc = 0.0;
        const double* kr = pk + dd * pf * pt;
        for (std::size_t u = 0; u < pf; ++u)
          for (std::size_t v = 0; v < pt; ++v)
            acc += px[(i * stride_f + u) * t_in + (j * stride_t + v)] * kr[u * pt + v];
        po[(dd * h + i) * w + j] = acc;
      }
  out.check_finite("conv2d_patches");
  if (track) {
    Node xn = x.node(), kn = kernels.node(), on = out.node();
    active_tape()->record([xn, kn, on, f_in, t_in, d, pf, pt, h, w, stride_f, stride_t] {
      (void)f_in;
      const double* g = on->grad.data();
      for (std::size_t dd = 0; dd < d; ++dd)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            double gv = g[(dd * h + i) * w + j];
            if (gv == 0.0) continue;
            for (std::size_t u = 0; u < pf; ++u)
              for (std::size_t v = 0; v < pt; ++v) {
                std::size_t xi = (i * stride_f + u) * t_in + (j * stride_t + v);
                std::size_t ki = dd * pf * pt + u * pt + v;
                if (xn->requires_grad) xn->grad[xi] += gv * kn->data[ki];
                if (kn->requires_grad) kn->grad[ki] += gv * xn->data[xi];
              }
          }
    });
  }
  return out;
}

Tensor adaptive_avg_pool(const Tensor& x, std::size_t target) {
  require_2d(x, "adaptive_avg_pool");
  if (target == 0) throw ArgumentError("adaptive_avg_pool: target must be >= 1");
  std::size_t c = x.rows(), t = x.cols();
  if (t == 0) throw ArgumentError("adaptive_avg_pool: empty input");
  bool track = tracking({&x});
  Tensor out = make_op_output({c, target}, track);
  const double* px = x.data();
  double* po = out.data();
  std::vector<std::size_t> lo(target), hi(target);
  for (std::size_t i = 0; i < target; ++i) {
    lo[i] = i * t / target;
    hi[i] = ((i + 1) * t + target - 1) / target;  // ceil
  }
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < target; ++i) {
      double acc = 0.0;
      for (std::size_t j = lo[i]; j < hi[i]; ++j) acc += px[ci * t + j];
      po[ci * target + i] = acc / static_cast<double>(hi[i] - lo[i]);
    }
  out.check_finite("adaptive_avg_pool");
  if (track) {
    Node xn = x.node(), on = out.node();
    active_tape()->record([xn, on, c, t, target, lo, hi] {
      if (!xn->requires_grad) return;
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < target; ++i) {
          double gv = on->grad[ci * target + i] / static_cast<double>(hi[i] - lo[i]);
          for (std::size_t j = lo[i]; j < hi[i]; ++j) xn->grad[ci * t + j] += gv;
        }
    });
  }
  return out;
}

Tensor bilinear_resize2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.ndim() != 3) throw DimensionError("bilinear_resize2d: input must be DxHxW");
  if (out_h == 0 || out_w == 0)
    throw ArgumentError("bilinear_resize2d: target sizes must be >= 1");
  std::size_t d = x.size(0), h0 = x.size(1), w0 = x.size(2);
  if (h0 == 0 || w0 == 0) throw ArgumentError("bilinear_resize2d: empty input");
  bool track = tracking({&x});
  Tensor out = make_op_output({d, out_h, out_w}, track);

  // Align-corners sampling grid; corner samples land exactly on corners.
  auto src_coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    if (n_out <= 1 || n_in <= 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(n_in - 1) /
           static_cast<double>(n_out - 1);
  };

  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out_h; ++i) {
    double fy = src_coord(i, out_h, h0);
    std::size_t y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, h0 - 1);
    double wy = fy - static_cast<double>(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      double fx = src_coord(j, out_w, w0);
      std::size_t x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, w0 - 1);
      double wx = fx - static_cast<double>(x0);
      for (std::size_t dd = 0; dd < d; ++dd) {
        const double* plane = px + dd * h0 * w0;
        double v = (1.0 - wy) * ((1.0 - wx) * plane[y0 * w0 + x0] + wx * plane[y0 * w0 + x1]) +
                   wy * ((1.0 - wx) * plane[y1 * w0 + x0] + wx * plane[y1 * w0 + x1]);
        po[(dd * out_h + i) * out_w + j] = v;
      }
    }
  }
  out.check_finite("bilinear_resize2d");
  if (track) {
    Node xn = x.node(), on = out.node();
    active_tape()->record([xn, on, d, h0, w0, out_h, out_w, src_coord] {
      if (!xn->requires_grad) return;
      const double* g = on->grad.data();
      for (std::size_t i = 0; i < out_h; ++i) {
        double fy = src_coord(i, out_h, h0);
        std::size_t y0 = static_cast<std::size_t>(fy);
        std::size_t y1 = std::min(y0 + 1, h0 - 1);
        double wy = fy - static_cast<double>(y0);
        for (std::size_t j = 0; j < out_w; ++j) {
          double fx = src_coord(j, out_w, w0);
          std::size_t x0 = static_cast<std::size_t>(fx);
          std::size_t x1 = std::min(x0 + 1, w0 - 1);
          double wx = fx - static_cast<double>(x0);
          for (std::size_t dd = 0; dd < d; ++dd) {
            double gv = g[(dd * out_h + i) * out_w + j];
            double* plane = xn->grad.data() + dd * h0 * w0;
            plane[y0 * w0 + x0] += gv * (1.0 - wy) * (1.0 - wx);
            plane[y0 * w0 + x1] += gv * (1.0 - wy) * wx;
            plane[y1 * w0 + x0] += gv * wy * (1.0 - wx);
            plane[y1 * w0 + x1] += gv * wy * wx;
          }
        }
      }
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x) {
  require_2d(x, "mean_rows");
  std::size_t m = x.rows(), n = x.cols();
  if (m == 0) throw ArgumentError("mean_rows: empty input");
  bool track = tracking({&x});
  Tensor out = make_op_output({1, n}, track);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) po[j] += px[i * n + j];
  for (std::size_t j = 0; j < n; ++j) po[j] /= static_cast<double>(m);
  out.check_finite("mean_rows");
  if (track) {
    Node xn = x.node(), on = out.node();
    active_tape()->record([xn, on, m, n] {
      if (!xn->requires_grad) return;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          xn->grad[i * n + j] += on->grad[j] / static_cast<double>(m);
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  bool track = tracking({&x});
  Tensor out = make_op_output({1}, track);
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.data()[0] = acc;
  out.check_finite("sum_all");
  if (track) {
    Node xn = x.node(), on = out.node();
    active_tape()->record([xn, on] {
      if (!xn->requires_grad) return;
      double g = on->grad[0];
      for (double& dv : xn->grad) dv += g;
    });
  }
  return out;
}

Tensor normalize_sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  if (std::abs(total) < 1e-300) throw NumericError("normalize_sum: sum is zero");
  bool track = tracking({&x});
  Tensor out = make_op_output(x.shape(), track);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) po[i] = px[i] / total;
  out.check_finite("normalize_sum");
  if (track) {
    Node xn = x.node(), on = out.node();
    active_tape()->record([xn, on, total] {
      if (!xn->requires_grad) return;
      double dot = 0.0;
      for (std::size_t i = 0; i < on->grad.size(); ++i) dot += on->grad[i] * on->data[i];
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        xn->grad[i] += (on->grad[i] - dot) / total;
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_2d(logits, "softmax_cross_entropy");
  std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b)
    throw DimensionError("softmax_cross_entropy: batch " + std::to_string(b) + " vs " +
                         std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw ArgumentError("softmax_cross_entropy: label out of range");
  bool track = tracking({&logits});
  Tensor out = make_op_output({1}, track);
  const double* pl = logits.data();
  std::vector<double> probs(track ? b * c : 0);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = pl + i * c;
    double hi = row[0];
    for (std::size_t j = 1; j < c; ++j) hi = std::max(hi, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - hi);
    double lse = hi + std::log(sum);
    loss += lse - row[labels[i]];
    if (track)
      for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
  }
  out.data()[0] = loss / static_cast<double>(b);
  out.check_finite("softmax_cross_entropy");
  if (track) {
    Node ln = logits.node(), on = out.node();
    active_tape()->record([ln, on, b, c, labels, probs = std::move(probs)] {
      if (!ln->requires_grad) return;
      double g = on->grad[0] / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          double delta = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
          ln->grad[i * c + j] += g * (probs[i * c + j] - delta);
        }
    });
  }
  return out;
}

void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

SoftmaxProbe::SoftmaxProbe() : previous_(g_probe) { g_probe = this; }

SoftmaxProbe::~SoftmaxProbe() { g_probe = previous_; }

void SoftmaxProbe::note(double row_sum_error, std::size_t rows) {
  rows_seen_ += rows;
  max_err_ = std::max(max_err_, row_sum_error);
  if (previous_) previous_->note(row_sum_error, rows);
}

}  // namespace mmff
