#include "stformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "stformer/errors.hpp"

namespace stf {

namespace {

using detail::Node;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

Node& input(Node& out, std::size_t i) { return *out.inputs[i]; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " +
                         shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const double* A = a.data().data();
  const double* B = b.data().data();
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(c), {a, b},
                     [m, k, n](Node& out) {
                       Node& na = input(out, 0);
                       Node& nb = input(out, 1);
                       const double* G = out.grad.data();
                       if (na.requires_grad) {
                         // dA = dC * B^T
                         auto ga = na.grad_buffer();
                         const double* B = nb.value.data();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* grow = G + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double* brow = B + p * n;
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j)
                               acc += grow[j] * brow[j];
                             ga[i * k + p] += acc;
                           }
                         }
                       }
                       if (nb.requires_grad) {
                         // dB = A^T * dC
                         auto gb = nb.grad_buffer();
                         const double* A = na.value.data();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* grow = G + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double av = A[i * k + p];
                             if (av == 0.0) continue;
                             double* gbrow = gb.data() + p * n;
                             for (std::size_t j = 0; j < n; ++j)
                               gbrow[j] += av * grow[j];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto src = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {a},
                     [r, c](Node& out) {
                       Node& in = input(out, 0);
                       auto g = in.grad_buffer();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           g[i * c + j] += out.grad[j * r + i];
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& out) {
    for (std::size_t s = 0; s < 2; ++s) {
      Node& in = input(out, s);
      if (!in.requires_grad) continue;
      auto g = in.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  const std::size_t d = bias.dim(0);
  if (x.shape().back() != d) {
    throw DimensionError("add_bias: last extent of " +
                         shape_string(x.shape()) + " differs from bias " +
                         shape_string(bias.shape()));
  }
  auto xv = x.data();
  auto bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % d];
  return make_result("add_bias", x.shape(), std::move(out), {x, bias},
                     [d](Node& out) {
                       Node& nx = input(out, 0);
                       Node& nb = input(out, 1);
                       if (nx.requires_grad) {
                         auto g = nx.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += out.grad[i];
                       }
                       if (nb.requires_grad) {
                         auto g = nb.grad_buffer();
                         for (std::size_t i = 0; i < out.grad.size(); ++i)
                           g[i % d] += out.grad[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& out) {
    Node& na = input(out, 0);
    Node& nb = input(out, 1);
    if (na.requires_grad) {
      auto g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += out.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += out.grad[i] * na.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {a},
                     [factor](Node& out) {
                       auto g = input(out, 0).grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += out.grad[i] * factor;
                     });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum", {1}, {total}, {a}, [](Node& out) {
    auto g = input(out, 0).grad_buffer();
    const double go = out.grad[0];
    for (double& v : g) v += go;
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("mean", {1}, {total / n}, {a}, [n](Node& out) {
    auto g = input(out, 0).grad_buffer();
    const double go = out.grad[0] / n;
    for (double& v : g) v += go;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) +
                         " as " + shape_string(shape));
  }
  return make_result("reshape", std::move(shape), a.to_vector(), {a},
                     [](Node& out) {
                       auto g = input(out, 0).grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += out.grad[i];
                     });
}

Tensor softmax_rows(const Tensor& m, std::span<const double> additive_mask) {
  require_rank(m, 2, "softmax_rows");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  if (!additive_mask.empty() && additive_mask.size() != rows * cols) {
    throw DimensionError("softmax_rows: mask has " +
                         std::to_string(additive_mask.size()) +
                         " entries for input " + shape_string(m.shape()));
  }
  auto x = m.data();
  std::vector<double> y(rows * cols);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rows; ++i) {
    double* yr = y.data() + i * cols;
    double row_max = kNegInf;
    for (std::size_t j = 0; j < cols; ++j) {
      double v = x[i * cols + j];
      if (!additive_mask.empty()) v += additive_mask[i * cols + j];
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw NumericalError("softmax_rows: non-finite score in row " +
                             std::to_string(i));
      }
      yr[j] = v;
      row_max = std::max(row_max, v);
    }
    if (row_max == kNegInf) {
      throw DegenerateMaskError("softmax_rows: row " + std::to_string(i) +
                                " is fully masked");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = yr[j] == kNegInf ? 0.0 : std::exp(yr[j] - row_max);
      z += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= z;
  }
  return make_result("softmax_rows", m.shape(), std::move(y), {m},
                     [rows, cols](Node& out) {
                       auto g = input(out, 0).grad_buffer();
                       for (std::size_t i = 0; i < rows; ++i) {
                         const double* yr = out.value.data() + i * cols;
                         const double* gr = out.grad.data() + i * cols;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < cols; ++j)
                           dot += yr[j] * gr[j];
                         for (std::size_t j = 0; j < cols; ++j)
                           g[i * cols + j] += yr[j] * (gr[j] - dot);
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  const std::size_t d = x.shape().back();
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    throw DimensionError("layer_norm: feature extent of " +
                         shape_string(x.shape()) + " vs gamma " +
                         shape_string(gamma.shape()) + ", beta " +
                         shape_string(beta.shape()));
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be > 0");
  const std::size_t rows = x.numel() / d;
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  std::vector<double> x_hat(xv.size());
  std::vector<double> inv_std(rows);
  std::vector<double> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      x_hat[r * d + j] = h;
      y[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(y), {x, gamma, beta},
      [rows, d, x_hat = std::move(x_hat),
       inv_std = std::move(inv_std)](Node& out) {
        Node& nx = input(out, 0);
        Node& ng = input(out, 1);
        Node& nb = input(out, 2);
        const double* G = out.grad.data();
        if (ng.requires_grad) {
          auto g = ng.grad_buffer();
          for (std::size_t i = 0; i < out.grad.size(); ++i)
            g[i % d] += G[i] * x_hat[i];
        }
        if (nb.requires_grad) {
          auto g = nb.grad_buffer();
          for (std::size_t i = 0; i < out.grad.size(); ++i) g[i % d] += G[i];
        }
        if (nx.requires_grad) {
          auto g = nx.grad_buffer();
          const double* gamma = ng.value.data();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_g = 0.0, mean_gh = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gj = G[r * d + j] * gamma[j];
              mean_g += gj;
              mean_gh += gj * x_hat[r * d + j];
            }
            mean_g *= inv_d;
            mean_gh *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double gj = G[r * d + j] * gamma[j];
              g[r * d + j] +=
                  inv_std[r] * (gj - mean_g - x_hat[r * d + j] * mean_gh);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  auto xv = x.data();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.5 * xv[i] * std::erfc(-xv[i] * std::numbers::sqrt2 / 2.0);
  }
  return make_result("gelu", x.shape(), std::move(y), {x}, [](Node& out) {
    Node& in = input(out, 0);
    auto g = in.grad_buffer();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in.value[i];
      const double cdf = 0.5 * std::erfc(-v * std::numbers::sqrt2 / 2.0);
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += out.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  auto xv = x.data();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = xv[i];
    // Overflow-safe form for either sign.
    y[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                  : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_result("sigmoid", x.shape(), std::move(y), {x}, [](Node& out) {
    auto g = input(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = out.value[i];
      g[i] += out.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride,
              Padding padding) {
  return conv1d(x, kernels, Tensor(), stride, padding);
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, Padding padding) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("conv1d: input must be [C x L] or [N x C x L], got " +
                         shape_string(x.shape()));
  }
  require_rank(kernels, 3, "conv1d");
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t c_in = x.dim(batched ? 1 : 0);
  const std::size_t len = x.dim(batched ? 2 : 1);
  const std::size_t c_out = kernels.dim(0);
  const std::size_t k = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw DimensionError("conv1d: input channels " + shape_string(x.shape()) +
                         " vs kernels " + shape_string(kernels.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw DimensionError("conv1d: bias " + shape_string(bias.shape()) +
                         " for " + std::to_string(c_out) + " output channels");
  }
  std::size_t out_len = 0, pad_left = 0, pad_total = 0;
  if (padding == Padding::same) {
    out_len = (len + stride - 1) / stride;
    const std::size_t needed = (out_len - 1) * stride + k;
    pad_total = needed > len ? needed - len : 0;
    pad_left = pad_total / 2;
  }
  if (k > len + pad_total) {
    throw DimensionError("conv1d: kernel length " + std::to_string(k) +
                         " exceeds padded input length " +
                         std::to_string(len + pad_total));
  }
  if (padding == Padding::valid) out_len = (len - k) / stride + 1;

  auto xv = x.data();
  auto wv = kernels.data();
  std::vector<double> y(batch * c_out * out_len, 0.0);
  // Output positions t whose tap `kk` lands inside [0, len).
  auto tap_range = [=](std::size_t kk) {
    // idx = t*stride + kk - pad_left must satisfy 0 <= idx < len.
    std::size_t t_lo = 0;
    if (kk < pad_left) t_lo = (pad_left - kk + stride - 1) / stride;
    std::size_t t_hi = 0;
    if (len + pad_left > kk) {
      t_hi = std::min(out_len, (len + pad_left - kk - 1) / stride + 1);
    }
    return std::pair{t_lo, std::max(t_lo, t_hi)};
  };
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < c_out; ++co) {
      double* yr = y.data() + (n * c_out + co) * out_len;
      if (bias.defined()) {
        const double b = bias.data()[co];
        for (std::size_t t = 0; t < out_len; ++t) yr[t] = b;
      }
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* xr = xv.data() + (n * c_in + ci) * len;
        const double* wr = wv.data() + (co * c_in + ci) * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double w = wr[kk];
          auto [t_lo, t_hi] = tap_range(kk);
          for (std::size_t t = t_lo; t < t_hi; ++t)
            yr[t] += w * xr[t * stride + kk - pad_left];
        }
      }
    }
  }
  Shape out_shape = batched ? Shape{batch, c_out, out_len} : Shape{c_out, out_len};
  std::vector<Tensor> inputs{x, kernels};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      "conv1d", std::move(out_shape), std::move(y), std::move(inputs),
      [=](Node& out) {
        Node& nx = input(out, 0);
        Node& nw = input(out, 1);
        const double* G = out.grad.data();
        const double* X = nx.value.data();
        const double* W = nw.value.data();
        std::span<double> gx, gw;
        if (nx.requires_grad) gx = nx.grad_buffer();
        if (nw.requires_grad) gw = nw.grad_buffer();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t co = 0; co < c_out; ++co) {
            const double* gr = G + (n * c_out + co) * out_len;
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const std::size_t xoff = (n * c_in + ci) * len;
              const std::size_t woff = (co * c_in + ci) * k;
              for (std::size_t kk = 0; kk < k; ++kk) {
                auto [t_lo, t_hi] = tap_range(kk);
                if (!gw.empty()) {
                  double acc = 0.0;
                  for (std::size_t t = t_lo; t < t_hi; ++t)
                    acc += gr[t] * X[xoff + t * stride + kk - pad_left];
                  gw[woff + kk] += acc;
                }
                if (!gx.empty()) {
                  const double w = W[woff + kk];
                  for (std::size_t t = t_lo; t < t_hi; ++t)
                    gx[xoff + t * stride + kk - pad_left] += w * gr[t];
                }
              }
            }
          }
        }
        if (out.inputs.size() > 2 && out.inputs[2]->requires_grad) {
          auto gb = out.inputs[2]->grad_buffer();
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t co = 0; co < c_out; ++co)
              for (std::size_t t = 0; t < out_len; ++t)
                gb[co] += G[(n * c_out + co) * out_len + t];
        }
      });
}

Tensor avg_pool1d(const Tensor& x, std::size_t window, std::size_t stride) {
  if (x.rank() < 1) throw DimensionError("avg_pool1d: scalar input");
  if (window < 1 || stride < 1) {
    throw std::invalid_argument("avg_pool1d: window and stride must be >= 1");
  }
  const std::size_t len = x.shape().back();
  if (window > len) {
    throw DimensionError("avg_pool1d: window " + std::to_string(window) +
                         " exceeds length " + std::to_string(len));
  }
  const std::size_t out_len = (len - window) / stride + 1;
  const std::size_t rows = x.numel() / len;
  auto xv = x.data();
  std::vector<double> y(rows * out_len);
  const double inv = 1.0 / static_cast<double>(window);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = 0.0;
      for (std::size_t w = 0; w < window; ++w)
        acc += xv[r * len + t * stride + w];
      y[r * out_len + t] = acc * inv;
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = out_len;
  return make_result("avg_pool1d", std::move(out_shape), std::move(y), {x},
                     [=](Node& out) {
                       auto g = input(out, 0).grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t t = 0; t < out_len; ++t) {
                           const double go = out.grad[r * out_len + t] * inv;
                           for (std::size_t w = 0; w < window; ++w)
                             g[r * len + t * stride + w] += go;
                         }
                     });
}

Tensor global_avg_pool(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("global_avg_pool: axis " + std::to_string(axis) +
                         " for shape " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const double inv = 1.0 / static_cast<double>(n);
  auto xv = x.data();
  std::vector<double> y(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i)
        y[o * inner + i] += xv[(o * n + a) * inner + i];
  for (double& v : y) v *= inv;
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  return make_result("global_avg_pool", std::move(out_shape), std::move(y),
                     {x}, [=](Node& out) {
                       auto g = input(out, 0).grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t a = 0; a < n; ++a)
                           for (std::size_t i = 0; i < inner; ++i)
                             g[(o * n + a) * inner + i] +=
                                 out.grad[o * inner + i] * inv;
                     });
}

Tensor dropout(const Tensor& x, double p, Mode mode, RngStream* rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " +
                                std::to_string(p));
  }
  if (mode == Mode::eval || p == 0.0) return x;
  if (rng == nullptr) {
    throw std::invalid_argument("dropout: train mode needs an rng stream");
  }
  const double keep_scale = 1.0 / (1.0 - p);
  auto xv = x.data();
  std::vector<double> factor(xv.size());
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    factor[i] = rng->uniform() < p ? 0.0 : keep_scale;
    y[i] = xv[i] * factor[i];
  }
  return make_result("dropout", x.shape(), std::move(y), {x},
                     [factor = std::move(factor)](Node& out) {
                       auto g = input(out, 0).grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += out.grad[i] * factor[i];
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin >= end || end > cols) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") of " +
                         shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  auto xv = x.data();
  std::vector<double> y(rows * w);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(xv.data() + i * cols + begin, w, y.data() + i * w);
  return make_result("slice_cols", {rows, w}, std::move(y), {x},
                     [=](Node& out) {
                       auto g = input(out, 0).grad_buffer();
                       for (std::size_t i = 0; i < rows; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           g[i * cols + begin + j] += out.grad[i * w + j];
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row mismatch " +
                           shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> y(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(pv.data() + i * widths[k], widths[k],
                  y.data() + i * total + off);
    off += widths[k];
  }
  return make_result(
      "concat_cols", {rows, total}, std::move(y),
      std::vector<Tensor>(parts.begin(), parts.end()),
      [rows, total, widths](Node& out) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          Node& in = *out.inputs[k];
          if (in.requires_grad) {
            auto g = in.grad_buffer();
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j)
                g[i * widths[k] + j] += out.grad[i * total + off + j];
          }
          off += widths[k];
        }
      });
}

Tensor concat_flat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_flat: no inputs");
  std::vector<double> y;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    auto pv = p.data();
    y.insert(y.end(), pv.begin(), pv.end());
    sizes.push_back(pv.size());
  }
  const std::size_t n = y.size();
  return make_result("concat_flat", {n}, std::move(y),
                     std::vector<Tensor>(parts.begin(), parts.end()),
                     [sizes](Node& out) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < sizes.size(); ++k) {
                         Node& in = *out.inputs[k];
                         if (in.requires_grad) {
                           auto g = in.grad_buffer();
                           for (std::size_t i = 0; i < sizes[k]; ++i)
                             g[i] += out.grad[off + i];
                         }
                         off += sizes[k];
                       }
                     });
}

}  // namespace stf
