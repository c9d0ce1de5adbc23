#include "c2f/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace c2f::ops {

using detail::TensorNode;

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(),
        std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
            " vs " + shape_str(b.shape()));
}

void check_finite(const char* op, const Tensor& a) {
  for (double v : a.values()) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(op) + ": non-finite input");
    }
  }
}

Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b,
                          double (*fwd)(double, double),
                          void (*bwd)(double g, double av, double bv,
                                      double& da, double& db)) {
  check_same_shape(op, a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fwd(a.at(i), b.at(i));
  }
  return make_op(op, a.shape(), std::move(out), {a, b},
                 [bwd](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   TensorNode& b = *self.parents[1];
                   if (a.requires_grad) a.ensure_grad();
                   if (b.requires_grad) b.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     double da = 0.0, db = 0.0;
                     bwd(self.grad[i], a.values[i], b.values[i], da, db);
                     if (a.requires_grad) a.grad[i] += da;
                     if (b.requires_grad) b.grad[i] += db;
                   }
                 });
}

Tensor elementwise_unary(const char* op, const Tensor& a,
                         double (*fwd)(double),
                         double (*dydx)(double x, double y)) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.at(i));
  return make_op(op, a.shape(), std::move(out), {a},
                 [dydx](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     a.grad[i] += self.grad[i] * dydx(a.values[i], self.values[i]);
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double av, double bv, double& da, double& db) {
        da = g * bv;
        db = g * av;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return elementwise_binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double g, double av, double bv, double& da, double& db) {
        da = g / bv;
        db = -g * av / (bv * bv);
      });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * s;
  return make_op("scale", a.shape(), std::move(out), {a},
                 [s](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     a.grad[i] += self.grad[i] * s;
                   }
                 });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + s;
  return make_op("add_scalar", a.shape(), std::move(out), {a},
                 [](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     a.grad[i] += self.grad[i];
                   }
                 });
}

Tensor mul_scalar_t(const Tensor& a, const Tensor& s) {
  check(s.numel() == 1, "mul_scalar_t: multiplier must be a one-element "
                        "tensor, got " + shape_str(s.shape()));
  const double sv = s.at(0);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * sv;
  return make_op("mul_scalar_t", a.shape(), std::move(out), {a, s},
                 [](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   TensorNode& s = *self.parents[1];
                   const double sv = s.values[0];
                   if (a.requires_grad) {
                     a.ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) {
                       a.grad[i] += self.grad[i] * sv;
                     }
                   }
                   if (s.requires_grad) {
                     s.ensure_grad();
                     double acc = 0.0;
                     for (std::size_t i = 0; i < self.grad.size(); ++i) {
                       acc += self.grad[i] * a.values[i];
                     }
                     s.grad[0] += acc;
                   }
                 });
}

Tensor div_scalar_t(const Tensor& a, const Tensor& s) {
  check(s.numel() == 1, "div_scalar_t: divisor must be a one-element tensor, "
                        "got " + shape_str(s.shape()));
  const double sv = s.at(0);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) / sv;
  return make_op("div_scalar_t", a.shape(), std::move(out), {a, s},
                 [](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   TensorNode& s = *self.parents[1];
                   const double sv = s.values[0];
                   if (a.requires_grad) {
                     a.ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) {
                       a.grad[i] += self.grad[i] / sv;
                     }
                   }
                   if (s.requires_grad) {
                     s.ensure_grad();
                     double acc = 0.0;
                     for (std::size_t i = 0; i < self.grad.size(); ++i) {
                       acc += self.grad[i] * a.values[i];
                     }
                     s.grad[0] -= acc / (sv * sv);
                   }
                 });
}

Tensor neg(const Tensor& a) {
  return scale(a, -1.0);
}

Tensor relu(const Tensor& a) {
  check_finite("relu", a);
  return elementwise_unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  check_finite("sigmoid", a);
  return elementwise_unary(
      "sigmoid", a,
      [](double x) {
        double s;
        if (x >= 0.0) {
          s = 1.0 / (1.0 + std::exp(-x));
        } else {
          const double e = std::exp(x);
          s = e / (1.0 + e);
        }
        // Keep the output strictly inside (0,1) even where the exact value
        // rounds to an endpoint at double precision.
        if (s <= 0.0) s = std::numeric_limits<double>::denorm_min();
        if (s >= 1.0) s = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
        return s;
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sqrt(const Tensor& a) {
  return elementwise_unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& a) {
  return elementwise_unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  check(lo <= hi, "clamp: lo > hi");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(std::max(a.at(i), lo), hi);
  }
  return make_op("clamp", a.shape(), std::move(out), {a},
                 [lo, hi](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double x = a.values[i];
                     if (x > lo && x < hi) a.grad[i] += self.grad[i];
                   }
                 });
}

Tensor clamp_box(const Tensor& a, const std::vector<double>& lo,
                 const std::vector<double>& hi) {
  check(lo.size() == a.numel() && hi.size() == a.numel(),
        "clamp_box: bound count does not match tensor size");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    check(lo[i] <= hi[i], "clamp_box: lo > hi at element " + std::to_string(i));
    out[i] = std::min(std::max(a.at(i), lo[i]), hi[i]);
  }
  return make_op("clamp_box", a.shape(), std::move(out), {a},
                 [lo, hi](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double x = a.values[i];
                     if (x > lo[i] && x < hi[i]) a.grad[i] += self.grad[i];
                   }
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check(shape_numel(shape) == a.numel(),
        "reshape: cannot view " + shape_str(a.shape()) + " as " +
            shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op("reshape", std::move(shape), std::move(out), {a},
                 [](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     a.grad[i] += self.grad[i];
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  check(a.shape().size() == 2, "transpose: expects a 2-D tensor, got " +
                                   shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.numel());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[j * m + i] = a.at(i * n + j);
  }
  return make_op("transpose", {n, m}, std::move(out), {a},
                 [m, n](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (int i = 0; i < m; ++i) {
                     for (int j = 0; j < n; ++j) {
                       a.grad[i * n + j] += self.grad[j * m + i];
                     }
                   }
                 });
}

Tensor flat_slice(const Tensor& a, int start, int len) {
  check(start >= 0 && len >= 0 &&
            static_cast<std::size_t>(start + len) <= a.numel(),
        "flat_slice: window [" + std::to_string(start) + "," +
            std::to_string(start + len) + ") outside tensor of " +
            std::to_string(a.numel()) + " elements");
  std::vector<double> out(a.values().begin() + start,
                          a.values().begin() + start + len);
  return make_op("flat_slice", {len}, std::move(out), {a},
                 [start](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     a.grad[start + i] += self.grad[i];
                   }
                 });
}

Tensor append_const(const Tensor& a, double value) {
  check(a.shape().size() == 1, "append_const: expects a 1-D tensor");
  std::vector<double> out(a.values().begin(), a.values().end());
  out.push_back(value);
  const int n = static_cast<int>(a.numel());
  return make_op("append_const", {n + 1}, std::move(out), {a},
                 [n](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (int i = 0; i < n; ++i) a.grad[i] += self.grad[i];
                 });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2,
        "matmul: expects 2-D tensors, got " + shape_str(a.shape()) + " and " +
            shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  check(k == k2, "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const double av = a.at(i * k + l);
      if (av == 0.0) continue;
      const double* brow = b.values().data() + static_cast<std::size_t>(l) * n;
      double* orow = out.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_op("matmul", {m, n}, std::move(out), {a, b},
                 [m, k, n](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   TensorNode& b = *self.parents[1];
                   if (a.requires_grad) {
                     a.ensure_grad();
                     for (int i = 0; i < m; ++i) {
                       for (int j = 0; j < n; ++j) {
                         const double g = self.grad[i * n + j];
                         if (g == 0.0) continue;
                         for (int l = 0; l < k; ++l) {
                           a.grad[i * k + l] += g * b.values[l * n + j];
                         }
                       }
                     }
                   }
                   if (b.requires_grad) {
                     b.ensure_grad();
                     for (int i = 0; i < m; ++i) {
                       for (int l = 0; l < k; ++l) {
                         const double av = a.values[i * k + l];
                         if (av == 0.0) continue;
                         const double* grow = self.grad.data() + i * n;
                         double* brow = b.grad.data() + l * n;
                         for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                       }
                     }
                   }
                 });
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 1,
        "add_rowvec: expects [N,M] and [M], got " + shape_str(a.shape()) +
            " and " + shape_str(b.shape()));
  const int n = a.shape()[0], m = a.shape()[1];
  check(b.shape()[0] == m,
        "add_rowvec: row length " + std::to_string(m) +
            " does not match vector length " + std::to_string(b.shape()[0]));
  std::vector<double> out(a.numel());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out[i * m + j] = a.at(i * m + j) + b.at(j);
  }
  return make_op("add_rowvec", a.shape(), std::move(out), {a, b},
                 [n, m](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   TensorNode& b = *self.parents[1];
                   if (a.requires_grad) {
                     a.ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) {
                       a.grad[i] += self.grad[i];
                     }
                   }
                   if (b.requires_grad) {
                     b.ensure_grad();
                     for (int i = 0; i < n; ++i) {
                       for (int j = 0; j < m; ++j) {
                         b.grad[j] += self.grad[i * m + j];
                       }
                     }
                   }
                 });
}

Tensor linear(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  const bool vector_input = x.shape().size() == 1;
  Tensor x2 = vector_input ? reshape(x, {1, x.shape()[0]}) : x;
  check(x2.shape().size() == 2, "linear: input must be 1-D or 2-D, got " +
                                    shape_str(x.shape()));
  Tensor y = matmul(x2, weights);
  if (bias.defined()) y = add_rowvec(y, bias);
  if (vector_input) y = reshape(y, {y.shape()[1]});
  return y;
}

Tensor l2_normalize_cols(const Tensor& a) {
  check(a.shape().size() == 2, "l2_normalize_cols: expects [C,N], got " +
                                   shape_str(a.shape()));
  const int c = a.shape()[0], n = a.shape()[1];
  std::vector<double> norms(n, 0.0);
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = a.at(i * n + j);
      norms[j] += v * v;
    }
  }
  for (double& v : norms) v = std::sqrt(v + 1e-24);
  std::vector<double> out(a.numel());
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < n; ++j) out[i * n + j] = a.at(i * n + j) / norms[j];
  }
  return make_op("l2_normalize_cols", a.shape(), std::move(out), {a},
                 [c, n, norms = std::move(norms)](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (int j = 0; j < n; ++j) {
                     // d(x/|x|) = (g - (g.y) y) / |x| per column
                     double dot = 0.0;
                     for (int i = 0; i < c; ++i) {
                       dot += self.grad[i * n + j] * self.values[i * n + j];
                     }
                     for (int i = 0; i < c; ++i) {
                       a.grad[i * n + j] +=
                           (self.grad[i * n + j] -
                            dot * self.values[i * n + j]) / norms[j];
                     }
                   }
                 });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_op("sum", {1}, {total}, {a}, [](TensorNode& self) {
    TensorNode& a = *self.parents[0];
    if (!a.requires_grad) return;
    a.ensure_grad();
    const double g = self.grad[0];
    for (double& gi : a.grad) gi += g;
  });
}

Tensor mean(const Tensor& a) {
  check(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a, int axis) {
  check_finite("softmax", a);
  const auto& shape = a.shape();
  check(axis >= 0 && axis < static_cast<int>(shape.size()),
        "softmax: axis " + std::to_string(axis) + " invalid for shape " +
            shape_str(shape));
  int outer = 1, inner = 1;
  const int n = shape[axis];
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) {
    inner *= shape[i];
  }
  std::vector<double> out(a.numel());
  for (int o = 0; o < outer; ++o) {
    for (int c = 0; c < inner; ++c) {
      const std::size_t base = static_cast<std::size_t>(o) * n * inner + c;
      double hi = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) hi = std::max(hi, a.at(base + j * inner));
      double z = 0.0;
      for (int j = 0; j < n; ++j) {
        const double e = std::exp(a.at(base + j * inner) - hi);
        out[base + j * inner] = e;
        z += e;
      }
      for (int j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return make_op("softmax", shape, std::move(out), {a},
                 [outer, n, inner](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (int o = 0; o < outer; ++o) {
                     for (int c = 0; c < inner; ++c) {
                       const std::size_t base =
                           static_cast<std::size_t>(o) * n * inner + c;
                       double dot = 0.0;
                       for (int j = 0; j < n; ++j) {
                         const std::size_t k = base + j * inner;
                         dot += self.grad[k] * self.values[k];
                       }
                       for (int j = 0; j < n; ++j) {
                         const std::size_t k = base + j * inner;
                         a.grad[k] += self.values[k] * (self.grad[k] - dot);
                       }
                     }
                   }
                 });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  check(input.shape().size() == 4, "conv2d: input must be [N,C,H,W], got " +
                                       shape_str(input.shape()));
  check(kernel.shape().size() == 4,
        "conv2d: kernel must be [Co,Ci,kh,kw], got " +
            shape_str(kernel.shape()));
  const int batch = input.shape()[0], ci = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  const int co = kernel.shape()[0], kci = kernel.shape()[1];
  const int kh = kernel.shape()[2], kw = kernel.shape()[3];
  check(kci == ci, "conv2d: kernel channel count " + std::to_string(kci) +
                       " does not match input channels " + std::to_string(ci));
  check(stride >= 1, "conv2d: stride must be >= 1, got " +
                         std::to_string(stride));
  check(padding >= 0, "conv2d: padding must be >= 0");
  check(h + 2 * padding >= kh && w + 2 * padding >= kw,
        "conv2d: kernel " + shape_str(kernel.shape()) +
            " larger than padded input " + shape_str(input.shape()));
  if (bias.defined()) {
    check(bias.numel() == static_cast<std::size_t>(co),
          "conv2d: bias length " + std::to_string(bias.numel()) +
              " does not match output channels " + std::to_string(co));
  }
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;

  std::vector<double> out(static_cast<std::size_t>(batch) * co * oh * ow, 0.0);
  if (bias.defined()) {
    for (int nn = 0; nn < batch; ++nn) {
      for (int c = 0; c < co; ++c) {
        const double b = bias.at(c);
        double* dst = out.data() + (static_cast<std::size_t>(nn) * co + c) *
                                       oh * ow;
        std::fill(dst, dst + static_cast<std::size_t>(oh) * ow, b);
      }
    }
  }
  const double* in = input.values().data();
  const double* ker = kernel.values().data();
  for (int nn = 0; nn < batch; ++nn) {
    for (int c = 0; c < co; ++c) {
      for (int ic = 0; ic < ci; ++ic) {
        const double* in_plane =
            in + (static_cast<std::size_t>(nn) * ci + ic) * h * w;
        for (int dy = 0; dy < kh; ++dy) {
          for (int dx = 0; dx < kw; ++dx) {
            const double kv =
                ker[((static_cast<std::size_t>(c) * ci + ic) * kh + dy) * kw +
                    dx];
            if (kv == 0.0) continue;
            // Valid output column range so the input column stays in bounds.
            int lo = 0;
            while (lo < ow && lo * stride + dx - padding < 0) ++lo;
            int hi = ow - 1;
            while (hi >= 0 && hi * stride + dx - padding > w - 1) --hi;
            for (int oy = 0; oy < oh; ++oy) {
              const int y = oy * stride + dy - padding;
              if (y < 0 || y >= h) continue;
              const double* src = in_plane + static_cast<std::size_t>(y) * w;
              double* dst = out.data() +
                            ((static_cast<std::size_t>(nn) * co + c) * oh +
                             oy) * ow;
              for (int ox = lo; ox <= hi; ++ox) {
                dst[ox] += kv * src[ox * stride + dx - padding];
              }
            }
          }
        }
      }
    }
  }

  std::vector<Tensor> parents = {input, kernel};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_op(
      "conv2d", {batch, co, oh, ow}, std::move(out), std::move(parents),
      [batch, ci, h, w, co, kh, kw, oh, ow, stride, padding,
       has_bias](TensorNode& self) {
        TensorNode& input = *self.parents[0];
        TensorNode& kernel = *self.parents[1];
        const bool need_input = input.requires_grad;
        const bool need_kernel = kernel.requires_grad;
        if (need_input) input.ensure_grad();
        if (need_kernel) kernel.ensure_grad();
        if (need_input || need_kernel) {
          for (int nn = 0; nn < batch; ++nn) {
            for (int c = 0; c < co; ++c) {
              for (int ic = 0; ic < ci; ++ic) {
                const std::size_t in_base =
                    (static_cast<std::size_t>(nn) * ci + ic) * h * w;
                for (int dy = 0; dy < kh; ++dy) {
                  for (int dx = 0; dx < kw; ++dx) {
                    const std::size_t kidx =
                        ((static_cast<std::size_t>(c) * ci + ic) * kh + dy) *
                            kw + dx;
                    const double kv = kernel.values[kidx];
                    double kacc = 0.0;
                    int lo = 0;
                    while (lo < ow && lo * stride + dx - padding < 0) ++lo;
                    int hi = ow - 1;
                    while (hi >= 0 && hi * stride + dx - padding > w - 1) --hi;
                    for (int oy = 0; oy < oh; ++oy) {
                      const int y = oy * stride + dy - padding;
                      if (y < 0 || y >= h) continue;
                      const double* grow =
                          self.grad.data() +
                          ((static_cast<std::size_t>(nn) * co + c) * oh + oy) *
                              ow;
                      const std::size_t row = in_base + static_cast<std::size_t>(y) * w;
                      for (int ox = lo; ox <= hi; ++ox) {
                        const double g = grow[ox];
                        if (g == 0.0) continue;
                        const std::size_t xi = row + ox * stride + dx - padding;
                        if (need_input) input.grad[xi] += g * kv;
                        if (need_kernel) kacc += g * input.values[xi];
                      }
                    }
                    if (need_kernel) kernel.grad[kidx] += kacc;
                  }
                }
              }
            }
          }
        }
        if (has_bias) {
          TensorNode& bias = *self.parents[2];
          if (bias.requires_grad) {
            bias.ensure_grad();
            for (int nn = 0; nn < batch; ++nn) {
              for (int c = 0; c < co; ++c) {
                const double* grow =
                    self.grad.data() +
                    (static_cast<std::size_t>(nn) * co + c) * oh * ow;
                double acc = 0.0;
                for (int i = 0; i < oh * ow; ++i) acc += grow[i];
                bias.grad[c] += acc;
              }
            }
          }
        }
      });
}

Tensor pool(const Tensor& input, PoolKind kind, int window) {
  check(input.shape().size() == 4, "pool: input must be [N,C,H,W], got " +
                                       shape_str(input.shape()));
  check(window >= 1, "pool: window must be >= 1");
  const int batch = input.shape()[0], ch = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  check(h % window == 0 && w % window == 0,
        "pool: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
            " not divisible by window " + std::to_string(window));
  const int oh = h / window, ow = w / window;
  const std::size_t planes = static_cast<std::size_t>(batch) * ch;
  std::vector<double> out(planes * oh * ow);
  std::vector<int> argmax;
  if (kind == PoolKind::kMax) argmax.resize(out.size());

  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = input.values().data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        if (kind == PoolKind::kAverage) {
          double acc = 0.0;
          for (int dy = 0; dy < window; ++dy) {
            for (int dx = 0; dx < window; ++dx) {
              acc += src[(oy * window + dy) * w + ox * window + dx];
            }
          }
          dst[oy * ow + ox] = acc / (window * window);
        } else {
          int best = (oy * window) * w + ox * window;
          double bv = src[best];
          for (int dy = 0; dy < window; ++dy) {
            for (int dx = 0; dx < window; ++dx) {
              const int idx = (oy * window + dy) * w + ox * window + dx;
              if (src[idx] > bv) {
                bv = src[idx];
                best = idx;
              }
            }
          }
          dst[oy * ow + ox] = bv;
          argmax[p * oh * ow + oy * ow + ox] = best;
        }
      }
    }
  }

  return make_op(
      "pool", {batch, ch, oh, ow}, std::move(out), {input},
      [kind, window, planes, h, w, oh, ow,
       argmax = std::move(argmax)](TensorNode& self) {
        TensorNode& input = *self.parents[0];
        if (!input.requires_grad) return;
        input.ensure_grad();
        const double inv_area = 1.0 / (window * window);
        for (std::size_t p = 0; p < planes; ++p) {
          const double* g = self.grad.data() + p * oh * ow;
          double* dst = input.grad.data() + p * h * w;
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const double gv = g[oy * ow + ox];
              if (gv == 0.0) continue;
              if (kind == PoolKind::kAverage) {
                for (int dy = 0; dy < window; ++dy) {
                  for (int dx = 0; dx < window; ++dx) {
                    dst[(oy * window + dy) * w + ox * window + dx] +=
                        gv * inv_area;
                  }
                }
              } else {
                dst[argmax[p * oh * ow + oy * ow + ox]] += gv;
              }
            }
          }
        }
      });
}

Tensor adaptive_avg_pool(const Tensor& input, int out_h, int out_w) {
  check(input.shape().size() == 4,
        "adaptive_avg_pool: input must be [N,C,H,W], got " +
            shape_str(input.shape()));
  check(out_h >= 1 && out_w >= 1, "adaptive_avg_pool: output size must be >= 1");
  const int batch = input.shape()[0], ch = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  check(out_h <= h, "adaptive_avg_pool: out_h " + std::to_string(out_h) +
                        " larger than input height " + std::to_string(h));
  check(out_w <= w, "adaptive_avg_pool: out_w " + std::to_string(out_w) +
                        " larger than input width " + std::to_string(w));
  const std::size_t planes = static_cast<std::size_t>(batch) * ch;
  std::vector<double> out(planes * out_h * out_w);
  auto bin_lo = [](int i, int in, int on) { return (i * in) / on; };
  auto bin_hi = [](int i, int in, int on) { return ((i + 1) * in + on - 1) / on; };
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = input.values().data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const int y0 = bin_lo(oy, h, out_h), y1 = bin_hi(oy, h, out_h);
      for (int ox = 0; ox < out_w; ++ox) {
        const int x0 = bin_lo(ox, w, out_w), x1 = bin_hi(ox, w, out_w);
        double acc = 0.0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) acc += src[y * w + x];
        }
        dst[oy * out_w + ox] = acc / ((y1 - y0) * (x1 - x0));
      }
    }
  }
  return make_op(
      "adaptive_avg_pool", {batch, ch, out_h, out_w}, std::move(out), {input},
      [planes, h, w, out_h, out_w, bin_lo, bin_hi](TensorNode& self) {
        TensorNode& input = *self.parents[0];
        if (!input.requires_grad) return;
        input.ensure_grad();
        for (std::size_t p = 0; p < planes; ++p) {
          const double* g = self.grad.data() + p * out_h * out_w;
          double* dst = input.grad.data() + p * h * w;
          for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = bin_lo(oy, h, out_h), y1 = bin_hi(oy, h, out_h);
            for (int ox = 0; ox < out_w; ++ox) {
              const int x0 = bin_lo(ox, w, out_w), x1 = bin_hi(ox, w, out_w);
              const double gv =
                  g[oy * out_w + ox] / ((y1 - y0) * (x1 - x0));
              if (gv == 0.0) continue;
              for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) dst[y * w + x] += gv;
              }
            }
          }
        }
      });
}

namespace {

struct BilinearCell {
  int x0, y0, x1, y1;
  double fx, fy;
  bool free_x, free_y;  // coordinate gradient transparent (not clamped)
};

BilinearCell locate(double x, double y, int w, int h) {
  BilinearCell c;
  const double xc = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  const double yc = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  c.x0 = w > 1 ? std::min(static_cast<int>(std::floor(xc)), w - 2) : 0;
  c.y0 = h > 1 ? std::min(static_cast<int>(std::floor(yc)), h - 2) : 0;
  c.x1 = std::min(c.x0 + 1, w - 1);
  c.y1 = std::min(c.y0 + 1, h - 1);
  c.fx = w > 1 ? xc - c.x0 : 0.0;
  c.fy = h > 1 ? yc - c.y0 : 0.0;
  c.free_x = x > 0.0 && x < static_cast<double>(w - 1);
  c.free_y = y > 0.0 && y < static_cast<double>(h - 1);
  return c;
}

}  // namespace

Tensor bilinear_sample(const Tensor& map, const Tensor& points) {
  check(map.shape().size() == 3, "bilinear_sample: map must be [C,H,W], got " +
                                     shape_str(map.shape()));
  check(points.shape().size() == 2 && points.shape()[1] == 2,
        "bilinear_sample: points must be [N,2], got " +
            shape_str(points.shape()));
  const int ch = map.shape()[0], h = map.shape()[1], w = map.shape()[2];
  const int n = points.shape()[0];
  std::vector<double> out(static_cast<std::size_t>(n) * ch);
  const double* mv = map.values().data();
  for (int i = 0; i < n; ++i) {
    const BilinearCell c =
        locate(points.at(i * 2 + 0), points.at(i * 2 + 1), w, h);
    for (int k = 0; k < ch; ++k) {
      const double* plane = mv + static_cast<std::size_t>(k) * h * w;
      const double v00 = plane[c.y0 * w + c.x0];
      const double v01 = plane[c.y0 * w + c.x1];
      const double v10 = plane[c.y1 * w + c.x0];
      const double v11 = plane[c.y1 * w + c.x1];
      out[static_cast<std::size_t>(i) * ch + k] =
          (1.0 - c.fy) * ((1.0 - c.fx) * v00 + c.fx * v01) +
          c.fy * ((1.0 - c.fx) * v10 + c.fx * v11);
    }
  }
  return make_op(
      "bilinear_sample", {n, ch}, std::move(out), {map, points},
      [ch, h, w, n](TensorNode& self) {
        TensorNode& map = *self.parents[0];
        TensorNode& points = *self.parents[1];
        const bool need_map = map.requires_grad;
        const bool need_points = points.requires_grad;
        if (need_map) map.ensure_grad();
        if (need_points) points.ensure_grad();
        for (int i = 0; i < n; ++i) {
          const BilinearCell c =
              locate(points.values[i * 2 + 0], points.values[i * 2 + 1], w, h);
          double gx = 0.0, gy = 0.0;
          for (int k = 0; k < ch; ++k) {
            const double g = self.grad[static_cast<std::size_t>(i) * ch + k];
            if (g == 0.0) continue;
            const std::size_t base = static_cast<std::size_t>(k) * h * w;
            const std::size_t i00 = base + c.y0 * w + c.x0;
            const std::size_t i01 = base + c.y0 * w + c.x1;
            const std::size_t i10 = base + c.y1 * w + c.x0;
            const std::size_t i11 = base + c.y1 * w + c.x1;
            if (need_map) {
              map.grad[i00] += g * (1.0 - c.fy) * (1.0 - c.fx);
              map.grad[i01] += g * (1.0 - c.fy) * c.fx;
              map.grad[i10] += g * c.fy * (1.0 - c.fx);
              map.grad[i11] += g * c.fy * c.fx;
            }
            if (need_points) {
              const double v00 = map.values[i00], v01 = map.values[i01];
              const double v10 = map.values[i10], v11 = map.values[i11];
              gx += g * ((1.0 - c.fy) * (v01 - v00) + c.fy * (v11 - v10));
              gy += g * ((1.0 - c.fx) * (v10 - v00) + c.fx * (v11 - v01));
            }
          }
          if (need_points) {
            if (c.free_x) points.grad[i * 2 + 0] += gx;
            if (c.free_y) points.grad[i * 2 + 1] += gy;
          }
        }
      });
}

}  // namespace c2f::ops
