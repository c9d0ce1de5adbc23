#pragma once

#include <vector>

#include "c2f/tensor.hpp"

namespace c2f::ops {

// ---- elementwise / pointwise ----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// Broadcast by a one-element tensor (gradient flows to both sides).
Tensor mul_scalar_t(const Tensor& a, const Tensor& s);
Tensor div_scalar_t(const Tensor& a, const Tensor& s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sqrt(const Tensor& a);   // requires a > 0 where gradients are needed
Tensor abs(const Tensor& a);    // subgradient 0 at the origin
Tensor clamp(const Tensor& a, double lo, double hi);  // grad passes strictly inside
// Per-element bounds (same shapes); gradient passes strictly inside the box.
Tensor clamp_box(const Tensor& a, const std::vector<double>& lo,
                 const std::vector<double>& hi);

// ---- shape / indexing ------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);                       // 2-D
Tensor flat_slice(const Tensor& a, int start, int len);  // 1-D window of the flat buffer
Tensor append_const(const Tensor& a, double value);      // 1-D [n] -> [n+1]

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);          // [M,K]x[K,N]
Tensor add_rowvec(const Tensor& a, const Tensor& b);      // [N,M] + [M] broadcast
Tensor linear(const Tensor& x, const Tensor& weights, const Tensor& bias);
// Scales every column of [C,N] to unit Euclidean norm (eps-guarded).
Tensor l2_normalize_cols(const Tensor& a);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]

// ---- softmax ---------------------------------------------------------------

Tensor softmax(const Tensor& a, int axis);

// ---- convolution / pooling -------------------------------------------------

// input [N,Ci,H,W], kernel [Co,Ci,kh,kw], optional bias [Co] (pass a
// default-constructed Tensor for none).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

enum class PoolKind { kMax, kAverage };

// Non-overlapping window pooling; spatial dims must divide by `window`.
Tensor pool(const Tensor& input, PoolKind kind, int window);

// Output bins follow the floor/ceil partition; out_h/out_w may not exceed
// the input's spatial size.
Tensor adaptive_avg_pool(const Tensor& input, int out_h, int out_w);

// ---- sampling --------------------------------------------------------------

// map [C,H,W], points [N,2] as (x,y); clamp-to-edge border policy.
// Differentiable in both the map and the point coordinates; the coordinate
// gradient is frozen to zero at clamped borders.
Tensor bilinear_sample(const Tensor& map, const Tensor& points);

}  // namespace c2f::ops
