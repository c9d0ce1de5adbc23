#pragma once

#include <vector>

#include "c2f/rng.hpp"
#include "c2f/tensor.hpp"

namespace c2f::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = true) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(lo, hi);
  Tensor t = Tensor::from_values(std::move(shape), std::move(values));
  t.set_requires_grad(requires_grad);
  return t;
}

// Random continuous points away from lattice coordinates and borders, where
// bilinear interpolation is differentiable.
inline Tensor interior_points(Rng& rng, int count, int width, int height) {
  std::vector<double> values;
  values.reserve(2 * count);
  for (int i = 0; i < count; ++i) {
    const int cx = static_cast<int>(rng.uniform_int(width - 2)) + 1;
    const int cy = static_cast<int>(rng.uniform_int(height - 2)) + 1;
    values.push_back(cx + rng.uniform(0.2, 0.8) - 1.0);
    values.push_back(cy + rng.uniform(0.2, 0.8) - 1.0);
  }
  Tensor t = Tensor::from_values({count, 2}, std::move(values));
  t.set_requires_grad(true);
  return t;
}

}  // namespace c2f::testing
