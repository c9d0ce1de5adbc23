#include <doctest.h>

#include <cmath>
#include <cstring>

#include "c2f/gradcheck.hpp"
#include "c2f/ops.hpp"
#include "c2f/rng.hpp"
#include "c2f/tensor.hpp"
#include "test_util.hpp"

using namespace c2f;
using c2f::testing::interior_points;
using c2f::testing::random_tensor;

namespace {

// Runs grad_check over `instances` seeded random cases and requires all pass.
void check_op_gradients(const std::string& name, const OpUnderTest& op,
                        const std::function<std::vector<Tensor>(Rng&)>& gen,
                        int instances = 10, double tolerance = 1e-4) {
  for (int k = 0; k < instances; ++k) {
    Rng rng(1000 + 17 * k);
    auto report = grad_check(name, op, gen(rng), 1e-5, tolerance);
    INFO(name << " instance " << k << ": " << report.detail);
    CHECK(report.passed);
    CHECK(report.max_rel_error <= tolerance);
  }
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  Rng rng(7);
  Tensor x = random_tensor(rng, {1, 1, 5, 5});
  Tensor k = Tensor::from_values({1, 1, 1, 1}, {1.0});
  Tensor y = ops::conv2d(x, k, Tensor(), 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 5, 5});
  for (std::size_t i = 0; i < y.numel(); ++i) {
    CHECK(y.at(i) == x.at(i));
  }
}

TEST_CASE("conv2d of zero input is zero") {
  Rng rng(8);
  Tensor x = Tensor::zeros({1, 3, 6, 6});
  Tensor k = random_tensor(rng, {4, 3, 3, 3});
  Tensor y = ops::conv2d(x, k, Tensor(), 1, 1);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == 0.0);
}

TEST_CASE("conv2d output size follows the convolution formula") {
  Tensor x = Tensor::zeros({1, 2, 9, 11});
  Tensor k = Tensor::zeros({5, 2, 3, 3});
  CHECK(ops::conv2d(x, k, Tensor(), 1, 1).shape() == Shape{1, 5, 9, 11});
  CHECK(ops::conv2d(x, k, Tensor(), 2, 1).shape() == Shape{1, 5, 5, 6});
  CHECK(ops::conv2d(x, k, Tensor(), 1, 0).shape() == Shape{1, 5, 7, 9});
}

TEST_CASE("conv2d rejects mismatched channels with a diagnostic") {
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  Tensor k = Tensor::zeros({2, 4, 3, 3});
  CHECK_THROWS_WITH_AS(ops::conv2d(x, k, Tensor(), 1, 1),
                       doctest::Contains("kernel channel count 4"),
                       std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
  check_op_gradients(
      "conv2d",
      [](const std::vector<Tensor>& in) {
        return ops::conv2d(in[0], in[1], in[2], 1, 1);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {1, 3, 8, 8}),
                                   random_tensor(rng, {4, 3, 3, 3}),
                                   random_tensor(rng, {4})};
      });
  // Strided, unpadded variant.
  check_op_gradients(
      "conv2d_s2",
      [](const std::vector<Tensor>& in) {
        return ops::conv2d(in[0], in[1], Tensor(), 2, 0);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {2, 2, 7, 7}),
                                   random_tensor(rng, {3, 2, 3, 3})};
      });
}

TEST_CASE("sigmoid fixed point and range") {
  Tensor x = Tensor::from_values({3}, {0.0, 40.0, -40.0});
  Tensor y = ops::sigmoid(x);
  CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-15));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(y.at(i) > 0.0);
    CHECK(y.at(i) < 1.0);
  }
}

TEST_CASE("softmax of equal logits is uniform and slices sum to one") {
  Tensor x = Tensor::full({4}, 1.7);
  Tensor y = ops::softmax(x, 0);
  for (int i = 0; i < 4; ++i) CHECK(y.at(i) == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng(3);
  Tensor z = random_tensor(rng, {5, 7, 3}, -4.0, 4.0, false);
  Tensor s = ops::softmax(z, 1);
  for (int o = 0; o < 5; ++o) {
    for (int c = 0; c < 3; ++c) {
      double total = 0.0;
      for (int j = 0; j < 7; ++j) total += s.at((o * 7 + j) * 3 + c);
      CHECK(std::fabs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("softmax rejects invalid axis and non-finite input") {
  Tensor x = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(ops::softmax(x, 2), std::invalid_argument);
  Tensor bad = Tensor::from_values({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(ops::softmax(bad, 0), std::invalid_argument);
  CHECK_THROWS_AS(ops::relu(bad), std::invalid_argument);
  CHECK_THROWS_AS(ops::sigmoid(bad), std::invalid_argument);
}

TEST_CASE("activation and softmax gradients match finite differences") {
  check_op_gradients(
      "relu",
      [](const std::vector<Tensor>& in) { return ops::relu(in[0]); },
      [](Rng& rng) {
        // Sampled away from the kink at zero.
        Tensor t = random_tensor(rng, {40});
        for (double& v : t.mutable_values()) {
          if (std::fabs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
        }
        return std::vector<Tensor>{t};
      });
  check_op_gradients(
      "sigmoid",
      [](const std::vector<Tensor>& in) { return ops::sigmoid(in[0]); },
      [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {30}, -3, 3)}; });
  check_op_gradients(
      "softmax",
      [](const std::vector<Tensor>& in) { return ops::softmax(in[0], 1); },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {4, 6}, -2, 2)};
      });
  // softmax backward is only exercised by a non-uniform downstream weight;
  // sum() alone has zero gradient through a probability simplex.
  check_op_gradients(
      "softmax_weighted",
      [](const std::vector<Tensor>& in) {
        return ops::mul(ops::softmax(in[0], 0), in[1]);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {9}, -2, 2),
                                   random_tensor(rng, {9}, -1, 1)};
      });
}

TEST_CASE("average pool evaluates the window mean") {
  Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = ops::pool(x, ops::PoolKind::kAverage, 2);
  REQUIRE(y.numel() == 1);
  CHECK(y.at(0) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("max pool takes the window maximum") {
  Tensor x = Tensor::from_values({1, 1, 2, 4}, {1, 5, 2, 2, 3, 0, 2, 9});
  Tensor y = ops::pool(x, ops::PoolKind::kMax, 2);
  REQUIRE(y.shape() == Shape{1, 1, 1, 2});
  CHECK(y.at(0) == 5.0);
  CHECK(y.at(1) == 9.0);
}

TEST_CASE("adaptive average pool of a constant map is constant") {
  Tensor x = Tensor::full({1, 2, 24, 24}, 3.25);
  Tensor y = ops::adaptive_avg_pool(x, 16, 16);
  REQUIRE(y.shape() == Shape{1, 2, 16, 16});
  for (std::size_t i = 0; i < y.numel(); ++i) {
    CHECK(y.at(i) == doctest::Approx(3.25).epsilon(1e-15));
  }
}

TEST_CASE("adaptive average pool rejects upsampling") {
  Tensor x = Tensor::zeros({1, 1, 8, 8});
  CHECK_THROWS_WITH_AS(ops::adaptive_avg_pool(x, 16, 8),
                       doctest::Contains("larger than input"),
                       std::invalid_argument);
}

TEST_CASE("pool gradients match finite differences") {
  check_op_gradients(
      "avg_pool",
      [](const std::vector<Tensor>& in) {
        return ops::pool(in[0], ops::PoolKind::kAverage, 2);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {1, 3, 6, 6})};
      });
  check_op_gradients(
      "max_pool",
      [](const std::vector<Tensor>& in) {
        return ops::pool(in[0], ops::PoolKind::kMax, 2);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {1, 2, 6, 6})};
      });
  check_op_gradients(
      "adaptive_avg_pool",
      [](const std::vector<Tensor>& in) {
        return ops::adaptive_avg_pool(in[0], 3, 5);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {1, 2, 7, 9})};
      });
}

TEST_CASE("bilinear sampling at lattice points reproduces stored values") {
  Rng rng(11);
  Tensor map = random_tensor(rng, {3, 5, 7}, 0.0, 1.0, false);
  std::vector<double> pts;
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 7; ++x) {
      pts.push_back(x);
      pts.push_back(y);
    }
  }
  Tensor points = Tensor::from_values({35, 2}, std::move(pts));
  Tensor sampled = ops::bilinear_sample(map, points);
  for (int i = 0; i < 35; ++i) {
    const int x = i % 7, y = i / 7;
    for (int c = 0; c < 3; ++c) {
      CHECK(sampled.at(i * 3 + c) == map.at((c * 5 + y) * 7 + x));
    }
  }
}

TEST_CASE("bilinear sampling at a cell midpoint averages the corners") {
  Tensor map = Tensor::from_values({1, 2, 2}, {0, 0, 1, 1});
  Tensor p = Tensor::from_values({1, 2}, {0.5, 0.5});
  CHECK(ops::bilinear_sample(map, p).at(0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("bilinear sampling clamps out-of-range points to the border") {
  Tensor map = Tensor::from_values({1, 2, 2}, {1, 2, 3, 4});
  Tensor p = Tensor::from_values({2, 2}, {-5.0, -5.0, 100.0, 100.0});
  Tensor s = ops::bilinear_sample(map, p);
  CHECK(s.at(0) == 1.0);
  CHECK(s.at(1) == 4.0);
}

TEST_CASE("bilinear sample gradients match finite differences") {
  // Gradient checks exclude lattice coordinates: interpolation is piecewise
  // linear and central differences straddle the kink there.  interior_points
  // draws fractional offsets in [0.2, 0.8] away from the map border.
  check_op_gradients(
      "bilinear_sample",
      [](const std::vector<Tensor>& in) {
        return ops::bilinear_sample(in[0], in[1]);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {2, 6, 8}),
                                   interior_points(rng, 5, 8, 6)};
      });
}

TEST_CASE("linear with identity weights and zero bias is the identity") {
  Tensor x = Tensor::from_values({3}, {1.5, -2.0, 0.25});
  Tensor w = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor b = Tensor::zeros({3});
  Tensor y = ops::linear(x, w, b);
  for (int i = 0; i < 3; ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("linear with zero weights returns the bias") {
  Tensor x = Tensor::from_values({2}, {3.0, 4.0});
  Tensor w = Tensor::zeros({2, 4});
  Tensor b = Tensor::from_values({4}, {1, 2, 3, 4});
  Tensor y = ops::linear(x, w, b);
  for (int i = 0; i < 4; ++i) CHECK(y.at(i) == b.at(i));
}

TEST_CASE("linear rejects mismatched inner dimensions") {
  Tensor x = Tensor::zeros({3});
  Tensor w = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(ops::linear(x, w, Tensor()),
                       doctest::Contains("inner dimensions disagree"),
                       std::invalid_argument);
}

TEST_CASE("linear and matmul gradients match finite differences") {
  check_op_gradients(
      "linear",
      [](const std::vector<Tensor>& in) {
        return ops::linear(in[0], in[1], in[2]);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {4, 5}),
                                   random_tensor(rng, {5, 3}),
                                   random_tensor(rng, {3})};
      });
  check_op_gradients(
      "matmul",
      [](const std::vector<Tensor>& in) { return ops::matmul(in[0], in[1]); },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {3, 4}),
                                   random_tensor(rng, {4, 6})};
      });
}

TEST_CASE("linear passes a tight gradient check at epsilon 1e-5") {
  Rng rng(42);
  auto report = grad_check(
      "linear",
      [](const std::vector<Tensor>& in) {
        return ops::linear(in[0], in[1], in[2]);
      },
      {random_tensor(rng, {6}), random_tensor(rng, {6, 4}),
       random_tensor(rng, {4})},
      1e-5, 1e-6);
  INFO(report.detail);
  CHECK(report.passed);
  CHECK(report.max_rel_error <= 1e-6);
}

TEST_CASE("grad_check flags a corrupted backward pass") {
  auto corrupted = [](const std::vector<Tensor>& in) {
    std::vector<double> out(in[0].numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * in[0].at(i);
    return make_op("bad_double", in[0].shape(), std::move(out), {in[0]},
                   [](detail::TensorNode& self) {
                     auto& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     a.grad[i] -= 2.0 * self.grad[i];  // sign flipped
                   }
                 });
  };
  Rng rng(5);
  auto report = grad_check("bad_double", corrupted,
                           {random_tensor(rng, {8})});
  CHECK(!report.passed);
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
  auto binary_gen = [](Rng& rng) {
    return std::vector<Tensor>{random_tensor(rng, {12}, 0.5, 2.0),
                               random_tensor(rng, {12}, 0.5, 2.0)};
  };
  check_op_gradients(
      "add", [](const std::vector<Tensor>& in) { return ops::add(in[0], in[1]); },
      binary_gen);
  check_op_gradients(
      "sub", [](const std::vector<Tensor>& in) { return ops::sub(in[0], in[1]); },
      binary_gen);
  check_op_gradients(
      "mul", [](const std::vector<Tensor>& in) { return ops::mul(in[0], in[1]); },
      binary_gen);
  check_op_gradients(
      "div", [](const std::vector<Tensor>& in) { return ops::div(in[0], in[1]); },
      binary_gen);
  check_op_gradients(
      "sqrt", [](const std::vector<Tensor>& in) { return ops::sqrt(in[0]); },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {10}, 0.2, 4.0)};
      });
  check_op_gradients(
      "abs", [](const std::vector<Tensor>& in) { return ops::abs(in[0]); },
      [](Rng& rng) {
        Tensor t = random_tensor(rng, {10});
        for (double& v : t.mutable_values()) {
          if (std::fabs(v) < 0.05) v += 0.1;
        }
        return std::vector<Tensor>{t};
      });
  check_op_gradients(
      "mean_mul_scalar_t",
      [](const std::vector<Tensor>& in) {
        return ops::mul_scalar_t(in[0], ops::mean(in[1]));
      },
      binary_gen);
  check_op_gradients(
      "div_scalar_t",
      [](const std::vector<Tensor>& in) {
        return ops::div_scalar_t(in[0], ops::mean(in[1]));
      },
      binary_gen);
  check_op_gradients(
      "transpose_slice_append",
      [](const std::vector<Tensor>& in) {
        Tensor t = ops::transpose(in[0]);
        Tensor s = ops::flat_slice(ops::reshape(t, {12}), 2, 6);
        return ops::append_const(s, 3.0);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {3, 4})};
      });
  check_op_gradients(
      "add_rowvec",
      [](const std::vector<Tensor>& in) {
        return ops::add_rowvec(in[0], in[1]);
      },
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor(rng, {5, 3}),
                                   random_tensor(rng, {3})};
      });
  check_op_gradients(
      "clamp",
      [](const std::vector<Tensor>& in) { return ops::clamp(in[0], -0.5, 0.5); },
      [](Rng& rng) {
        Tensor t = random_tensor(rng, {14});
        for (double& v : t.mutable_values()) {
          // keep away from the clamp edges where FD straddles the kink
          if (std::fabs(std::fabs(v) - 0.5) < 0.05) v *= 0.8;
        }
        return std::vector<Tensor>{t};
      });
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
  Tensor x = Tensor::from_values({1}, {3.0});
  x.set_requires_grad(true);
  Tensor y = ops::mul(x, x);  // d/dx x^2 = 2x
  y.backward();
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("forward passes are bitwise deterministic for a fixed seed") {
  auto run = [] {
    Rng rng(314);
    Tensor x = random_tensor(rng, {1, 3, 8, 8}, -1, 1, false);
    Tensor k = random_tensor(rng, {4, 3, 3, 3}, -1, 1, false);
    Tensor y = ops::softmax(
        ops::reshape(ops::conv2d(x, k, Tensor(), 1, 1), {4 * 64}), 0);
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("no-grad mode builds no tape") {
  Rng rng(9);
  Tensor x = random_tensor(rng, {4});
  Tensor y;
  {
    NoGradGuard guard;
    y = ops::scale(x, 2.0);
  }
  CHECK(!y.requires_grad());
  CHECK(y.node()->parents.empty());
}
