#include "c2f/gradcheck_suite.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <functional>

#include "c2f/geometry.hpp"
#include "c2f/losses.hpp"
#include "c2f/ops.hpp"
#include "c2f/rng.hpp"

namespace c2f {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.uniform(lo, hi);
  Tensor t = Tensor::from_values(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

// Keeps samples a safe distance from a set of breakpoints of |x|.
void avoid_kinks(Tensor& t, const std::vector<double>& breakpoints,
                 double margin = 0.05) {
  for (double& v : t.mutable_values()) {
    for (double b : breakpoints) {
      if (std::fabs(std::fabs(v) - b) < margin) v += 2.0 * margin;
    }
  }
}

Tensor interior_points(Rng& rng, int count, int width, int height) {
  std::vector<double> values;
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

struct SuiteCase {
  const char* name;
  OpUnderTest op;
  std::function<std::vector<Tensor>(Rng&)> gen;
};

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(double tolerance,
                                                 int instances) {
  const losses::RobustParams robust_params{0.5, 1.5};
  const geo::Intrinsics k{300.0, 300.0, 128.0, 128.0};
  const geo::Pose pose = geo::Pose::make(
      Eigen::AngleAxisd(0.2, Eigen::Vector3d(0.2, 1.0, -0.3).normalized())
          .toRotationMatrix(),
      {0.4, -0.1, 0.2});
  const geo::EssentialMatrix essential = geo::essential_from_pose(pose);

  const std::vector<SuiteCase> cases = {
      {"add",
       [](const std::vector<Tensor>& in) { return ops::add(in[0], in[1]); },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {12}),
                                    random_tensor(rng, {12})};
       }},
      {"sub",
       [](const std::vector<Tensor>& in) { return ops::sub(in[0], in[1]); },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {12}),
                                    random_tensor(rng, {12})};
       }},
      {"mul",
       [](const std::vector<Tensor>& in) { return ops::mul(in[0], in[1]); },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {12}),
                                    random_tensor(rng, {12})};
       }},
      {"div",
       [](const std::vector<Tensor>& in) { return ops::div(in[0], in[1]); },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {12}, 0.5, 2.0),
                                    random_tensor(rng, {12}, 0.5, 2.0)};
       }},
      {"scale_add_scalar",
       [](const std::vector<Tensor>& in) {
         return ops::add_scalar(ops::scale(in[0], 1.7), -0.3);
       },
       [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {9})}; }},
      {"mul_scalar_t",
       [](const std::vector<Tensor>& in) {
         return ops::mul_scalar_t(in[0], ops::mean(in[1]));
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {8}),
                                    random_tensor(rng, {5}, 0.5, 1.5)};
       }},
      {"div_scalar_t",
       [](const std::vector<Tensor>& in) {
         return ops::div_scalar_t(in[0], ops::mean(in[1]));
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {8}),
                                    random_tensor(rng, {5}, 0.5, 1.5)};
       }},
      {"relu",
       [](const std::vector<Tensor>& in) { return ops::relu(in[0]); },
       [](Rng& rng) {
         Tensor t = random_tensor(rng, {24});
         avoid_kinks(t, {0.0});
         return std::vector<Tensor>{t};
       }},
      {"sigmoid",
       [](const std::vector<Tensor>& in) { return ops::sigmoid(in[0]); },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {24}, -3.0, 3.0)};
       }},
      {"sqrt",
       [](const std::vector<Tensor>& in) { return ops::sqrt(in[0]); },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {12}, 0.2, 4.0)};
       }},
      {"abs",
       [](const std::vector<Tensor>& in) { return ops::abs(in[0]); },
       [](Rng& rng) {
         Tensor t = random_tensor(rng, {12});
         avoid_kinks(t, {0.0});
         return std::vector<Tensor>{t};
       }},
      {"clamp",
       [](const std::vector<Tensor>& in) {
         return ops::clamp(in[0], -0.5, 0.5);
       },
       [](Rng& rng) {
         Tensor t = random_tensor(rng, {16});
         avoid_kinks(t, {0.5});
         return std::vector<Tensor>{t};
       }},
      {"clamp_box",
       [](const std::vector<Tensor>& in) {
         return ops::clamp_box(in[0], {-0.5, -0.7}, {0.5, 0.7});
       },
       [](Rng& rng) {
         Tensor t = random_tensor(rng, {2});
         avoid_kinks(t, {0.5, 0.7});
         return std::vector<Tensor>{t};
       }},
      {"softmax",
       [](const std::vector<Tensor>& in) {
         return ops::mul(ops::softmax(in[0], 1), in[1]);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {4, 6}, -2.0, 2.0),
                                    random_tensor(rng, {4, 6})};
       }},
      {"matmul",
       [](const std::vector<Tensor>& in) { return ops::matmul(in[0], in[1]); },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {3, 4}),
                                    random_tensor(rng, {4, 5})};
       }},
      {"transpose_reshape_slice_append",
       [](const std::vector<Tensor>& in) {
         Tensor t = ops::reshape(ops::transpose(in[0]), {12});
         return ops::append_const(ops::flat_slice(t, 3, 6), 2.0);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {3, 4})};
       }},
      {"add_rowvec",
       [](const std::vector<Tensor>& in) {
         return ops::add_rowvec(in[0], in[1]);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {5, 3}),
                                    random_tensor(rng, {3})};
       }},
      {"linear",
       [](const std::vector<Tensor>& in) {
         return ops::linear(in[0], in[1], in[2]);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {4, 5}),
                                    random_tensor(rng, {5, 3}),
                                    random_tensor(rng, {3})};
       }},
      {"conv2d",
       [](const std::vector<Tensor>& in) {
         return ops::conv2d(in[0], in[1], in[2], 1, 1);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {1, 3, 8, 8}),
                                    random_tensor(rng, {4, 3, 3, 3}),
                                    random_tensor(rng, {4})};
       }},
      {"conv2d_strided",
       [](const std::vector<Tensor>& in) {
         return ops::conv2d(in[0], in[1], Tensor(), 2, 0);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {2, 2, 7, 7}),
                                    random_tensor(rng, {3, 2, 3, 3})};
       }},
      {"avg_pool",
       [](const std::vector<Tensor>& in) {
         return ops::pool(in[0], ops::PoolKind::kAverage, 2);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {1, 3, 6, 6})};
       }},
      {"max_pool",
       [](const std::vector<Tensor>& in) {
         return ops::pool(in[0], ops::PoolKind::kMax, 2);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {1, 2, 6, 6})};
       }},
      {"adaptive_avg_pool",
       [](const std::vector<Tensor>& in) {
         return ops::adaptive_avg_pool(in[0], 3, 5);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {1, 2, 7, 9})};
       }},
      {"bilinear_sample",
       [](const std::vector<Tensor>& in) {
         return ops::bilinear_sample(in[0], in[1]);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {2, 6, 8}),
                                    interior_points(rng, 5, 8, 6)};
       }},
      {"loss_robust",
       [robust_params](const std::vector<Tensor>& in) {
         return losses::robust(in[0], robust_params);
       },
       [robust_params](Rng& rng) {
         Tensor t = random_tensor(rng, {16}, -3.0, 3.0);
         avoid_kinks(t, {robust_params.delta1, robust_params.delta2});
         return std::vector<Tensor>{t};
       }},
      {"loss_robust_norm",
       [robust_params](const std::vector<Tensor>& in) {
         return losses::robust_norm(in[0], robust_params);
       },
       [robust_params](Rng& rng) {
         for (;;) {
           Tensor t = random_tensor(rng, {2}, -2.0, 2.0);
           const double n = std::hypot(t.at(0), t.at(1));
           if (std::fabs(n - robust_params.delta1) > 0.05 &&
               std::fabs(n - robust_params.delta2) > 0.05 && n > 0.05) {
             return std::vector<Tensor>{t};
           }
         }
       }},
      {"loss_confidence_bce",
       [](const std::vector<Tensor>& in) {
         return losses::keypoint_confidence_loss(
             in[0], {1, 0, 1, 1, 0, 0, 1, 0, 1});
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {9}, 0.05, 0.95)};
       }},
      {"loss_weighted_matching",
       [](const std::vector<Tensor>& in) {
         return losses::weighted_matching_loss(
             {in[0], in[1]}, {{1.0, 2.0}, {3.0, 1.0}}, in[2]);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {2}, 0.0, 6.0),
                                    random_tensor(rng, {2}, 0.0, 6.0),
                                    random_tensor(rng, {2}, 0.1, 0.9)};
       }},
      {"loss_epipolar_term",
       [essential, k](const std::vector<Tensor>& in) {
         return losses::epipolar_term(in[0], in[1], essential, k, k);
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {2}, 40.0, 200.0),
                                    random_tensor(rng, {2}, 40.0, 200.0)};
       }},
      {"loss_epipolar_robust",
       [essential, k](const std::vector<Tensor>& in) {
         return losses::epipolar_loss({{in[0], in[1]}}, essential, k, k,
                                      {1e-2, 5e-1});
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor(rng, {2}, 80.0, 180.0),
                                    random_tensor(rng, {2}, 80.0, 180.0)};
       }},
      {"loss_cycle",
       [](const std::vector<Tensor>& in) {
         // Cycle displacement through a differentiable toy matcher.
         const auto fwd = [&](const Tensor& x) { return ops::add(x, in[0]); };
         const auto rev = [&](const Tensor& x) { return ops::mul(x, in[1]); };
         return losses::cycle_loss({3.0, 4.0}, fwd, rev, {0.01, 40.0});
       },
       [](Rng& rng) {
         // Keep the resulting displacement norm away from the breakpoints.
         for (;;) {
           Tensor a = random_tensor(rng, {2}, 0.3, 1.0);
           Tensor b = random_tensor(rng, {2}, 0.9, 1.1);
           const double dx = (3.0 + a.at(0)) * b.at(0) - 3.0;
           const double dy = (4.0 + a.at(1)) * b.at(1) - 4.0;
           if (std::hypot(dx, dy) > 0.1) return std::vector<Tensor>{a, b};
         }
       }},
  };

  std::vector<GradCheckReport> reports;
  reports.reserve(cases.size() * instances);
  for (const auto& suite_case : cases) {
    for (int i = 0; i < instances; ++i) {
      Rng rng(10'000 + 131 * i);
      auto report = grad_check(suite_case.name, suite_case.op,
                               suite_case.gen(rng), 1e-5, tolerance);
      if (instances > 1) {
        report.op_name += "#" + std::to_string(i);
      }
      reports.push_back(std::move(report));
    }
  }
  return reports;
}

}  // namespace c2f
