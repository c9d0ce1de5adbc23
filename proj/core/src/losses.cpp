#include "c2f/losses.hpp"

#include <cmath>

#include "c2f/ops.hpp"

namespace c2f::losses {

using detail::TensorNode;

void validate(const RobustParams& params) {
  check(params.delta1 > 0.0 && params.delta2 > params.delta1,
        "robust: requires 0 < delta1 < delta2");
}

double robust_value(double a, const RobustParams& params) {
  const double m = std::fabs(a);
  if (m <= params.delta1) return 0.5 * a * a;
  if (m <= params.delta2) return params.delta1 * (m - 0.5 * params.delta1);
  return params.delta1 * (params.delta2 - 0.5 * params.delta1);
}

double robust_derivative(double a, const RobustParams& params) {
  const double m = std::fabs(a);
  if (m <= params.delta1) return a;
  if (m <= params.delta2) return a > 0.0 ? params.delta1 : -params.delta1;
  return 0.0;
}

Tensor robust(const Tensor& a, const RobustParams& params) {
  validate(params);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = robust_value(a.at(i), params);
  }
  return make_op("robust", a.shape(), std::move(out), {a},
                 [params](TensorNode& self) {
                   TensorNode& a = *self.parents[0];
                   if (!a.requires_grad) return;
                   a.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     a.grad[i] +=
                         self.grad[i] * robust_derivative(a.values[i], params);
                   }
                 });
}

Tensor robust_norm(const Tensor& d, const RobustParams& params) {
  validate(params);
  check(d.shape() == Shape{2}, "robust_norm: expects a 2-vector, got " +
                                   shape_str(d.shape()));
  const double dx = d.at(0), dy = d.at(1);
  const double norm = std::hypot(dx, dy);
  const double value = norm <= params.delta1
                           ? 0.5 * (dx * dx + dy * dy)
                           : robust_value(norm, params);
  return make_op("robust_norm", {1}, {value}, {d},
                 [params](TensorNode& self) {
                   TensorNode& d = *self.parents[0];
                   if (!d.requires_grad) return;
                   d.ensure_grad();
                   const double g = self.grad[0];
                   const double dx = d.values[0], dy = d.values[1];
                   const double norm = std::hypot(dx, dy);
                   if (norm <= params.delta1) {
                     // quadratic branch: gradient is the displacement itself
                     d.grad[0] += g * dx;
                     d.grad[1] += g * dy;
                   } else if (norm <= params.delta2) {
                     d.grad[0] += g * params.delta1 * dx / norm;
                     d.grad[1] += g * params.delta1 * dy / norm;
                   }
                   // plateau: exactly zero
                 });
}

Tensor keypoint_confidence_loss(const Tensor& confidences,
                                const std::vector<double>& labels) {
  check(confidences.numel() == labels.size(),
        "keypoint_confidence_loss: " + std::to_string(confidences.numel()) +
            " confidences vs " + std::to_string(labels.size()) + " labels");
  check(!labels.empty(), "keypoint_confidence_loss: empty batch");
  constexpr double kEps = 1e-7;
  const std::size_t n = labels.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c =
        std::min(std::max(confidences.at(i), kEps), 1.0 - kEps);
    total += -(labels[i] * std::log(c) + (1.0 - labels[i]) * std::log(1.0 - c));
  }
  return make_op(
      "bce_mean", {1}, {total / static_cast<double>(n)}, {confidences},
      [labels, n](TensorNode& self) {
        TensorNode& conf = *self.parents[0];
        if (!conf.requires_grad) return;
        conf.ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double raw = conf.values[i];
          if (raw <= kEps || raw >= 1.0 - kEps) continue;  // clamped region
          conf.grad[i] += g * (-labels[i] / raw + (1.0 - labels[i]) / (1.0 - raw));
        }
      });
}

namespace {

// (x - c) / f per component, then homogeneous 1: pixel [2] -> normalized [3].
Tensor normalize_px(const Tensor& x_px, const geo::Intrinsics& k) {
  Tensor offset = Tensor::from_values({2}, {-k.cx, -k.cy});
  Tensor inv_focal = Tensor::from_values({2}, {1.0 / k.fx, 1.0 / k.fy});
  Tensor p = ops::mul(ops::add(x_px, offset), inv_focal);
  return ops::append_const(p, 1.0);
}

// |residual| / sqrt(line_x^2 + line_y^2 + eps); eps keeps the epipole finite.
Tensor directed_distance(const Tensor& residual_abs, const Tensor& line) {
  Tensor head = ops::flat_slice(line, 0, 2);
  Tensor denom_sq = ops::sum(ops::mul(head, head));
  Tensor denom = ops::sqrt(ops::add_scalar(denom_sq, 1e-24));
  return ops::div(residual_abs, denom);
}

}  // namespace

Tensor epipolar_term(const Tensor& x_t_px, const Tensor& x_r_px,
                     const geo::EssentialMatrix& e, const geo::Intrinsics& k_t,
                     const geo::Intrinsics& k_r) {
  check(x_t_px.shape() == Shape{2} && x_r_px.shape() == Shape{2},
        "epipolar_term: expects pixel 2-vectors");
  Tensor p_t = normalize_px(x_t_px, k_t);
  Tensor p_r = normalize_px(x_r_px, k_r);

  // Eigen stores column-major; spell the row-major layout out explicitly.
  Tensor e_rows = Tensor::from_values(
      {3, 3}, {e.m(0, 0), e.m(0, 1), e.m(0, 2), e.m(1, 0), e.m(1, 1),
               e.m(1, 2), e.m(2, 0), e.m(2, 1), e.m(2, 2)});
  Tensor e_cols = ops::transpose(e_rows);  // E^T, also row-major

  Tensor line_t = ops::reshape(
      ops::matmul(e_rows, ops::reshape(p_t, {3, 1})), {3});  // E p_t
  Tensor line_r = ops::reshape(
      ops::matmul(e_cols, ops::reshape(p_r, {3, 1})), {3});  // E^T p_r
  Tensor residual =
      ops::abs(ops::sum(ops::mul(p_r, line_t)));  // |p_r . (E p_t)|

  Tensor fwd = directed_distance(residual, line_t);
  Tensor rev = directed_distance(residual, line_r);
  return ops::add(fwd, rev);
}

Tensor epipolar_loss(const std::vector<std::pair<Tensor, Tensor>>& pixel_pairs,
                     const geo::EssentialMatrix& e, const geo::Intrinsics& k_t,
                     const geo::Intrinsics& k_r, const RobustParams& params) {
  validate(params);
  if (pixel_pairs.empty()) return Tensor::scalar(0.0);
  Tensor total;
  for (const auto& [x_t, x_r] : pixel_pairs) {
    Tensor term = robust(epipolar_term(x_t, x_r, e, k_t, k_r), params);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::scale(total, 1.0 / static_cast<double>(pixel_pairs.size()));
}

Tensor cycle_loss(const Eigen::Vector2d& x_t, const MatchFn& forward,
                  const MatchFn& reverse, const RobustParams& params) {
  Tensor start = Tensor::from_values({2}, {x_t.x(), x_t.y()});
  Tensor cycled = reverse(forward(start));
  check(cycled.shape() == Shape{2}, "cycle_loss: matcher must map [2] -> [2]");
  return robust_norm(ops::sub(cycled, start), params);
}

Tensor weighted_matching_loss(const std::vector<Tensor>& x_pred,
                              const std::vector<Eigen::Vector2d>& x_gt,
                              const Tensor& confidences) {
  check(x_pred.size() == x_gt.size(),
        "weighted_matching_loss: prediction/ground-truth size mismatch");
  check(confidences.numel() == x_pred.size(),
        "weighted_matching_loss: confidence count " +
            std::to_string(confidences.numel()) + " does not match " +
            std::to_string(x_pred.size()) + " keypoints");
  check(!x_pred.empty(), "weighted_matching_loss: empty batch");
  double csum = 0.0;
  for (std::size_t i = 0; i < confidences.numel(); ++i) {
    csum += confidences.at(i);
  }
  check(csum > 0.0,
        "weighted_matching_loss: all-zero confidences, normalization "
        "undefined");

  Tensor weights = ops::div_scalar_t(confidences, ops::mean(confidences));
  Tensor total;
  for (std::size_t i = 0; i < x_pred.size(); ++i) {
    check(x_pred[i].shape() == Shape{2},
          "weighted_matching_loss: predictions must be pixel 2-vectors");
    Tensor gt = Tensor::from_values({2}, {x_gt[i].x(), x_gt[i].y()});
    Tensor d = ops::sub(x_pred[i], gt);
    Tensor sq = ops::sum(ops::mul(d, d));
    Tensor term = ops::mul(ops::flat_slice(weights, static_cast<int>(i), 1), sq);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::scale(total, 1.0 / static_cast<double>(x_pred.size()));
}

namespace {

Tensor require_term(const std::optional<Tensor>& term, double weight,
                    const char* name) {
  if (!term.has_value()) {
    check(weight == 0.0, std::string("stage loss: required term ") + name +
                             " is missing");
    return Tensor::scalar(0.0);
  }
  return *term;
}

}  // namespace

Tensor stage_loss_self(const std::optional<Tensor>& l_m,
                       const std::optional<Tensor>& l_c,
                       const LossWeights& weights) {
  check(l_m.has_value(), "stage loss: required term l_m is missing");
  Tensor c = require_term(l_c, weights.lambda1, "l_c");
  return ops::add(*l_m, ops::scale(c, weights.lambda1));
}

Tensor stage_loss_weak(const std::optional<Tensor>& l_m,
                       const std::optional<Tensor>& l_e,
                       const std::optional<Tensor>& l_cy,
                       const LossWeights& weights) {
  check(l_m.has_value(), "stage loss: required term l_m is missing");
  Tensor e = require_term(l_e, weights.lambda3, "l_e");
  Tensor cy = require_term(l_cy, weights.lambda3, "l_cy");
  return ops::add(*l_m, ops::scale(ops::add(e, cy), weights.lambda3));
}

}  // namespace c2f::losses
