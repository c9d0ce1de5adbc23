#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "c2f/geometry.hpp"
#include "c2f/tensor.hpp"

namespace c2f::losses {

// Huber-with-truncation parameters (quadratic below delta1, linear up to
// delta2, constant beyond).
struct RobustParams {
  double delta1 = 1.0;
  double delta2 = 3.0;
};

void validate(const RobustParams& params);

struct LossWeights {
  double lambda1 = 1.0;  // pairs the confidence loss with the matching loss
  double lambda3 = 1.0;  // pairs epipolar + cycle with the matching loss
};

struct LossReport {
  double l_e = 0.0;
  double l_cy = 0.0;
  double l_m = 0.0;
  double l_c = 0.0;
  double composite = 0.0;
  std::map<std::string, int> term_counts;
};

// ---- plain-value robust kernel ----------------------------------------------

double robust_value(double a, const RobustParams& params);
double robust_derivative(double a, const RobustParams& params);

// ---- tape ops ----------------------------------------------------------------

// Elementwise robust kernel.
Tensor robust(const Tensor& a, const RobustParams& params);

// robust(|d|_2) of a 2-vector, smooth at the origin (the quadratic branch
// avoids the norm's kink).
Tensor robust_norm(const Tensor& d, const RobustParams& params);

// Mean binary cross entropy; confidences are clamped to [1e-7, 1-1e-7].
Tensor keypoint_confidence_loss(const Tensor& confidences,
                                const std::vector<double>& labels);

// Symmetric epipolar distance of one pixel-coordinate match, differentiable
// in both endpoints; E and the intrinsics are constants.
Tensor epipolar_term(const Tensor& x_t_px, const Tensor& x_r_px,
                     const geo::EssentialMatrix& e, const geo::Intrinsics& k_t,
                     const geo::Intrinsics& k_r);

// Mean robust symmetric epipolar distance over a batch of pixel matches.
// Empty batches produce a zero scalar (count the batch separately).
Tensor epipolar_loss(const std::vector<std::pair<Tensor, Tensor>>& pixel_pairs,
                     const geo::EssentialMatrix& e, const geo::Intrinsics& k_t,
                     const geo::Intrinsics& k_r, const RobustParams& params);

// Directional matcher as a function of a pixel-coordinate tensor [2].
using MatchFn = std::function<Tensor(const Tensor&)>;

// robust(|reverse(forward(x_t)) - x_t|); differentiable through both passes.
Tensor cycle_loss(const Eigen::Vector2d& x_t, const MatchFn& forward,
                  const MatchFn& reverse, const RobustParams& params);

// Confidence-weighted mean squared endpoint error; the weights are
// normalized by their mean, so the loss is invariant to confidence rescale.
Tensor weighted_matching_loss(const std::vector<Tensor>& x_pred,
                              const std::vector<Eigen::Vector2d>& x_gt,
                              const Tensor& confidences);

// Stage composites.  A term may be omitted only when its weight is zero;
// otherwise the missing term is rejected by name.
Tensor stage_loss_self(const std::optional<Tensor>& l_m,
                       const std::optional<Tensor>& l_c,
                       const LossWeights& weights);
Tensor stage_loss_weak(const std::optional<Tensor>& l_m,
                       const std::optional<Tensor>& l_e,
                       const std::optional<Tensor>& l_cy,
                       const LossWeights& weights);

}  // namespace c2f::losses
