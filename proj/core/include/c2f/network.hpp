#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "c2f/rng.hpp"
#include "c2f/tensor.hpp"

namespace c2f::net {

// Backbone: one 3x3 conv + relu + 2x max-pool per block.  The fine tap sits
// after block 0 (1/2 resolution) and the median tap after block 2 (1/8);
// later blocks keep pooling only while both spatial dimensions stay at or
// above coarse_side, and the final map is adaptively average-pooled to
// coarse_side x coarse_side.  At 512 px this reproduces the 1/2, 1/8, 1/32 +
// 16x16 layout; smaller inputs stop pooling early instead of upsampling.
struct ExtractorConfig {
  std::vector<int> channels{32, 64, 96, 128, 160};
  int coarse_side = 16;
};

// Full-resolution confidence head: 3x3 convs with relu between, sigmoid out.
struct DetectorConfig {
  std::vector<int> hidden{32, 32};
};

// Similarity head: two 3x3 convs over the (W_t^2, side, side) similarity
// tensor, then a fully connected layer to (u, v) through a sigmoid.  The
// similarity logits are cosine products scaled by `temperature`.
struct MatcherConfig {
  int conv1 = 16;
  int conv2 = 16;
  double temperature = 10.0;
};

struct MatchWindows {
  int target_side = 3;   // W_t, odd
  int refine_side = 5;   // W_r, odd
  int coarse_side = 16;  // W_c, equals the coarse pyramid side
};

struct ModelConfig {
  ExtractorConfig extractor;
  DetectorConfig detector;
  MatcherConfig matcher;
  MatchWindows windows;

  void validate() const;
};

struct FeaturePyramid {
  Tensor fine;    // [C_f, H/2, W/2]
  Tensor median;  // [C_m, H/8, W/8]
  Tensor coarse;  // [C_c, side, side]
  int image_width = 0;
  int image_height = 0;
};

struct Keypoint {
  Eigen::Vector2d x = Eigen::Vector2d::Zero();
  double confidence = 0.0;
};

struct MatchResult {
  Eigen::Vector2d x_t = Eigen::Vector2d::Zero();
  Eigen::Vector2d x_r = Eigen::Vector2d::Zero();
  // Vector-sum decomposition at full resolution: x_r = coarse + median + fine.
  Eigen::Vector2d comp_coarse = Eigen::Vector2d::Zero();
  Eigen::Vector2d comp_median = Eigen::Vector2d::Zero();
  Eigen::Vector2d comp_fine = Eigen::Vector2d::Zero();
  std::array<double, 3> similarity_peaks{0.0, 0.0, 0.0};
  double confidence = 0.0;
  bool clamped = false;
  int levels = 3;
};

// Differentiable trace of one directional match g_{target->reference}.
struct MatchTrace {
  Eigen::Vector2d x_t = Eigen::Vector2d::Zero();
  Tensor x_r;                    // [2], final full-resolution coordinate
  Tensor comp_coarse;            // [2] absolute coarse estimate
  Tensor comp_median;            // [2] median offset (after clamping)
  Tensor comp_fine;              // [2] fine offset (after clamping)
  Tensor sim_coarse, sim_median, sim_fine;  // softmax similarities [W_t^2, s^2]
  std::array<double, 3> similarity_peaks{0.0, 0.0, 0.0};
  bool clamped = false;
  int levels = 3;

  MatchResult to_result() const;
};

class Model {
 public:
  Model() = default;
  Model(ModelConfig config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  std::map<std::string, Tensor>& parameters() { return params_; }
  const std::map<std::string, Tensor>& parameters() const { return params_; }
  void zero_grad();

  // Shared-weight multi-level feature extraction; image is [3,H,W] with H
  // and W divisible by 32 and H/8, W/8 at least coarse_side.
  FeaturePyramid extract_features(const Tensor& image) const;

  // Full-resolution keypoint confidence map [1,H,W] in (0,1); applied to
  // target images only.
  Tensor detect(const Tensor& image) const;

  // Directional coarse-to-fine match of one target keypoint.  levels: 1 =
  // coarse only, 2 = + median, 3 = full.
  MatchTrace match(const Eigen::Vector2d& x_t, const FeaturePyramid& pyr_t,
                   const FeaturePyramid& pyr_r, int levels = 3) const;

  // Match continuation from a tensor-valued keypoint, used by the reverse
  // pass of the cycle loss (gradients flow through the start coordinate).
  MatchTrace match_from(const Tensor& x_t, const FeaturePyramid& pyr_t,
                        const FeaturePyramid& pyr_r, int levels = 3) const;

 private:
  struct HeadOutput {
    Tensor uv;        // [2] in (0,1)^2
    Tensor sim;       // softmax similarity [W_t^2, s^2]
    double peak = 0.0;
  };

  HeadOutput match_layer(const Tensor& patch_t, const Tensor& region_r,
                         const std::string& head) const;
  Tensor conv_block(const Tensor& x, const std::string& name, bool do_pool) const;
  const Tensor& param(const std::string& name) const;

  ModelConfig config_;
  std::map<std::string, Tensor> params_;
};

// Local maxima above `threshold` with no stronger neighbor within
// `nms_radius` (Chebyshev); ties break row-major.  Result ordered by
// confidence descending (row-major on ties) and truncated to max_k.
std::vector<Keypoint> select_keypoints(const Tensor& confidence_map,
                                       double threshold, int nms_radius,
                                       int max_k);

// Bilinear crop of a [C,h,w] map: side x side patch centered at `center`
// (feature-grid coordinates); differentiable in map and center.
Tensor crop_patch(const Tensor& map, const Tensor& center, int side);

// Pixel <-> feature-grid coordinate maps (cell centers aligned).
inline double pixel_to_feature(double px, double stride) {
  return (px + 0.5) / stride - 0.5;
}
inline double feature_to_pixel(double f, double stride) {
  return (f + 0.5) * stride - 0.5;
}

}  // namespace c2f::net
