#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>
#include <stdexcept>
#include <vector>

#include "c2f/rng.hpp"

namespace c2f::geo {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

// Data-dependent estimation failures (degenerate configurations, cheirality
// violations); preconditions throw std::invalid_argument instead.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Intrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;

  Matrix3d matrix() const;
};

// Rigid transform taking target-camera coordinates to reference-camera
// coordinates: X_r = R * X_t + t.
struct Pose {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d translation = Vector3d::Zero();

  // Validates R^T R = I and det R = 1 to 1e-9.
  static Pose make(const Matrix3d& rotation, const Vector3d& translation);
};

bool is_rotation(const Matrix3d& r, double tol = 1e-9);

// Frobenius-normalized essential matrix satisfying p_r^T E p_t = 0.
struct EssentialMatrix {
  Matrix3d m = Matrix3d::Zero();
};

struct Homography {
  Matrix3d m = Matrix3d::Identity();  // normalized so m(2,2) = 1

  Homography inverse() const;
};

// Homogeneous normalized image coordinate, third component 1.
using NormalizedPoint = Vector3d;

NormalizedPoint normalize(const Vector2d& pixel, const Intrinsics& k);
Vector2d denormalize(const NormalizedPoint& p, const Intrinsics& k);

Matrix3d skew(const Vector3d& v);

// E = [t]x R, Frobenius-normalized.  Rejects near-zero translation.
EssentialMatrix essential_from_pose(const Pose& pose);

struct EpipolarDistance {
  double value = 0.0;
  bool degenerate = false;  // point at the epipole: value is the algebraic residual
};

// Point-to-epipolar-line distance of p_r against the line E p_t, in
// normalized units.
EpipolarDistance epipolar_distance(const NormalizedPoint& p_t,
                                   const NormalizedPoint& p_r,
                                   const EssentialMatrix& e);

// d(p_t,p_r,E) + d(p_r,p_t,E^T); symmetric under (p_t,E) <-> (p_r,E^T).
EpipolarDistance symmetric_epipolar(const NormalizedPoint& p_t,
                                    const NormalizedPoint& p_r,
                                    const EssentialMatrix& e);

// Projective warp; empty when the homogeneous depth vanishes.
std::optional<Vector2d> warp_point(const Homography& h, const Vector2d& x);

struct HomographyConfig {
  double max_rotation_deg = 25.0;
  double min_scale = 0.8;
  double max_scale = 1.25;
  double max_translation_frac = 0.15;  // of image size
  double max_perspective = 1e-4;       // per pixel
  double min_overlap = 0.6;            // fraction of target kept in view
  int width = 256;
  int height = 256;
  int max_attempts = 100;
};

// Random in-view homography about the image center; deterministic in rng.
Homography random_homography(const HomographyConfig& config, Rng& rng);

// Fraction of target-image grid points that H keeps inside the image.
double homography_overlap(const Homography& h, int width, int height,
                          int grid = 16);

struct Match {
  NormalizedPoint p_t;
  NormalizedPoint p_r;
};

// Weighted direct linear transform on >= 8 matches followed by projection to
// the essential manifold (equal leading singular values, zero third).
// Zero-weight matches are dropped before the solve, so masking a match is
// exactly equivalent to removing it.  Throws EstimationError when the design
// matrix is rank-deficient beyond the expected null space.
EssentialMatrix eight_point(const std::vector<Match>& matches,
                            const std::vector<double>& weights = {});

struct RansacConfig {
  double threshold = 1e-2;  // symmetric epipolar distance, normalized units
  int max_iters = 1000;
  double confidence = 0.99;  // adaptive early exit
};

struct RansacResult {
  EssentialMatrix e;
  std::vector<char> inliers;  // one flag per input match
  int iterations = 0;
  int inlier_count = 0;
};

// Pixel-coordinate RANSAC over the weighted 8-point solver; empty result when
// no model reaches 8 inliers.  Reproducible for a given rng seed.
std::optional<RansacResult> ransac_essential(
    const std::vector<Vector2d>& x_t, const std::vector<Vector2d>& x_r,
    const Intrinsics& k_t, const Intrinsics& k_r, const RansacConfig& config,
    Rng& rng);

// Picks the (R, t) candidate with maximal cheirality count over the sample
// matches; t is unit-norm.  Throws EstimationError when no candidate puts a
// point in front of both cameras.
Pose decompose_essential(const EssentialMatrix& e,
                         const std::vector<Match>& sample_matches);

struct PoseError {
  double rotation_deg = 0.0;
  double translation_deg = 0.0;  // angle between translation directions
};

PoseError pose_error(const Pose& estimate, const Pose& truth);

// Linear two-view triangulation in the target frame (used for cheirality).
Vector3d triangulate(const Pose& pose, const NormalizedPoint& p_t,
                     const NormalizedPoint& p_r);

}  // namespace c2f::geo
