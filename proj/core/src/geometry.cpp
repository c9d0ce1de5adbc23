#include "c2f/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "c2f/tensor.hpp"  // check()

namespace c2f::geo {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDegPerRad = 180.0 / kPi;
}  // namespace

Matrix3d Intrinsics::matrix() const {
  Matrix3d k = Matrix3d::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

bool is_rotation(const Matrix3d& r, double tol) {
  const double ortho = (r.transpose() * r - Matrix3d::Identity()).norm();
  return ortho <= tol && std::fabs(r.determinant() - 1.0) <= tol;
}

Pose Pose::make(const Matrix3d& rotation, const Vector3d& translation) {
  check(is_rotation(rotation),
        "pose: rotation is not orthonormal with determinant 1");
  Pose pose;
  pose.rotation = rotation;
  pose.translation = translation;
  return pose;
}

Homography Homography::inverse() const {
  Matrix3d inv = m.inverse();
  check(inv.allFinite(), "homography: not invertible");
  Homography h;
  h.m = inv / inv(2, 2);
  return h;
}

NormalizedPoint normalize(const Vector2d& pixel, const Intrinsics& k) {
  check(k.fx > 0.0 && k.fy > 0.0, "intrinsics: focal lengths must be positive");
  return {(pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0};
}

Vector2d denormalize(const NormalizedPoint& p, const Intrinsics& k) {
  return {p.x() / p.z() * k.fx + k.cx, p.y() / p.z() * k.fy + k.cy};
}

Matrix3d skew(const Vector3d& v) {
  Matrix3d s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return s;
}

EssentialMatrix essential_from_pose(const Pose& pose) {
  const double tnorm = pose.translation.norm();
  if (tnorm < 1e-12) {
    throw EstimationError(
        "essential_from_pose: translation norm below 1e-12, essential matrix "
        "undefined for pure rotation");
  }
  EssentialMatrix e;
  e.m = skew(pose.translation) * pose.rotation;
  e.m /= e.m.norm();
  return e;
}

EpipolarDistance epipolar_distance(const NormalizedPoint& p_t,
                                   const NormalizedPoint& p_r,
                                   const EssentialMatrix& e) {
  const Vector3d line = e.m * p_t;  // epipolar line of p_t in the reference view
  const double residual = p_r.dot(line);
  const double denom = std::sqrt(line.x() * line.x() + line.y() * line.y());
  EpipolarDistance d;
  if (denom < 1e-15) {
    d.value = std::fabs(residual);
    d.degenerate = true;
  } else {
    d.value = std::fabs(residual) / denom;
  }
  return d;
}

EpipolarDistance symmetric_epipolar(const NormalizedPoint& p_t,
                                    const NormalizedPoint& p_r,
                                    const EssentialMatrix& e) {
  EssentialMatrix et;
  et.m = e.m.transpose();
  const EpipolarDistance fwd = epipolar_distance(p_t, p_r, e);
  const EpipolarDistance rev = epipolar_distance(p_r, p_t, et);
  return {fwd.value + rev.value, fwd.degenerate || rev.degenerate};
}

std::optional<Vector2d> warp_point(const Homography& h, const Vector2d& x) {
  const Vector3d y = h.m * Vector3d(x.x(), x.y(), 1.0);
  if (std::fabs(y.z()) < 1e-12) return std::nullopt;
  return Vector2d(y.x() / y.z(), y.y() / y.z());
}

double homography_overlap(const Homography& h, int width, int height,
                          int grid) {
  int inside = 0, total = 0;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const double x = (width - 1.0) * gx / (grid - 1.0);
      const double y = (height - 1.0) * gy / (grid - 1.0);
      ++total;
      const auto w = warp_point(h, {x, y});
      if (w && w->x() >= 0.0 && w->x() <= width - 1.0 && w->y() >= 0.0 &&
          w->y() <= height - 1.0) {
        ++inside;
      }
    }
  }
  return static_cast<double>(inside) / total;
}

Homography random_homography(const HomographyConfig& config, Rng& rng) {
  check(config.min_scale > 0.0 && config.max_scale >= config.min_scale,
        "random_homography: invalid scale range");
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    const double angle = rng.uniform(-config.max_rotation_deg,
                                     config.max_rotation_deg) / kDegPerRad;
    const double sx = rng.uniform(config.min_scale, config.max_scale);
    const double sy = rng.uniform(config.min_scale, config.max_scale);
    const double tx = rng.uniform(-1.0, 1.0) * config.max_translation_frac *
                      config.width;
    const double ty = rng.uniform(-1.0, 1.0) * config.max_translation_frac *
                      config.height;
    const double px = rng.uniform(-1.0, 1.0) * config.max_perspective;
    const double py = rng.uniform(-1.0, 1.0) * config.max_perspective;

    Matrix3d center = Matrix3d::Identity();
    center(0, 2) = 0.5 * (config.width - 1);
    center(1, 2) = 0.5 * (config.height - 1);
    Matrix3d uncenter = Matrix3d::Identity();
    uncenter(0, 2) = -center(0, 2);
    uncenter(1, 2) = -center(1, 2);

    Matrix3d core = Matrix3d::Identity();
    const double ca = std::cos(angle), sa = std::sin(angle);
    core(0, 0) = ca * sx;
    core(0, 1) = -sa * sy;
    core(1, 0) = sa * sx;
    core(1, 1) = ca * sy;
    core(0, 2) = tx;
    core(1, 2) = ty;
    core(2, 0) = px;
    core(2, 1) = py;

    Homography h;
    h.m = center * core * uncenter;
    h.m /= h.m(2, 2);
    if (std::fabs(h.m.determinant()) < 1e-9) continue;
    if (homography_overlap(h, config.width, config.height) <
        config.min_overlap) {
      continue;
    }
    return h;
  }
  throw EstimationError(
      "random_homography: no sample satisfied the overlap constraint; loosen "
      "the configured ranges");
}

namespace {

struct PointNormalization {
  Matrix3d t = Matrix3d::Identity();
};

// Weighted isotropic normalization (centroid to origin, mean distance to
// sqrt(2)).  Weighted so that zero-weight matches contribute nothing.
PointNormalization conditioning_transform(const std::vector<Match>& matches,
                                          const std::vector<double>& weights,
                                          bool reference) {
  double wsum = 0.0;
  Vector2d centroid = Vector2d::Zero();
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const Vector3d& p = reference ? matches[i].p_r : matches[i].p_t;
    centroid += weights[i] * p.head<2>();
    wsum += weights[i];
  }
  centroid /= wsum;
  double dist = 0.0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const Vector3d& p = reference ? matches[i].p_r : matches[i].p_t;
    dist += weights[i] * (p.head<2>() - centroid).norm();
  }
  dist /= wsum;
  const double scale = dist > 1e-12 ? std::sqrt(2.0) / dist : 1.0;
  PointNormalization n;
  n.t(0, 0) = scale;
  n.t(1, 1) = scale;
  n.t(0, 2) = -scale * centroid.x();
  n.t(1, 2) = -scale * centroid.y();
  return n;
}

EssentialMatrix project_to_essential(const Matrix3d& e) {
  Eigen::JacobiSVD<Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector3d s = svd.singularValues();
  const double sigma = 0.5 * (s(0) + s(1));
  Vector3d d(sigma, sigma, 0.0);
  EssentialMatrix out;
  out.m = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  out.m /= out.m.norm();
  return out;
}

}  // namespace

EssentialMatrix eight_point(const std::vector<Match>& matches,
                            const std::vector<double>& weights) {
  check(weights.empty() || weights.size() == matches.size(),
        "eight_point: weight count does not match match count");
  std::vector<Match> active;
  std::vector<double> w;
  active.reserve(matches.size());
  w.reserve(matches.size());
  bool any_positive = false;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const double wi = weights.empty() ? 1.0 : weights[i];
    check(wi >= 0.0, "eight_point: weights must be nonnegative");
    if (wi == 0.0) continue;
    any_positive = true;
    active.push_back(matches[i]);
    w.push_back(wi);
  }
  check(any_positive || matches.empty(), "eight_point: all weights are zero");
  check(active.size() >= 8, "eight_point: needs at least 8 matches with "
                            "positive weight, got " +
                                std::to_string(active.size()));

  const PointNormalization nt = conditioning_transform(active, w, false);
  const PointNormalization nr = conditioning_transform(active, w, true);

  Eigen::MatrixXd a(active.size(), 9);
  for (std::size_t i = 0; i < active.size(); ++i) {
    const Vector3d qt = nt.t * active[i].p_t;
    const Vector3d qr = nr.t * active[i].p_r;
    const double sw = std::sqrt(w[i]);
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) {
        a(i, 3 * j + k) = sw * qr(j) * qt(k);
      }
    }
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // One vanishing singular value is the solution; a second indicates a
  // degenerate configuration.
  if (sv(0) <= 0.0 || sv(7) / sv(0) < 1e-9) {
    std::ostringstream os;
    os << "eight_point: design matrix rank-deficient beyond the expected null "
          "space (s7/s0 = "
       << (sv(0) > 0.0 ? sv(7) / sv(0) : 0.0) << ")";
    throw EstimationError(os.str());
  }
  const Eigen::VectorXd e_vec = svd.matrixV().col(8);
  Matrix3d e_cond;
  for (int j = 0; j < 3; ++j) {
    for (int k = 0; k < 3; ++k) e_cond(j, k) = e_vec(3 * j + k);
  }
  const Matrix3d e = nr.t.transpose() * e_cond * nt.t;
  return project_to_essential(e);
}

std::optional<RansacResult> ransac_essential(
    const std::vector<Vector2d>& x_t, const std::vector<Vector2d>& x_r,
    const Intrinsics& k_t, const Intrinsics& k_r, const RansacConfig& config,
    Rng& rng) {
  check(x_t.size() == x_r.size(),
        "ransac_essential: point lists differ in size");
  const int n = static_cast<int>(x_t.size());
  if (n < 8) return std::nullopt;

  std::vector<Match> matches(n);
  for (int i = 0; i < n; ++i) {
    matches[i] = {normalize(x_t[i], k_t), normalize(x_r[i], k_r)};
  }

  auto score = [&](const EssentialMatrix& e, std::vector<char>& mask) {
    int count = 0;
    mask.assign(n, 0);
    for (int i = 0; i < n; ++i) {
      const auto d = symmetric_epipolar(matches[i].p_t, matches[i].p_r, e);
      if (d.value < config.threshold) {
        mask[i] = 1;
        ++count;
      }
    }
    return count;
  };

  int best_count = -1;
  std::vector<char> best_mask;
  EssentialMatrix best_e;
  int iterations = 0;
  double needed = config.max_iters;
  std::vector<Match> sample(8);
  std::array<int, 8> picks{};
  for (int it = 0; it < config.max_iters && it < needed; ++it) {
    ++iterations;
    // Draw 8 distinct indices.
    for (int s = 0; s < 8; ++s) {
      int idx;
      bool dup;
      do {
        idx = static_cast<int>(rng.uniform_int(n));
        dup = false;
        for (int q = 0; q < s; ++q) dup |= picks[q] == idx;
      } while (dup);
      picks[s] = idx;
      sample[s] = matches[idx];
    }
    EssentialMatrix e;
    try {
      e = eight_point(sample);
    } catch (const EstimationError&) {
      continue;
    }
    std::vector<char> mask;
    const int count = score(e, mask);
    if (count > best_count) {
      best_count = count;
      best_mask = std::move(mask);
      best_e = e;
      const double ratio = static_cast<double>(count) / n;
      const double p_sample = std::pow(ratio, 8);
      if (p_sample >= 1.0 - 1e-12) {
        needed = 0;  // perfect consensus
      } else if (p_sample > 0.0) {
        needed = std::log(1.0 - config.confidence) / std::log(1.0 - p_sample);
      }
    }
  }
  if (best_count < 8) return std::nullopt;

  // Refit on the consensus set and rescore with the refined model.
  std::vector<Match> inlier_matches;
  for (int i = 0; i < n; ++i) {
    if (best_mask[i]) inlier_matches.push_back(matches[i]);
  }
  try {
    const EssentialMatrix refined = eight_point(inlier_matches);
    std::vector<char> refined_mask;
    const int refined_count = score(refined, refined_mask);
    if (refined_count >= 8) {
      best_e = refined;
      best_mask = std::move(refined_mask);
      best_count = refined_count;
    }
  } catch (const EstimationError&) {
    // Keep the minimal-sample model.
  }

  RansacResult result;
  result.e = best_e;
  result.inliers = std::move(best_mask);
  result.iterations = iterations;
  result.inlier_count = best_count;
  return result;
}

Vector3d triangulate(const Pose& pose, const NormalizedPoint& p_t,
                     const NormalizedPoint& p_r) {
  // Depths from z_t * (R p_t) - z_r * p_r = -t in least squares.
  Eigen::Matrix<double, 3, 2> a;
  a.col(0) = pose.rotation * p_t;
  a.col(1) = -p_r;
  const Eigen::Vector2d depths =
      a.colPivHouseholderQr().solve(-pose.translation);
  return depths(0) * p_t;
}

Pose decompose_essential(const EssentialMatrix& e,
                         const std::vector<Match>& sample_matches) {
  check(!sample_matches.empty(),
        "decompose_essential: needs at least one match for disambiguation");
  Eigen::JacobiSVD<Matrix3d> svd(e.m,
                                 Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d u = svd.matrixU();
  Matrix3d v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Matrix3d w = Matrix3d::Zero();
  w(0, 1) = -1.0;
  w(1, 0) = 1.0;
  w(2, 2) = 1.0;
  const Matrix3d r1 = u * w * v.transpose();
  const Matrix3d r2 = u * w.transpose() * v.transpose();
  const Vector3d t = u.col(2);

  const std::array<Pose, 4> candidates = {
      Pose{r1, t}, Pose{r1, -t}, Pose{r2, t}, Pose{r2, -t}};
  int best_count = -1;
  int best_idx = -1;
  for (int c = 0; c < 4; ++c) {
    int count = 0;
    for (const Match& m : sample_matches) {
      const Vector3d x = triangulate(candidates[c], m.p_t, m.p_r);
      const double z_t = x.z();
      const double z_r =
          (candidates[c].rotation * x + candidates[c].translation).z();
      if (z_t > 0.0 && z_r > 0.0) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best_idx = c;
    }
  }
  if (best_count <= 0) {
    throw EstimationError(
        "decompose_essential: no candidate places a point in front of both "
        "cameras");
  }
  Pose pose = candidates[best_idx];
  pose.translation.normalize();
  return pose;
}

PoseError pose_error(const Pose& estimate, const Pose& truth) {
  const Matrix3d r_rel = estimate.rotation * truth.rotation.transpose();
  const Eigen::Quaterniond q(r_rel);
  const double rot_rad = 2.0 * std::atan2(q.vec().norm(), std::fabs(q.w()));

  PoseError err;
  err.rotation_deg = rot_rad * kDegPerRad;
  const double tn_est = estimate.translation.norm();
  const double tn_gt = truth.translation.norm();
  if (tn_est < 1e-15 || tn_gt < 1e-15) {
    err.translation_deg = 0.0;
  } else {
    const Vector3d a = estimate.translation / tn_est;
    const Vector3d b = truth.translation / tn_gt;
    err.translation_deg = std::atan2(a.cross(b).norm(), a.dot(b)) * kDegPerRad;
  }
  return err;
}

}  // namespace c2f::geo
