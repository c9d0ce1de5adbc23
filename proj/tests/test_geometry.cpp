#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "c2f/geometry.hpp"
#include "c2f/rng.hpp"

using namespace c2f;
using geo::EssentialMatrix;
using geo::Homography;
using geo::Intrinsics;
using geo::Match;
using geo::Pose;
using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

Matrix3d random_rotation(Rng& rng, double max_angle_deg) {
  Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  const double angle = rng.uniform(0.0, max_angle_deg) * kDeg;
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

struct TestScene {
  Pose pose;
  Intrinsics k_t, k_r;
  std::vector<Match> matches;          // normalized, noise-free
  std::vector<Vector2d> px_t, px_r;    // pixel projections
};

// Random two-view scene with points guaranteed in front of both cameras.
TestScene make_scene(Rng& rng, int points, double max_rot_deg = 20.0,
                     double baseline = 0.6) {
  TestScene scene;
  scene.k_t = {320.0, 310.0, 128.0, 126.0};
  scene.k_r = {300.0, 305.0, 130.0, 124.0};
  for (;;) {
    const Matrix3d r = random_rotation(rng, max_rot_deg);
    Vector3d t(rng.normal(), rng.normal(), rng.normal());
    t = t.normalized() * baseline;
    scene.pose = Pose::make(r, t);
    scene.matches.clear();
    scene.px_t.clear();
    scene.px_r.clear();
    int attempts = 0;
    while (static_cast<int>(scene.matches.size()) < points &&
           attempts < points * 50) {
      ++attempts;
      const Vector3d x(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                       rng.uniform(4.0, 9.0));
      const Vector3d x_ref = r * x + t;
      if (x_ref.z() < 0.5) continue;
      const geo::NormalizedPoint p_t(x.x() / x.z(), x.y() / x.z(), 1.0);
      const geo::NormalizedPoint p_r(x_ref.x() / x_ref.z(),
                                     x_ref.y() / x_ref.z(), 1.0);
      scene.matches.push_back({p_t, p_r});
      scene.px_t.push_back(geo::denormalize(p_t, scene.k_t));
      scene.px_r.push_back(geo::denormalize(p_r, scene.k_r));
    }
    if (static_cast<int>(scene.matches.size()) == points) return scene;
  }
}

double frobenius_gap(const EssentialMatrix& a, const EssentialMatrix& b) {
  const double sign = (a.m.cwiseProduct(b.m)).sum() >= 0.0 ? 1.0 : -1.0;
  return (a.m - sign * b.m).norm();
}

// Independent epipolar check: explicit 2-D line geometry in the z=1 plane.
double line_distance_oracle(const Vector3d& p_t, const Vector3d& p_r,
                            const Matrix3d& e) {
  const Vector3d line = e * p_t;
  const Vector2d normal(line.x(), line.y());
  return std::fabs(normal.dot(p_r.head<2>()) + line.z()) / normal.norm();
}

}  // namespace

TEST_CASE("normalize maps the principal point to the origin") {
  Intrinsics k{400.0, 380.0, 250.0, 240.0};
  const auto p = geo::normalize({250.0, 240.0}, k);
  CHECK(p.x() == 0.0);
  CHECK(p.y() == 0.0);
  CHECK(p.z() == 1.0);
  const auto q = geo::normalize({250.0 + 400.0, 240.0}, k);
  CHECK(q.x() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(q.y() == 0.0);
}

TEST_CASE("normalize round trips through the intrinsic matrix") {
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    Intrinsics k{rng.uniform(100, 900), rng.uniform(100, 900),
                 rng.uniform(-50, 500), rng.uniform(-50, 500)};
    const Vector2d x(rng.uniform(-1000, 1000), rng.uniform(-1000, 1000));
    const Vector3d recovered = k.matrix() * geo::normalize(x, k);
    CHECK((recovered.head<2>() - x).norm() <= 1e-12 * (1.0 + x.norm()));
    CHECK(recovered.z() == 1.0);
  }
}

TEST_CASE("essential matrix of a pure x translation is the canonical skew form") {
  const Pose pose = Pose::make(Matrix3d::Identity(), {1.0, 0.0, 0.0});
  const auto e = geo::essential_from_pose(pose);
  Matrix3d expected = Matrix3d::Zero();
  expected(1, 2) = -1.0;
  expected(2, 1) = 1.0;
  expected /= expected.norm();
  EssentialMatrix exp_e{expected};
  CHECK(frobenius_gap(e, exp_e) <= 1e-15);
}

TEST_CASE("essential matrices have two equal singular values and one zero") {
  Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    const Pose pose = Pose::make(random_rotation(rng, 40.0),
                                 Vector3d(rng.normal(), rng.normal(),
                                          rng.normal()).normalized());
    const auto e = geo::essential_from_pose(pose);
    Eigen::JacobiSVD<Matrix3d> svd(e.m);
    const Vector3d s = svd.singularValues();
    CHECK(std::fabs(s(0) - s(1)) <= 1e-9);
    CHECK(std::fabs(s(2)) <= 1e-9);
    CHECK(std::fabs(e.m.determinant()) <= 1e-9);
  }
}

TEST_CASE("essential_from_pose rejects a near-zero translation") {
  const Pose pose = Pose::make(Matrix3d::Identity(), {0.0, 0.0, 1e-13});
  CHECK_THROWS_AS(geo::essential_from_pose(pose), geo::EstimationError);
}

TEST_CASE("noise-free correspondences satisfy the epipolar constraint") {
  Rng rng(41);
  TestScene scene = make_scene(rng, 40);
  const auto e = geo::essential_from_pose(scene.pose);
  for (const Match& m : scene.matches) {
    CHECK(std::fabs(m.p_r.dot(e.m * m.p_t)) <= 1e-10);
    CHECK(geo::symmetric_epipolar(m.p_t, m.p_r, e).value <= 1e-10);
  }
}

TEST_CASE("epipolar distance evaluates the canonical hand example to one") {
  EssentialMatrix e;
  e.m = geo::skew({1.0, 0.0, 0.0});
  const geo::NormalizedPoint p_t(0.0, 0.0, 1.0);
  const geo::NormalizedPoint p_r(0.0, 1.0, 1.0);
  const auto d = geo::epipolar_distance(p_t, p_r, e);
  CHECK(!d.degenerate);
  CHECK(d.value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("epipolar distance matches the explicit line-geometry form") {
  Rng rng(43);
  for (int i = 0; i < 200; ++i) {
    TestScene scene = make_scene(rng, 1, 30.0);
    const auto e = geo::essential_from_pose(scene.pose);
    const geo::NormalizedPoint p_t(rng.uniform(-1, 1), rng.uniform(-1, 1), 1.0);
    const geo::NormalizedPoint p_r(rng.uniform(-1, 1), rng.uniform(-1, 1), 1.0);
    const auto d = geo::epipolar_distance(p_t, p_r, e);
    if (d.degenerate) continue;
    CHECK(d.value ==
          doctest::Approx(line_distance_oracle(p_t, p_r, e.m)).epsilon(1e-12));
  }
}

TEST_CASE("epipolar distance flags a point at the epipole") {
  // E = [t]x with t = (0,0,1): the line of p_t = origin has zero normal.
  EssentialMatrix e;
  e.m = geo::skew({0.0, 0.0, 1.0});
  const auto d = geo::epipolar_distance({0.0, 0.0, 1.0}, {0.3, 0.4, 1.0}, e);
  CHECK(d.degenerate);
  CHECK(d.value == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("symmetric epipolar distance is symmetric under the swap") {
  Rng rng(47);
  TestScene scene = make_scene(rng, 1);
  const auto e = geo::essential_from_pose(scene.pose);
  EssentialMatrix et;
  et.m = e.m.transpose();
  for (int i = 0; i < 50; ++i) {
    const geo::NormalizedPoint p_t(rng.uniform(-1, 1), rng.uniform(-1, 1), 1.0);
    const geo::NormalizedPoint p_r(rng.uniform(-1, 1), rng.uniform(-1, 1), 1.0);
    const auto fwd = geo::symmetric_epipolar(p_t, p_r, e);
    const auto swapped = geo::symmetric_epipolar(p_r, p_t, et);
    CHECK(fwd.value == doctest::Approx(swapped.value).epsilon(1e-14));
    // Compositional re-check against the two directed distances.
    const double direct = geo::epipolar_distance(p_t, p_r, e).value +
                          geo::epipolar_distance(p_r, p_t, et).value;
    CHECK(fwd.value == doctest::Approx(direct).epsilon(1e-15));
  }
}

TEST_CASE("homography warp identity and translation cases") {
  Homography h;
  const Vector2d x(12.5, -3.25);
  CHECK((*geo::warp_point(h, x) - x).norm() == 0.0);

  h.m(0, 2) = 4.0;
  h.m(1, 2) = -2.0;
  const auto w = geo::warp_point(h, x);
  CHECK((*w - Vector2d(16.5, -5.25)).norm() <= 1e-15);
}

TEST_CASE("warp_point rejects points with vanishing homogeneous depth") {
  Homography h;
  h.m(2, 0) = -1.0;  // depth = 1 - x
  CHECK(!geo::warp_point(h, {1.0, 5.0}).has_value());
}

TEST_CASE("random homographies round trip to 1e-9 over 1000 points") {
  Rng rng(53);
  geo::HomographyConfig config;
  config.width = 256;
  config.height = 256;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Homography h = geo::random_homography(config, rng);
    const Homography hinv = h.inverse();
    for (int j = 0; j < 50; ++j) {
      const Vector2d x(rng.uniform(0, 255), rng.uniform(0, 255));
      const auto y = geo::warp_point(h, x);
      REQUIRE(y.has_value());
      const auto back = geo::warp_point(hinv, *y);
      REQUIRE(back.has_value());
      worst = std::max(worst, (*back - x).norm());
    }
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("random homographies keep the configured overlap") {
  Rng rng(59);
  geo::HomographyConfig config;
  config.min_overlap = 0.6;
  for (int i = 0; i < 10; ++i) {
    const Homography h = geo::random_homography(config, rng);
    CHECK(geo::homography_overlap(h, config.width, config.height) >= 0.6);
  }
}

TEST_CASE("eight point recovers the essential matrix from noise-free matches") {
  Rng rng(61);
  TestScene scene = make_scene(rng, 20);
  const auto truth = geo::essential_from_pose(scene.pose);
  const auto est = geo::eight_point(scene.matches);
  CHECK(frobenius_gap(est, truth) <= 1e-8);
}

TEST_CASE("eight point is invariant to duplicating matches at half weight") {
  Rng rng(67);
  TestScene scene = make_scene(rng, 20);
  const auto base = geo::eight_point(scene.matches);

  std::vector<Match> doubled;
  std::vector<double> half;
  for (const Match& m : scene.matches) {
    doubled.push_back(m);
    doubled.push_back(m);
    half.push_back(0.5);
    half.push_back(0.5);
  }
  const auto dup = geo::eight_point(doubled, half);
  CHECK(frobenius_gap(dup, base) <= 1e-12);
}

TEST_CASE("eight point is invariant to a global weight rescale") {
  Rng rng(71);
  TestScene scene = make_scene(rng, 25);
  std::vector<double> weights;
  for (int i = 0; i < 25; ++i) weights.push_back(rng.uniform(0.2, 2.0));
  std::vector<double> scaled = weights;
  for (double& w : scaled) w *= 37.5;
  const auto a = geo::eight_point(scene.matches, weights);
  const auto b = geo::eight_point(scene.matches, scaled);
  CHECK(frobenius_gap(a, b) <= 1e-12);
}

TEST_CASE("zero-weight outliers are exactly equivalent to removal") {
  Rng rng(73);
  TestScene scene = make_scene(rng, 20);
  std::vector<Match> with_outliers = scene.matches;
  std::vector<double> weights(20, 1.0);
  for (int i = 0; i < 5; ++i) {
    with_outliers.push_back({geo::NormalizedPoint(rng.uniform(-1, 1),
                                                  rng.uniform(-1, 1), 1.0),
                             geo::NormalizedPoint(rng.uniform(-1, 1),
                                                  rng.uniform(-1, 1), 1.0)});
    weights.push_back(0.0);
  }
  const auto masked = geo::eight_point(with_outliers, weights);
  const auto clean = geo::eight_point(scene.matches);
  CHECK(frobenius_gap(masked, clean) == 0.0);  // identical solve by construction
}

TEST_CASE("eight point rejects undersized and degenerate inputs") {
  Rng rng(79);
  TestScene scene = make_scene(rng, 7);
  CHECK_THROWS_AS(geo::eight_point(scene.matches), std::invalid_argument);

  // Eight copies of one correspondence: rank collapses far below 8.
  std::vector<Match> degenerate(8, scene.matches[0]);
  CHECK_THROWS_WITH_AS(geo::eight_point(degenerate),
                       doctest::Contains("rank-deficient"),
                       geo::EstimationError);
}

TEST_CASE("ransac on a clean scene marks every match as an inlier") {
  Rng rng(83);
  TestScene scene = make_scene(rng, 200);
  Rng ransac_rng(7);
  const auto result = geo::ransac_essential(scene.px_t, scene.px_r, scene.k_t,
                                            scene.k_r, {}, ransac_rng);
  REQUIRE(result.has_value());
  CHECK(result->inlier_count == 200);
  const auto truth = geo::essential_from_pose(scene.pose);
  CHECK(frobenius_gap(result->e, truth) <= 1e-6);
}

TEST_CASE("ransac reports failure for fewer than eight matches") {
  Rng rng(89);
  TestScene scene = make_scene(rng, 7);
  Rng ransac_rng(1);
  CHECK(!geo::ransac_essential(scene.px_t, scene.px_r, scene.k_t, scene.k_r,
                               {}, ransac_rng)
             .has_value());
}

TEST_CASE("ransac is reproducible for a fixed seed") {
  Rng rng(97);
  TestScene scene = make_scene(rng, 100);
  // Corrupt 30 matches.
  for (int i = 0; i < 30; ++i) {
    scene.px_r[i * 3] += Vector2d(rng.uniform(20, 80), rng.uniform(20, 80));
  }
  auto run = [&](std::uint64_t seed) {
    Rng r(seed);
    return geo::ransac_essential(scene.px_t, scene.px_r, scene.k_t, scene.k_r,
                                 {}, r);
  };
  const auto a = run(123);
  const auto b = run(123);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  CHECK(a->inliers == b->inliers);
  CHECK((a->e.m - b->e.m).norm() == 0.0);
  CHECK(a->iterations == b->iterations);
}

TEST_CASE("decompose_essential recovers the pose from a synthetic scene") {
  Rng rng(101);
  for (int i = 0; i < 10; ++i) {
    TestScene scene = make_scene(rng, 30);
    const auto e = geo::essential_from_pose(scene.pose);
    const Pose recovered = geo::decompose_essential(e, scene.matches);
    const auto err = geo::pose_error(recovered, scene.pose);
    CHECK(err.rotation_deg <= 1e-6);
    CHECK(err.translation_deg <= 1e-6);
  }
}

TEST_CASE("decompose_essential is invariant to the sign of E") {
  Rng rng(103);
  TestScene scene = make_scene(rng, 30);
  const auto e = geo::essential_from_pose(scene.pose);
  EssentialMatrix neg;
  neg.m = -e.m;
  const Pose a = geo::decompose_essential(e, scene.matches);
  const Pose b = geo::decompose_essential(neg, scene.matches);
  CHECK((a.rotation - b.rotation).norm() <= 1e-12);
  CHECK((a.translation - b.translation).norm() <= 1e-12);
}

TEST_CASE("decompose_essential picks the correct sideways translation sign") {
  Rng rng(107);
  // R = I, t = +x: reference camera displaced along -x in target coordinates.
  const Pose pose = Pose::make(Matrix3d::Identity(), {0.5, 0.0, 0.0});
  std::vector<Match> matches;
  for (int i = 0; i < 20; ++i) {
    const Vector3d x(rng.uniform(-1, 1), rng.uniform(-1, 1),
                     rng.uniform(3, 6));
    const Vector3d xr = x + pose.translation;
    matches.push_back({{x.x() / x.z(), x.y() / x.z(), 1.0},
                       {xr.x() / xr.z(), xr.y() / xr.z(), 1.0}});
  }
  const auto e = geo::essential_from_pose(pose);
  const Pose rec = geo::decompose_essential(e, matches);
  CHECK((rec.translation - Vector3d(1.0, 0.0, 0.0)).norm() <= 1e-9);
}

TEST_CASE("pose_error is zero for identical poses") {
  Rng rng(109);
  const Pose pose = Pose::make(random_rotation(rng, 30.0), {0.1, 0.2, 0.9});
  const auto err = geo::pose_error(pose, pose);
  CHECK(err.rotation_deg <= 1e-12);
  CHECK(err.translation_deg <= 1e-12);
}

TEST_CASE("pose_error reports a constructed five degree rotation") {
  Rng rng(113);
  for (int i = 0; i < 10; ++i) {
    Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    const Pose truth = Pose::make(random_rotation(rng, 30.0), {0.0, 0.0, 1.0});
    const Matrix3d bump = Eigen::AngleAxisd(5.0 * kDeg, axis).toRotationMatrix();
    const Pose est = Pose::make(bump * truth.rotation, truth.translation);
    const auto err = geo::pose_error(est, truth);
    CHECK(std::fabs(err.rotation_deg - 5.0) <= 1e-9);
    CHECK(err.translation_deg <= 1e-9);
  }
}

TEST_CASE("pose_error matches a quaternion-based angle computation") {
  Rng rng(127);
  for (int i = 0; i < 100; ++i) {
    const Pose a = Pose::make(random_rotation(rng, 179.0),
                              Vector3d(rng.normal(), rng.normal(),
                                       rng.normal()).normalized());
    const Pose b = Pose::make(random_rotation(rng, 179.0),
                              Vector3d(rng.normal(), rng.normal(),
                                       rng.normal()).normalized());
    const auto err = geo::pose_error(a, b);
    const Eigen::Quaterniond qa(a.rotation), qb(b.rotation);
    const double oracle_deg = qa.angularDistance(qb) / kDeg;
    CHECK(std::fabs(err.rotation_deg - oracle_deg) <= 1e-9);
  }
}

TEST_CASE("essential then decompose is the identity on pose direction") {
  Rng rng(131);
  for (int i = 0; i < 10; ++i) {
    TestScene scene = make_scene(rng, 15, 35.0);
    const Pose rec = geo::decompose_essential(
        geo::essential_from_pose(scene.pose), scene.matches);
    const auto err = geo::pose_error(rec, scene.pose);
    CHECK(err.rotation_deg <= 1e-6);
    CHECK(err.translation_deg <= 1e-6);
  }
}
