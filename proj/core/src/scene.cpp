#include <Eigen/Geometry>
#include <cmath>

#include "c2f/data.hpp"

namespace c2f::data {

namespace {

using Eigen::Vector2d;
using Eigen::Vector3d;

constexpr double kPi = 3.14159265358979323846;

struct Plane {
  Vector3d center;  // target-camera frame (the world frame of the scene)
  Vector3d u_axis, v_axis, normal;
  double half_u = 1.0, half_v = 1.0;
  Image texture;
};

struct Hit {
  double depth = 0.0;  // camera z of the intersection
  double a = 0.0, b = 0.0;  // plane-local coordinates
  int plane = -1;
};

// Intersects the viewing ray of pixel (px,py) with every plane and keeps the
// nearest front-facing hit.  `rotation`/`translation` map world (target
// frame) to the rendering camera.
Hit trace(const std::vector<Plane>& planes, const geo::Intrinsics& k,
          const Eigen::Matrix3d& rotation, const Vector3d& translation,
          double px, double py) {
  const Vector3d dir_cam((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0);
  const Vector3d origin = -(rotation.transpose() * translation);
  const Vector3d dir = rotation.transpose() * dir_cam;
  Hit best;
  best.depth = 1e30;
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const Plane& pl = planes[i];
    const double denom = pl.normal.dot(dir);
    if (std::fabs(denom) < 1e-12) continue;
    const double lambda = pl.normal.dot(pl.center - origin) / denom;
    if (lambda <= 0.05) continue;  // behind or grazing the camera
    const Vector3d x = origin + lambda * dir;
    const double a = pl.u_axis.dot(x - pl.center);
    const double b = pl.v_axis.dot(x - pl.center);
    if (std::fabs(a) > pl.half_u || std::fabs(b) > pl.half_v) continue;
    if (lambda < best.depth) {
      best.depth = lambda;
      best.a = a;
      best.b = b;
      best.plane = static_cast<int>(i);
    }
  }
  return best;
}

Image render(const std::vector<Plane>& planes, const geo::Intrinsics& k,
             const Eigen::Matrix3d& rotation, const Vector3d& translation,
             int size) {
  Image img = Image::create(size, size, 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Hit hit = trace(planes, k, rotation, translation, x, y);
      if (hit.plane < 0) continue;  // black background
      const Plane& pl = planes[hit.plane];
      const double tx =
          (hit.a / pl.half_u * 0.5 + 0.5) * (pl.texture.width - 1);
      const double ty =
          (hit.b / pl.half_v * 0.5 + 0.5) * (pl.texture.height - 1);
      img.at(x, y) = static_cast<std::uint8_t>(
          std::lround(sample_bilinear(pl.texture, tx, ty)));
    }
  }
  return img;
}

Vector3d random_unit(Rng& rng) {
  for (;;) {
    const Vector3d v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-6) return v / n;
  }
}

}  // namespace

ScenePair gen_scene_pair(const SceneConfig& config, Rng& rng) {
  check(config.image_size >= 64 && config.image_size % 32 == 0,
        "gen_scene_pair: image size must be a multiple of 32 and >= 64");
  check(config.planes >= 2, "gen_scene_pair: needs at least 2 planes for "
                            "non-degenerate two-view geometry");
  const int size = config.image_size;
  geo::Intrinsics k;
  k.fx = k.fy = static_cast<double>(size);
  k.cx = k.cy = 0.5 * (size - 1);
  const double view_half = 0.5;  // tan of the half field of view

  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    // Backdrop plane spanning the whole frustum plus parallax margin, then
    // tilted foreground planes at shallower depths.
    std::vector<Plane> planes;
    const double z_far = config.max_depth;
    {
      Plane back;
      back.center = Vector3d(0.0, 0.0, z_far);
      Vector3d n = Vector3d(rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15),
                            -1.0).normalized();
      back.normal = n;
      back.u_axis = n.cross(Vector3d::UnitY()).normalized();
      back.v_axis = n.cross(back.u_axis).normalized();
      back.half_u = back.half_v = z_far * view_half * 3.0;
      back.texture = gen_texture(rng.raw(), 256);
      planes.push_back(std::move(back));
    }
    for (int p = 1; p < config.planes; ++p) {
      Plane pl;
      const double z = rng.uniform(config.min_depth, 0.8 * config.max_depth);
      pl.center = Vector3d(rng.uniform(-0.6, 0.6) * z * view_half,
                           rng.uniform(-0.6, 0.6) * z * view_half, z);
      Vector3d n = Vector3d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                            -1.0).normalized();
      pl.normal = n;
      pl.u_axis = n.cross(random_unit(rng)).normalized();
      pl.v_axis = n.cross(pl.u_axis).normalized();
      pl.half_u = rng.uniform(0.2, 0.5) * z * view_half;
      pl.half_v = rng.uniform(0.2, 0.5) * z * view_half;
      pl.texture = gen_texture(rng.raw(), 128);
      planes.push_back(std::move(pl));
    }

    // Orbit the reference camera about the scene midpoint so the relative
    // rotation magnitude lands exactly in the configured band.
    const Vector3d mid(0.0, 0.0, 0.5 * (config.min_depth + config.max_depth));
    const double angle =
        rng.uniform(config.min_rotation_deg, config.max_rotation_deg) * kPi /
        180.0;
    const Eigen::Matrix3d r =
        Eigen::AngleAxisd(angle, random_unit(rng)).toRotationMatrix();
    const double view_dist = mid.norm() * rng.uniform(0.9, 1.1);
    Vector3d center = mid - view_dist * (r.transpose() * Vector3d::UnitZ());
    center.x() += rng.uniform(-0.18, 0.18) * mid.z();
    center.y() += rng.uniform(-0.18, 0.18) * mid.z();
    center.z() += rng.uniform(-0.05, 0.05) * mid.z();
    const Vector3d t = -(r * center);
    if (t.norm() < config.min_baseline) continue;

    ScenePair pair;
    pair.k_t = pair.k_r = k;
    pair.relative_pose = geo::Pose::make(r, t);

    // Exact correspondences (with occlusion checks in both views).
    const Eigen::Matrix3d identity = Eigen::Matrix3d::Identity();
    const Vector3d zero = Vector3d::Zero();
    int misses = 0;
    while (static_cast<int>(pair.oracle.size()) < config.oracle_points &&
           misses < config.oracle_points * 30) {
      const int pi = static_cast<int>(rng.uniform_int(planes.size()));
      const Plane& pl = planes[pi];
      const double a = rng.uniform(-0.95, 0.95) * pl.half_u;
      const double b = rng.uniform(-0.95, 0.95) * pl.half_v;
      const Vector3d x = pl.center + a * pl.u_axis + b * pl.v_axis;
      const Vector3d x_ref = r * x + t;
      if (x.z() < 0.2 || x_ref.z() < 0.2) {
        ++misses;
        continue;
      }
      const Vector2d px_t(x.x() / x.z() * k.fx + k.cx,
                          x.y() / x.z() * k.fy + k.cy);
      const Vector2d px_r(x_ref.x() / x_ref.z() * k.fx + k.cx,
                          x_ref.y() / x_ref.z() * k.fy + k.cy);
      const double margin = 4.0;
      if (px_t.x() < margin || px_t.x() > size - 1 - margin ||
          px_t.y() < margin || px_t.y() > size - 1 - margin ||
          px_r.x() < margin || px_r.x() > size - 1 - margin ||
          px_r.y() < margin || px_r.y() > size - 1 - margin) {
        ++misses;
        continue;
      }
      // Visible in both views: the nearest surface along each ray is this one.
      const Hit h_t = trace(planes, k, identity, zero, px_t.x(), px_t.y());
      const Hit h_r = trace(planes, k, r, t, px_r.x(), px_r.y());
      if (h_t.plane != pi || h_r.plane != pi ||
          std::fabs(h_t.depth - x.z()) > 1e-6 * x.z() ||
          std::fabs(h_r.depth - x_ref.z()) > 1e-6 * x_ref.z()) {
        ++misses;
        continue;
      }
      pair.oracle.push_back({px_t, px_r, x});
    }
    if (static_cast<int>(pair.oracle.size()) < config.oracle_points) continue;

    pair.image_t = render(planes, k, identity, zero, size);
    pair.image_r = render(planes, k, r, t, size);
    return pair;
  }
  throw geo::EstimationError(
      "gen_scene_pair: no sample satisfied the visibility constraints; "
      "loosen the configured ranges");
}

}  // namespace c2f::data
