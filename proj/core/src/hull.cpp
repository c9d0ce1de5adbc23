#include <algorithm>
#include <cmath>

#include "c2f/data.hpp"

namespace c2f::data {

namespace {

// Exact predicates on 1/256-pixel integer coordinates.
constexpr double kScale = 256.0;

struct IPoint {
  long long x, y;
  bool operator<(const IPoint& o) const {
    return x != o.x ? x < o.x : y < o.y;
  }
  bool operator==(const IPoint& o) const { return x == o.x && y == o.y; }
};

IPoint quantize(const Eigen::Vector2d& p) {
  return {static_cast<long long>(std::llround(p.x() * kScale)),
          static_cast<long long>(std::llround(p.y() * kScale))};
}

long long cross(const IPoint& o, const IPoint& a, const IPoint& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

std::vector<IPoint> hull_int(std::vector<IPoint> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const int n = static_cast<int>(pts.size());
  if (n <= 2) return pts;
  std::vector<IPoint> h(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {  // lower hull
    while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  for (int i = n - 2, lower = k + 1; i >= 0; --i) {  // upper hull
    while (k >= lower && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);  // last point repeats the first
  return h;
}

bool on_segment(const IPoint& a, const IPoint& b, const IPoint& p) {
  if (cross(a, b, p) != 0) return false;
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

bool in_hull_int(const std::vector<IPoint>& hull, const IPoint& p) {
  if (hull.empty()) return false;
  if (hull.size() == 1) return hull[0] == p;
  if (hull.size() == 2) return on_segment(hull[0], hull[1], p);
  // CCW polygon: inside (or on the boundary) iff no edge has p strictly to
  // its right.
  const int n = static_cast<int>(hull.size());
  for (int i = 0; i < n; ++i) {
    if (cross(hull[i], hull[(i + 1) % n], p) < 0) return false;
  }
  return true;
}

}  // namespace

std::vector<Eigen::Vector2d> convex_hull(
    const std::vector<Eigen::Vector2d>& points) {
  std::vector<IPoint> pts;
  pts.reserve(points.size());
  for (const auto& p : points) pts.push_back(quantize(p));
  const auto h = hull_int(std::move(pts));
  std::vector<Eigen::Vector2d> out;
  out.reserve(h.size());
  for (const IPoint& p : h) out.emplace_back(p.x / kScale, p.y / kScale);
  return out;
}

bool point_in_hull(const std::vector<Eigen::Vector2d>& hull,
                   const Eigen::Vector2d& p) {
  std::vector<IPoint> h;
  h.reserve(hull.size());
  for (const auto& q : hull) h.push_back(quantize(q));
  return in_hull_int(h, quantize(p));
}

CandidateSet select_candidates(const std::vector<ScoredMatch>& matches,
                               const geo::EssentialMatrix& e,
                               const geo::Intrinsics& k_t,
                               const geo::Intrinsics& k_r,
                               const SelectConfig& config) {
  CandidateSet set;
  std::vector<Eigen::Vector2d> seed_points;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const auto& m = matches[i].match;
    if (m.clamped) continue;  // border pile-up stays out of the seeding
    const auto d = geo::symmetric_epipolar(geo::normalize(m.x_t, k_t),
                                           geo::normalize(m.x_r, k_r), e);
    if (d.degenerate || d.value > config.epipolar_threshold) continue;
    if (matches[i].cycle_px > config.cycle_threshold) continue;
    set.seeds.push_back(static_cast<int>(i));
    seed_points.push_back(m.x_t);
  }
  if (set.seeds.size() < 3) return CandidateSet{};

  set.hull = convex_hull(seed_points);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (point_in_hull(set.hull, matches[i].match.x_t)) {
      set.members.push_back(static_cast<int>(i));
    }
  }
  return set;
}

}  // namespace c2f::data
