#pragma once

#include <optional>
#include <string>
#include <vector>

#include "c2f/geometry.hpp"
#include "c2f/image.hpp"
#include "c2f/network.hpp"
#include "c2f/rng.hpp"

namespace c2f::data {

// ---- procedural textures -----------------------------------------------------

// Deterministic multi-octave value noise with geometric primitives overlaid;
// a few flat-filled regions are left intentionally textureless so the
// detector sees both matchable and unmatchable appearance.
Image gen_texture(std::uint64_t seed, int size);

// ---- homography warp pairs ---------------------------------------------------

struct WarpPair {
  Image image_t;
  Image image_r;  // image_t resampled under the homography
  geo::Homography homography;  // maps target pixels to reference pixels
  std::vector<std::uint8_t> valid_mask;  // per target pixel: warp stays in view

  bool in_mask(int x, int y) const {
    return valid_mask[static_cast<std::size_t>(y) * image_t.width + x] != 0;
  }
};

struct WarpConfig {
  geo::HomographyConfig homography;
  // identity = true degenerates every range to zero (I_r equals I_t).
  bool identity = false;
};

WarpPair gen_warp_pair(const Image& image, const WarpConfig& config, Rng& rng);

// Uniformly random keypoints whose mask bit is set.
std::vector<Eigen::Vector2d> random_mask_points(const WarpPair& pair, int count,
                                                Rng& rng);

// ---- synthetic two-view scenes -----------------------------------------------

struct OracleMatch {
  Eigen::Vector2d x_t;  // pixel projections, noise-free
  Eigen::Vector2d x_r;
  Eigen::Vector3d point;  // 3-D position in the target camera frame
};

struct ScenePair {
  Image image_t;
  Image image_r;
  geo::Intrinsics k_t, k_r;
  geo::Pose relative_pose;                // target -> reference
  std::vector<OracleMatch> oracle;        // test oracle, hidden from training
};

struct SceneConfig {
  int image_size = 256;
  int planes = 4;
  double min_rotation_deg = 0.0;
  double max_rotation_deg = 15.0;
  double min_depth = 4.0;
  double max_depth = 8.0;
  double min_baseline = 0.4;   // relative to the scene distance
  int oracle_points = 64;
  int max_attempts = 50;
};

ScenePair gen_scene_pair(const SceneConfig& config, Rng& rng);

// ---- convex hull / weak-stage candidate selection ------------------------------

// Andrew monotone chain on integer-scaled coordinates (1/256 px), CCW
// orientation, collinear inputs collapse to a segment or point.
std::vector<Eigen::Vector2d> convex_hull(
    const std::vector<Eigen::Vector2d>& points);

// Inclusive of the boundary; degenerate hulls admit only on-segment points.
bool point_in_hull(const std::vector<Eigen::Vector2d>& hull,
                   const Eigen::Vector2d& p);

struct ScoredMatch {
  net::MatchResult match;
  double cycle_px = 0.0;  // reverse-matching displacement at full resolution
};

struct SelectConfig {
  double epipolar_threshold = 1e-2;  // normalized units
  double cycle_threshold = 2.0;      // pixels
};

struct CandidateSet {
  std::vector<int> seeds;              // indices into the scored matches
  std::vector<Eigen::Vector2d> hull;   // convex hull of seed target keypoints
  std::vector<int> members;            // keypoints inside the hull (seeds included)

  bool empty() const { return seeds.empty(); }
};

// Seeds: matches below both residual thresholds (clamped matches excluded);
// members: every keypoint inside the seed hull.  Fewer than 3 seeds yields an
// empty set and the pair is skipped for this step.
CandidateSet select_candidates(const std::vector<ScoredMatch>& matches,
                               const geo::EssentialMatrix& e,
                               const geo::Intrinsics& k_t,
                               const geo::Intrinsics& k_r,
                               const SelectConfig& config);

// ---- dataset manifest ----------------------------------------------------------

struct ManifestEntry {
  std::string pair_id;
  std::string kind;  // "warp" | "scene" | "real"
  std::string image_t;  // paths relative to the manifest location
  std::string image_r;
  std::optional<geo::Intrinsics> k_t, k_r;
  std::optional<geo::Pose> pose;
  std::optional<geo::Homography> homography;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::string base_dir;  // directory of the manifest file
};

// One JSON record per line; rotations are re-validated against the pose
// invariants and failures name the offending line.
Manifest read_manifest(const std::string& path, bool check_files = true);
void write_manifest(const Manifest& manifest, const std::string& path);

std::string join_path(const std::string& dir, const std::string& file);

}  // namespace c2f::data
