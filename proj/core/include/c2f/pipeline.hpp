#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "c2f/data.hpp"
#include "c2f/losses.hpp"
#include "c2f/network.hpp"

namespace c2f::pipeline {

// ---- optimizer -----------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::int64_t step = 0;
  int rejected_steps = 0;
};

// One adaptive-moment update over the parameter map (name order, hence
// deterministic).  Names in `frozen` are skipped entirely.  A non-finite
// gradient anywhere rejects the whole step and bumps rejected_steps.
bool optimize_step(std::map<std::string, Tensor>& params, AdamState& state,
                   const AdamConfig& config,
                   const std::set<std::string>& frozen = {});

// ---- checkpoints -----------------------------------------------------------------

struct Checkpoint {
  std::uint32_t version = 1;
  std::string lineage = "init";  // init | self | weak
  std::int64_t train_step = 0;
  std::string config_json;  // model + train configuration echo
  net::ModelConfig model_config;
  std::map<std::string, Tensor> params;
  AdamState adam;
  std::string rng_state;
};

// Versioned binary container; raw little-endian doubles make the round trip
// bitwise exact, rng and optimizer state included.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

net::Model model_from_checkpoint(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_model(const net::Model& model);

std::string model_config_to_json(const net::ModelConfig& config);
net::ModelConfig model_config_from_json(const std::string& json_text);

// ---- training --------------------------------------------------------------------

struct TrainConfig {
  std::string stage = "self";  // self | weak
  int steps = 500;
  int batch_pairs = 2;
  int keypoints_per_pair = 48;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  losses::RobustParams epipolar{1e-2, 5e-2};  // normalized units
  losses::RobustParams cycle{2.0, 8.0};       // full-resolution pixels
  double detect_threshold = 0.5;
  int nms_radius = 4;
  double inlier_px = 3.0;  // stage-1 confidence label rule
  int levels = 3;
  bool deterministic = false;  // zero the wall-time field in log records
};

struct TrainResult {
  Checkpoint checkpoint;
  int steps_run = 0;
  int skipped_pairs = 0;
  bool diverged = false;
};

// Stage 1: homography self-supervision over warp pairs; random keypoints,
// weighted matching loss against the exact warp, confidence labels from the
// inlier rule, composite L_m + lambda1 * L_c.  `init` resumes a run.
TrainResult train_self(const net::ModelConfig& model_config,
                       const TrainConfig& config, const data::Manifest& corpus,
                       std::ostream* log,
                       const std::optional<Checkpoint>& init = std::nullopt);

// Stage 2: detector frozen, NMS keypoint sampling, scene pairs supply the
// robust epipolar + cycle terms over hull-expanded candidates, warp pairs
// keep supplying the matching term; composite L_m + lambda3 (L_e + L_cy).
TrainResult train_weak(const net::ModelConfig& model_config,
                       const TrainConfig& config, const data::Manifest& corpus,
                       const Checkpoint& init, std::ostream* log);

// ---- evaluation --------------------------------------------------------------------

struct EvalConfig {
  double threshold_deg = 10.0;
  double detect_threshold = 0.5;
  int nms_radius = 4;
  int max_keypoints = 256;
  geo::RansacConfig ransac;
  std::uint64_t seed = 0;
  int levels = 3;
  std::string lineage_tag;  // which checkpoint lineage produced the table
};

struct EvalRow {
  std::string bin;  // easy | moderate | hard
  double rotation_acc_pct = 0.0;
  double translation_acc_pct = 0.0;
  int pair_count = 0;
  double threshold_deg = 0.0;
};

struct EvalTable {
  std::vector<EvalRow> rows;
  std::string lineage_tag;
  int estimation_failures = 0;  // counted as inaccurate, never dropped
};

// Detect, match, RANSAC, decompose and score every scene pair of the
// manifest, binned by ground-truth rotation magnitude.
EvalTable evaluate(const net::Model& model, const data::Manifest& manifest,
                   const EvalConfig& config);

// Same scoring harness with an injectable correspondence source (upper-bound
// and ablation studies).
using MatcherFn = std::function<void(
    const data::ManifestEntry& entry, const std::string& base_dir,
    std::vector<Eigen::Vector2d>& x_t, std::vector<Eigen::Vector2d>& x_r)>;
EvalTable evaluate_with_matcher(const MatcherFn& matcher,
                                const data::Manifest& manifest,
                                const EvalConfig& config);

std::string format_eval_table(const EvalTable& table);
void write_eval_table(const EvalTable& table, const std::string& path);

// ---- held-out statistics (trend and convergence checks) ----------------------------

struct LevelEndpointStats {
  std::array<double, 3> mean_px{0.0, 0.0, 0.0};  // levels 1..3
  int keypoints = 0;
};

// Mean endpoint error of detected keypoints on warp pairs, per match depth.
LevelEndpointStats warp_endpoint_stats(const net::Model& model,
                                       const data::Manifest& manifest,
                                       const EvalConfig& config);

struct LevelEpipolarStats {
  std::array<double, 3> median_sym_epipolar{0.0, 0.0, 0.0};
  int keypoints = 0;
};

// Median symmetric epipolar residual of matches on scene pairs, per depth.
LevelEpipolarStats scene_epipolar_stats(const net::Model& model,
                                        const data::Manifest& manifest,
                                        const EvalConfig& config);

// Detector quality: AUC of confidence against the inlier label on random
// keypoints of held-out warp pairs.
double detector_auc(const net::Model& model, const data::Manifest& manifest,
                    const EvalConfig& config, double inlier_px,
                    int keypoints_per_pair, std::uint64_t seed);

// Fraction of detected keypoints whose forward+reverse displacement stays
// under `threshold_px` when matching an image pair.
double cycle_fraction_under(const net::Model& model, const Image& image_t,
                            const Image& image_r, double threshold_px,
                            const EvalConfig& config);

// ---- per-pair matching and visualization --------------------------------------------

struct PairMatches {
  std::string pair_id;
  std::vector<net::MatchResult> matches;
};

PairMatches match_pair(const net::Model& model, const data::ManifestEntry& entry,
                       const std::string& base_dir, const EvalConfig& config);

// One JSON record per match: pair id, both endpoints, the per-level
// components and the detector confidence.
void write_matches_jsonl(const PairMatches& matches, const std::string& path);

// Side-by-side overlay with match lines.
void write_match_overlay(const Image& image_t, const Image& image_r,
                         const std::vector<net::MatchResult>& matches,
                         const std::string& path);

// Per-level similarity heatmaps for one keypoint, upscaled color rasters.
void write_similarity_heatmaps(const net::Model& model, const Image& image_t,
                               const Image& image_r,
                               const Eigen::Vector2d& keypoint,
                               const std::string& path_prefix);

}  // namespace c2f::pipeline
