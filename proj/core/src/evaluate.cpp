#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "c2f/ops.hpp"
#include "c2f/pipeline.hpp"
#include "pipeline_io.hpp"

namespace c2f::pipeline {

namespace {

using internal::LoadedPair;

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

double rotation_magnitude_deg(const geo::Pose& pose) {
  return Eigen::AngleAxisd(pose.rotation).angle() * kRadToDeg;
}

std::string rotation_bin(double deg) {
  if (deg < 15.0) return "easy";
  if (deg < 30.0) return "moderate";
  return "hard";
}

struct PairForward {
  std::vector<net::Keypoint> keypoints;
  std::vector<net::MatchResult> results;
};

PairForward match_all(const net::Model& model, const LoadedPair& pair,
                      const EvalConfig& config) {
  NoGradGuard no_grad;
  PairForward out;
  Tensor img_t = pair.tensor_t();
  Tensor img_r = pair.tensor_r();
  const auto pyr_t = model.extract_features(img_t);
  const auto pyr_r = model.extract_features(img_r);
  Tensor conf_map = model.detect(img_t);
  out.keypoints = net::select_keypoints(conf_map, config.detect_threshold,
                                        config.nms_radius,
                                        config.max_keypoints);
  out.results.reserve(out.keypoints.size());
  for (const auto& kp : out.keypoints) {
    auto result = model.match(kp.x, pyr_t, pyr_r, config.levels).to_result();
    result.confidence = kp.confidence;
    out.results.push_back(result);
  }
  return out;
}

double percent(int numerator, int denominator) {
  return denominator > 0 ? 100.0 * numerator / denominator : 0.0;
}

}  // namespace

EvalTable evaluate_with_matcher(const MatcherFn& matcher,
                                const data::Manifest& manifest,
                                const EvalConfig& config) {
  struct Bin {
    int count = 0, rot_ok = 0, trans_ok = 0;
  };
  std::map<std::string, Bin> bins;
  bins["easy"];
  bins["moderate"];
  bins["hard"];

  EvalTable table;
  table.lineage_tag = config.lineage_tag;
  Rng rng(config.seed);

  const auto scene_indices = internal::entries_of_kind(manifest, "scene");
  for (std::size_t i = 0; i < scene_indices.size(); ++i) {
    const auto& entry = manifest.entries[scene_indices[i]];
    const geo::Pose& pose = entry.pose.value();
    const geo::Intrinsics k_t = entry.k_t.value();
    const geo::Intrinsics k_r = entry.k_r.value();
    Bin& bin = bins[rotation_bin(rotation_magnitude_deg(pose))];
    ++bin.count;

    std::vector<Eigen::Vector2d> x_t, x_r;
    matcher(entry, manifest.base_dir, x_t, x_r);
    if (x_t.size() < 8) {
      ++table.estimation_failures;
      continue;  // counted, scored as inaccurate
    }
    Rng pair_rng = rng.derive(i);
    const auto ransac =
        geo::ransac_essential(x_t, x_r, k_t, k_r, config.ransac, pair_rng);
    if (!ransac) {
      ++table.estimation_failures;
      continue;
    }
    std::vector<geo::Match> inliers;
    for (std::size_t m = 0; m < x_t.size(); ++m) {
      if (ransac->inliers[m]) {
        inliers.push_back(
            {geo::normalize(x_t[m], k_t), geo::normalize(x_r[m], k_r)});
      }
    }
    geo::Pose estimated;
    try {
      estimated = geo::decompose_essential(ransac->e, inliers);
    } catch (const geo::EstimationError&) {
      ++table.estimation_failures;
      continue;
    }
    const auto err = geo::pose_error(estimated, pose);
    if (err.rotation_deg < config.threshold_deg) ++bin.rot_ok;
    if (err.translation_deg < config.threshold_deg) ++bin.trans_ok;
  }

  for (const std::string name : {"easy", "moderate", "hard"}) {
    const Bin& bin = bins[name];
    EvalRow row;
    row.bin = name;
    row.pair_count = bin.count;
    row.threshold_deg = config.threshold_deg;
    row.rotation_acc_pct = percent(bin.rot_ok, bin.count);
    row.translation_acc_pct = percent(bin.trans_ok, bin.count);
    table.rows.push_back(row);
  }
  return table;
}

EvalTable evaluate(const net::Model& model, const data::Manifest& manifest,
                   const EvalConfig& config) {
  const MatcherFn matcher = [&](const data::ManifestEntry& entry,
                                const std::string& base_dir,
                                std::vector<Eigen::Vector2d>& x_t,
                                std::vector<Eigen::Vector2d>& x_r) {
    const LoadedPair pair = internal::load_pair(entry, base_dir);
    const PairForward fwd = match_all(model, pair, config);
    for (const auto& r : fwd.results) {
      x_t.push_back(r.x_t);
      x_r.push_back(r.x_r);
    }
  };
  return evaluate_with_matcher(matcher, manifest, config);
}

std::string format_eval_table(const EvalTable& table) {
  std::ostringstream os;
  os << "lineage: " << (table.lineage_tag.empty() ? "-" : table.lineage_tag)
     << "  (accuracy % under threshold, rotation / translation)\n";
  os << "bin        pairs  thresh   rot%    trans%\n";
  for (const auto& row : table.rows) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-9s %6d %6.1f %7.1f %9.1f\n",
                  row.bin.c_str(), row.pair_count, row.threshold_deg,
                  row.rotation_acc_pct, row.translation_acc_pct);
    os << line;
  }
  os << "estimation failures: " << table.estimation_failures << "\n";
  return os.str();
}

void write_eval_table(const EvalTable& table, const std::string& path) {
  nlohmann::ordered_json j;
  j["lineage"] = table.lineage_tag;
  j["estimation_failures"] = table.estimation_failures;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : table.rows) {
    j["rows"].push_back({{"bin", row.bin},
                         {"pair_count", row.pair_count},
                         {"threshold_deg", row.threshold_deg},
                         {"rotation_acc_pct", row.rotation_acc_pct},
                         {"translation_acc_pct", row.translation_acc_pct}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_eval_table: cannot open " + path);
  out << j.dump(2) << "\n";
}

LevelEndpointStats warp_endpoint_stats(const net::Model& model,
                                       const data::Manifest& manifest,
                                       const EvalConfig& config) {
  LevelEndpointStats stats;
  std::array<double, 3> total{0.0, 0.0, 0.0};
  for (int idx : internal::entries_of_kind(manifest, "warp")) {
    const LoadedPair pair =
        internal::load_pair(manifest.entries[idx], manifest.base_dir);
    const PairForward fwd = match_all(model, pair, config);
    for (const auto& r : fwd.results) {
      const int x = static_cast<int>(r.x_t.x());
      const int y = static_cast<int>(r.x_t.y());
      if (!pair.in_mask(x, y)) continue;
      const auto gt = geo::warp_point(*pair.homography, r.x_t);
      if (!gt) continue;
      // One full match yields all three level estimates.
      const Eigen::Vector2d coarse = r.comp_coarse;
      const Eigen::Vector2d median = coarse + r.comp_median;
      const Eigen::Vector2d fine = r.x_r;
      total[0] += (coarse - *gt).norm();
      total[1] += (median - *gt).norm();
      total[2] += (fine - *gt).norm();
      ++stats.keypoints;
    }
  }
  if (stats.keypoints > 0) {
    for (int l = 0; l < 3; ++l) stats.mean_px[l] = total[l] / stats.keypoints;
  }
  return stats;
}

LevelEpipolarStats scene_epipolar_stats(const net::Model& model,
                                        const data::Manifest& manifest,
                                        const EvalConfig& config) {
  LevelEpipolarStats stats;
  std::array<std::vector<double>, 3> residuals;
  for (int idx : internal::entries_of_kind(manifest, "scene")) {
    const LoadedPair pair =
        internal::load_pair(manifest.entries[idx], manifest.base_dir);
    const auto essential = geo::essential_from_pose(*pair.pose);
    const PairForward fwd = match_all(model, pair, config);
    for (const auto& r : fwd.results) {
      const auto p_t = geo::normalize(r.x_t, pair.k_t);
      const Eigen::Vector2d coarse = r.comp_coarse;
      const Eigen::Vector2d median = coarse + r.comp_median;
      const Eigen::Vector2d fine = r.x_r;
      const Eigen::Vector2d level_est[3] = {coarse, median, fine};
      for (int l = 0; l < 3; ++l) {
        residuals[l].push_back(
            geo::symmetric_epipolar(p_t, geo::normalize(level_est[l], pair.k_r),
                                    essential)
                .value);
      }
    }
  }
  stats.keypoints = static_cast<int>(residuals[0].size());
  for (int l = 0; l < 3; ++l) {
    auto& r = residuals[l];
    if (r.empty()) continue;
    std::sort(r.begin(), r.end());
    stats.median_sym_epipolar[l] = r[r.size() / 2];
  }
  return stats;
}

double detector_auc(const net::Model& model, const data::Manifest& manifest,
                    const EvalConfig& config, double inlier_px,
                    int keypoints_per_pair, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<double, int>> samples;  // (confidence, label)
  NoGradGuard no_grad;
  for (int idx : internal::entries_of_kind(manifest, "warp")) {
    const LoadedPair pair =
        internal::load_pair(manifest.entries[idx], manifest.base_dir);
    Tensor img_t = pair.tensor_t();
    Tensor img_r = pair.tensor_r();
    const auto pyr_t = model.extract_features(img_t);
    const auto pyr_r = model.extract_features(img_r);
    Tensor conf_map = model.detect(img_t);
    const int w = pair.width;
    std::vector<std::size_t> in_mask;
    for (std::size_t i = 0; i < pair.mask.size(); ++i) {
      if (pair.mask[i]) in_mask.push_back(i);
    }
    if (in_mask.empty()) continue;
    for (int k = 0; k < keypoints_per_pair; ++k) {
      const std::size_t cell = in_mask[rng.uniform_int(in_mask.size())];
      const Eigen::Vector2d kp(static_cast<double>(cell % w),
                               static_cast<double>(cell / w));
      const auto gt = geo::warp_point(*pair.homography, kp);
      if (!gt) continue;
      const auto result = model.match(kp, pyr_t, pyr_r, config.levels)
                              .to_result();
      const int label = (result.x_r - *gt).norm() <= inlier_px ? 1 : 0;
      samples.emplace_back(conf_map.at(cell), label);
    }
  }

  // Mann-Whitney AUC with average ranks for ties.
  std::sort(samples.begin(), samples.end());
  const int n = static_cast<int>(samples.size());
  int positives = 0;
  double rank_sum = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && samples[j].first == samples[i].first) ++j;
    const double avg_rank = 0.5 * (i + 1 + j);  // ranks are 1-based
    for (int k = i; k < j; ++k) {
      if (samples[k].second) {
        rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const int negatives = n - positives;
  check(positives > 0 && negatives > 0,
        "detector_auc: needs both inlier and outlier samples, got " +
            std::to_string(positives) + " / " + std::to_string(negatives));
  return (rank_sum - 0.5 * positives * (positives + 1)) /
         (static_cast<double>(positives) * negatives);
}

double cycle_fraction_under(const net::Model& model, const Image& image_t,
                            const Image& image_r, double threshold_px,
                            const EvalConfig& config) {
  NoGradGuard no_grad;
  Tensor img_t = image_to_tensor(image_t);
  Tensor img_r = image_to_tensor(image_r);
  const auto pyr_t = model.extract_features(img_t);
  const auto pyr_r = model.extract_features(img_r);
  Tensor conf_map = model.detect(img_t);
  const auto keypoints = net::select_keypoints(conf_map, config.detect_threshold,
                                               config.nms_radius,
                                               config.max_keypoints);
  if (keypoints.empty()) return 0.0;
  int under = 0;
  for (const auto& kp : keypoints) {
    const auto fwd = model.match(kp.x, pyr_t, pyr_r, config.levels);
    const auto rev = model.match_from(fwd.x_r, pyr_r, pyr_t, config.levels);
    const Eigen::Vector2d back(rev.x_r.at(0), rev.x_r.at(1));
    if ((back - kp.x).norm() < threshold_px) ++under;
  }
  return static_cast<double>(under) / keypoints.size();
}

PairMatches match_pair(const net::Model& model, const data::ManifestEntry& entry,
                       const std::string& base_dir, const EvalConfig& config) {
  const LoadedPair pair = internal::load_pair(entry, base_dir);
  PairMatches out;
  out.pair_id = entry.pair_id;
  out.matches = match_all(model, pair, config).results;
  return out;
}

void write_matches_jsonl(const PairMatches& matches, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_matches_jsonl: cannot open " + path);
  for (const auto& m : matches.matches) {
    nlohmann::ordered_json j;
    j["pair_id"] = matches.pair_id;
    j["x_t"] = {m.x_t.x(), m.x_t.y()};
    j["x_r"] = {m.x_r.x(), m.x_r.y()};
    j["x_r_c"] = {m.comp_coarse.x(), m.comp_coarse.y()};
    j["x_r_m"] = {m.comp_median.x(), m.comp_median.y()};
    j["x_r_f"] = {m.comp_fine.x(), m.comp_fine.y()};
    j["confidence"] = m.confidence;
    j["clamped"] = m.clamped;
    out << j.dump() << "\n";
  }
}

}  // namespace c2f::pipeline
