#include <chrono>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "c2f/ops.hpp"
#include "c2f/pipeline.hpp"
#include "pipeline_io.hpp"

namespace c2f::pipeline {

namespace {

using internal::LoadedPair;
using internal::PairCache;

Tensor mean_of(const std::vector<Tensor>& terms) {
  Tensor total;
  for (const Tensor& t : terms) {
    total = total.defined() ? ops::add(total, t) : t;
  }
  return ops::scale(total, 1.0 / static_cast<double>(terms.size()));
}

std::string train_config_json(const net::ModelConfig& model_config,
                              const TrainConfig& config) {
  nlohmann::ordered_json j;
  j["model"] = nlohmann::json::parse(model_config_to_json(model_config));
  j["train"] = {{"stage", config.stage},
                {"steps", config.steps},
                {"batch_pairs", config.batch_pairs},
                {"keypoints_per_pair", config.keypoints_per_pair},
                {"lr", config.lr},
                {"seed", config.seed},
                {"lambda1", config.weights.lambda1},
                {"lambda3", config.weights.lambda3},
                {"epipolar_delta", {config.epipolar.delta1, config.epipolar.delta2}},
                {"cycle_delta", {config.cycle.delta1, config.cycle.delta2}},
                {"detect_threshold", config.detect_threshold},
                {"nms_radius", config.nms_radius},
                {"inlier_px", config.inlier_px},
                {"levels", config.levels}};
  return j.dump();
}

struct StepLog {
  int step = 0;
  std::string stage;
  losses::LossReport report;
  int skipped_pairs = 0;
  int rejected_steps = 0;
  double wall_ms = 0.0;
};

void emit_log(std::ostream* log, const StepLog& entry) {
  if (!log) return;
  nlohmann::ordered_json j;
  j["step"] = entry.step;
  j["stage"] = entry.stage;
  j["l_m"] = entry.report.l_m;
  j["l_c"] = entry.report.l_c;
  j["l_e"] = entry.report.l_e;
  j["l_cy"] = entry.report.l_cy;
  j["composite"] = entry.report.composite;
  j["counts"] = entry.report.term_counts;
  j["skipped_pairs"] = entry.skipped_pairs;
  j["rejected_steps"] = entry.rejected_steps;
  j["wall_ms"] = entry.wall_ms;
  (*log) << j.dump() << "\n";
}

Checkpoint snapshot(const net::Model& model, const AdamState& adam,
                    const Rng& rng, std::int64_t step,
                    const std::string& lineage,
                    const std::string& config_json) {
  Checkpoint ckpt = checkpoint_from_model(model);
  ckpt.adam = adam;
  ckpt.rng_state = rng.serialize();
  ckpt.train_step = step;
  ckpt.lineage = lineage;
  ckpt.config_json = config_json;
  return ckpt;
}

std::vector<Eigen::Vector2d> random_mask_keypoints(const LoadedPair& pair,
                                                   int count, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pair.mask.size(); ++i) {
    if (pair.mask[i]) candidates.push_back(i);
  }
  std::vector<Eigen::Vector2d> points;
  if (candidates.empty()) return points;
  points.reserve(count);
  for (int k = 0; k < count; ++k) {
    const std::size_t i = candidates[rng.uniform_int(candidates.size())];
    points.emplace_back(static_cast<double>(i % pair.width),
                        static_cast<double>(i / pair.width));
  }
  return points;
}

// Confidence of each keypoint sampled from the detector map, as one [N]
// tensor so gradients reach the detector head.
Tensor sample_confidences(const Tensor& conf_map,
                          const std::vector<Eigen::Vector2d>& keypoints) {
  std::vector<double> coords;
  coords.reserve(keypoints.size() * 2);
  for (const auto& kp : keypoints) {
    coords.push_back(kp.x());
    coords.push_back(kp.y());
  }
  Tensor points = Tensor::from_values(
      {static_cast<int>(keypoints.size()), 2}, std::move(coords));
  return ops::reshape(ops::bilinear_sample(conf_map, points),
                      {static_cast<int>(keypoints.size())});
}

struct WarpBatchTerms {
  std::optional<Tensor> l_m;
  std::optional<Tensor> l_c;
  int keypoints = 0;
};

// Matching + confidence terms of one warp pair (the stage-1 objective; the
// stage-2 matching term reuses it without labels).
WarpBatchTerms warp_pair_terms(const net::Model& model, const LoadedPair& pair,
                               const std::vector<Eigen::Vector2d>& keypoints,
                               const TrainConfig& config, bool with_labels) {
  WarpBatchTerms terms;
  if (keypoints.empty()) return terms;

  Tensor img_t = pair.tensor_t();
  Tensor img_r = pair.tensor_r();
  const auto pyr_t = model.extract_features(img_t);
  const auto pyr_r = model.extract_features(img_r);
  Tensor conf_map = model.detect(img_t);
  Tensor conf = sample_confidences(conf_map, keypoints);

  std::vector<Tensor> preds;
  std::vector<Eigen::Vector2d> gts;
  std::vector<double> labels;
  preds.reserve(keypoints.size());
  for (const auto& kp : keypoints) {
    const auto gt = geo::warp_point(*pair.homography, kp);
    if (!gt) continue;
    const auto trace = model.match(kp, pyr_t, pyr_r, config.levels);
    const Eigen::Vector2d pred(trace.x_r.at(0), trace.x_r.at(1));
    preds.push_back(trace.x_r);
    gts.push_back(*gt);
    labels.push_back((pred - *gt).norm() <= config.inlier_px ? 1.0 : 0.0);
  }
  if (preds.empty()) return terms;

  terms.keypoints = static_cast<int>(preds.size());
  terms.l_m = losses::weighted_matching_loss(preds, gts, conf);
  if (with_labels) {
    terms.l_c = losses::keypoint_confidence_loss(conf, labels);
  }
  return terms;
}

}  // namespace

TrainResult train_self(const net::ModelConfig& model_config,
                       const TrainConfig& config, const data::Manifest& corpus,
                       std::ostream* log,
                       const std::optional<Checkpoint>& init) {
  const std::string config_json = train_config_json(model_config, config);
  Rng rng(config.seed);
  net::Model model;
  AdamState adam;
  std::int64_t step0 = 0;
  if (init) {
    model = model_from_checkpoint(*init);
    adam = init->adam;
    rng = Rng::deserialize(init->rng_state);
    step0 = init->train_step;
  } else {
    net::ModelConfig cfg = model_config;
    model = net::Model(cfg, rng);
  }

  PairCache cache(corpus);
  const auto warp_indices = internal::entries_of_kind(corpus, "warp");
  check(!warp_indices.empty(), "train_self: corpus has no warp pairs");

  TrainResult result;
  AdamConfig adam_config;
  adam_config.lr = config.lr;

  for (int step = 1; step <= config.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    model.zero_grad();

    std::vector<Tensor> lm_terms, lc_terms;
    int keypoint_count = 0;
    int step_skips = 0;
    for (int b = 0; b < config.batch_pairs; ++b) {
      const int idx = warp_indices[rng.uniform_int(warp_indices.size())];
      const LoadedPair& pair = cache.get(idx);
      const auto keypoints =
          random_mask_keypoints(pair, config.keypoints_per_pair, rng);
      const auto terms = warp_pair_terms(model, pair, keypoints, config, true);
      if (!terms.l_m) {
        ++step_skips;
        continue;
      }
      lm_terms.push_back(*terms.l_m);
      lc_terms.push_back(*terms.l_c);
      keypoint_count += terms.keypoints;
    }
    result.skipped_pairs += step_skips;
    if (lm_terms.empty()) continue;

    Tensor l_m = mean_of(lm_terms);
    Tensor l_c = mean_of(lc_terms);
    Tensor composite = losses::stage_loss_self(l_m, l_c, config.weights);

    StepLog entry;
    entry.step = static_cast<int>(step0) + step;
    entry.stage = "self";
    entry.report.l_m = l_m.value();
    entry.report.l_c = l_c.value();
    entry.report.composite = composite.value();
    entry.report.term_counts["l_m"] = keypoint_count;
    entry.report.term_counts["l_c"] = keypoint_count;

    if (!std::isfinite(composite.value())) {
      // Divergence guard: the parameters have not been touched this step,
      // so they are the last good state.
      result.diverged = true;
      result.checkpoint = snapshot(model, adam, rng, step0 + step - 1, "self",
                                   config_json);
      return result;
    }

    composite.backward();
    optimize_step(model.parameters(), adam, adam_config);
    ++result.steps_run;

    entry.skipped_pairs = step_skips;  // per step, resume-stable
    entry.rejected_steps = adam.rejected_steps;
    entry.wall_ms =
        config.deterministic
            ? 0.0
            : std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    emit_log(log, entry);
  }

  result.checkpoint =
      snapshot(model, adam, rng, step0 + config.steps, "self", config_json);
  return result;
}

TrainResult train_weak(const net::ModelConfig& model_config,
                       const TrainConfig& config, const data::Manifest& corpus,
                       const Checkpoint& init, std::ostream* log) {
  const std::string config_json = train_config_json(model_config, config);
  net::Model model = model_from_checkpoint(init);
  AdamState adam;  // fresh moments for the new objective
  Rng rng(config.seed);

  // The detector layer is frozen for the whole weak stage.
  std::set<std::string> frozen;
  for (const auto& [name, p] : model.parameters()) {
    if (name.starts_with("detector.")) frozen.insert(name);
  }

  PairCache cache(corpus);
  const auto warp_indices = internal::entries_of_kind(corpus, "warp");
  const auto scene_indices = internal::entries_of_kind(corpus, "scene");
  check(!warp_indices.empty(),
        "train_weak: corpus has no warp pairs (the matching term needs them)");
  check(!scene_indices.empty(), "train_weak: corpus has no scene pairs");

  TrainResult result;
  AdamConfig adam_config;
  adam_config.lr = config.lr;
  const data::SelectConfig select_config{config.epipolar.delta1,
                                         config.cycle.delta1};

  const int scene_per_batch = std::max(1, config.batch_pairs - 1);

  for (int step = 1; step <= config.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    model.zero_grad();
    int step_skips = 0;

    // Warp share of the batch: the matching term with NMS-sampled keypoints.
    std::vector<Tensor> lm_terms;
    int lm_count = 0;
    {
      const int idx = warp_indices[rng.uniform_int(warp_indices.size())];
      const LoadedPair& pair = cache.get(idx);
      std::vector<Eigen::Vector2d> keypoints;
      {
        NoGradGuard no_grad;
        Tensor conf_map = model.detect(pair.tensor_t());
        for (const auto& kp : net::select_keypoints(
                 conf_map, config.detect_threshold, config.nms_radius,
                 config.keypoints_per_pair)) {
          const int x = static_cast<int>(kp.x.x());
          const int y = static_cast<int>(kp.x.y());
          if (pair.in_mask(x, y)) keypoints.push_back(kp.x);
        }
      }
      const auto terms = warp_pair_terms(model, pair, keypoints, config, false);
      if (terms.l_m) {
        lm_terms.push_back(*terms.l_m);
        lm_count += terms.keypoints;
      } else {
        ++step_skips;
      }
    }

    // Scene share: epipolar + cycle over hull-expanded candidates.
    std::vector<Tensor> le_terms, lcy_terms;
    int weak_count = 0;
    for (int s = 0; s < scene_per_batch; ++s) {
      const int idx = scene_indices[rng.uniform_int(scene_indices.size())];
      const LoadedPair& pair = cache.get(idx);
      Tensor img_t = pair.tensor_t();
      Tensor img_r = pair.tensor_r();
      const auto pyr_t = model.extract_features(img_t);
      const auto pyr_r = model.extract_features(img_r);
      std::vector<net::Keypoint> keypoints;
      {
        NoGradGuard no_grad;
        Tensor conf_map = model.detect(img_t);
        keypoints = net::select_keypoints(conf_map, config.detect_threshold,
                                          config.nms_radius,
                                          config.keypoints_per_pair);
      }
      if (keypoints.empty()) {
        ++step_skips;
        continue;
      }

      std::vector<net::MatchTrace> forward, reverse;
      std::vector<data::ScoredMatch> scored;
      forward.reserve(keypoints.size());
      for (const auto& kp : keypoints) {
        auto fwd = model.match(kp.x, pyr_t, pyr_r, config.levels);
        auto rev = model.match_from(fwd.x_r, pyr_r, pyr_t, config.levels);
        const Eigen::Vector2d back(rev.x_r.at(0), rev.x_r.at(1));
        data::ScoredMatch sm;
        sm.match = fwd.to_result();
        sm.cycle_px = (back - kp.x).norm();
        scored.push_back(sm);
        forward.push_back(std::move(fwd));
        reverse.push_back(std::move(rev));
      }

      const auto essential = geo::essential_from_pose(*pair.pose);
      const auto candidates = data::select_candidates(
          scored, essential, pair.k_t, pair.k_r, select_config);
      if (candidates.empty()) {
        ++step_skips;
        continue;
      }

      std::vector<Tensor> le_pair, lcy_pair;
      for (int member : candidates.members) {
        const auto& kp = keypoints[member].x;
        Tensor x_t_const = Tensor::from_values({2}, {kp.x(), kp.y()});
        le_pair.push_back(losses::robust(
            losses::epipolar_term(x_t_const, forward[member].x_r, essential,
                                  pair.k_t, pair.k_r),
            config.epipolar));
        lcy_pair.push_back(losses::robust_norm(
            ops::sub(reverse[member].x_r, x_t_const), config.cycle));
      }
      weak_count += static_cast<int>(candidates.members.size());
      le_terms.push_back(mean_of(le_pair));
      lcy_terms.push_back(mean_of(lcy_pair));
    }

    result.skipped_pairs += step_skips;
    if (lm_terms.empty()) continue;
    Tensor l_m = mean_of(lm_terms);
    // Scene pairs without candidates contribute zero with count zero.
    Tensor l_e = le_terms.empty() ? Tensor::scalar(0.0) : mean_of(le_terms);
    Tensor l_cy = lcy_terms.empty() ? Tensor::scalar(0.0) : mean_of(lcy_terms);
    Tensor composite = losses::stage_loss_weak(l_m, l_e, l_cy, config.weights);

    StepLog entry;
    entry.step = static_cast<int>(init.train_step) + step;
    entry.stage = "weak";
    entry.report.l_m = l_m.value();
    entry.report.l_e = l_e.value();
    entry.report.l_cy = l_cy.value();
    entry.report.composite = composite.value();
    entry.report.term_counts["l_m"] = lm_count;
    entry.report.term_counts["l_e"] = weak_count;
    entry.report.term_counts["l_cy"] = weak_count;

    if (!std::isfinite(composite.value())) {
      result.diverged = true;
      result.checkpoint = snapshot(model, adam, rng,
                                   init.train_step + step - 1, "weak",
                                   config_json);
      return result;
    }

    composite.backward();
    optimize_step(model.parameters(), adam, adam_config, frozen);
    ++result.steps_run;

    entry.skipped_pairs = step_skips;  // per step, resume-stable
    entry.rejected_steps = adam.rejected_steps;
    entry.wall_ms =
        config.deterministic
            ? 0.0
            : std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    emit_log(log, entry);
  }

  result.checkpoint = snapshot(model, adam, rng, init.train_step + config.steps,
                               "weak", config_json);
  return result;
}

}  // namespace c2f::pipeline
