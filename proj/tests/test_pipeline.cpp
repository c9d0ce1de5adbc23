#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "c2f/ops.hpp"
#include "c2f/pipeline.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace c2f;
using c2f::testing::build_corpus;
using c2f::testing::CorpusSpec;
using c2f::testing::desk_model;
using c2f::testing::temp_dir;

namespace {

bool params_equal(const std::map<std::string, Tensor>& a,
                  const std::map<std::string, Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second.numel() != t.numel()) return false;
    if (std::memcmp(t.values().data(), it->second.values().data(),
                    t.numel() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

pipeline::TrainConfig smoke_train_config(int steps) {
  pipeline::TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_pairs = 1;
  cfg.keypoints_per_pair = 12;
  cfg.lr = 2e-3;
  cfg.seed = 7;
  cfg.deterministic = true;
  return cfg;
}

const std::string& shared_warp_manifest() {
  static std::string path = [] {
    CorpusSpec spec;
    spec.warp_pairs = 4;
    spec.image_size = 64;
    spec.seed = 5;
    return build_corpus(temp_dir("c2f_pipe_warp"), spec).manifest_path;
  }();
  return path;
}

}  // namespace

TEST_CASE("adam leaves parameters untouched for zero gradients") {
  std::map<std::string, Tensor> params;
  Tensor p = Tensor::from_values({3}, {1.0, -2.0, 3.0});
  p.set_requires_grad(true);
  p.zero_grad();
  params["w"] = p;
  pipeline::AdamState state;
  CHECK(pipeline::optimize_step(params, state, {}));
  CHECK(params.at("w").at(0) == 1.0);
  CHECK(params.at("w").at(1) == -2.0);
  CHECK(params.at("w").at(2) == 3.0);
}

TEST_CASE("adam follows the closed-form scalar recurrence") {
  // Constant gradient g: m_t and v_t have closed forms, so the parameter
  // trajectory can be recomputed independently.
  const double g = 0.37;
  const pipeline::AdamConfig cfg;
  std::map<std::string, Tensor> params;
  Tensor p = Tensor::scalar(1.0);
  p.set_requires_grad(true);
  params["x"] = p;
  pipeline::AdamState state;

  double expect = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 25; ++t) {
    params.at("x").zero_grad();
    params.at("x").node()->grad[0] = g;
    REQUIRE(pipeline::optimize_step(params, state, cfg));

    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    const double mh = m / (1 - std::pow(cfg.beta1, t));
    const double vh = v / (1 - std::pow(cfg.beta2, t));
    expect -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    CHECK(params.at("x").value() == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("adam rejects non-finite gradients and counts them") {
  std::map<std::string, Tensor> params;
  Tensor p = Tensor::scalar(2.0);
  p.set_requires_grad(true);
  p.zero_grad();
  p.node()->grad[0] = std::nan("");
  params["x"] = p;
  pipeline::AdamState state;
  CHECK(!pipeline::optimize_step(params, state, {}));
  CHECK(state.rejected_steps == 1);
  CHECK(params.at("x").value() == 2.0);
  CHECK(state.step == 0);
}

TEST_CASE("adam skips frozen parameters") {
  std::map<std::string, Tensor> params;
  for (const char* name : {"a", "b"}) {
    Tensor p = Tensor::scalar(1.0);
    p.set_requires_grad(true);
    p.zero_grad();
    p.node()->grad[0] = 1.0;
    params[name] = p;
  }
  pipeline::AdamState state;
  CHECK(pipeline::optimize_step(params, state, {}, {"a"}));
  CHECK(params.at("a").value() == 1.0);
  CHECK(params.at("b").value() != 1.0);
}

TEST_CASE("checkpoints round trip bitwise") {
  Rng rng(3);
  net::Model model(desk_model(), rng);
  pipeline::Checkpoint ckpt = pipeline::checkpoint_from_model(model);
  ckpt.lineage = "self";
  ckpt.train_step = 123;
  ckpt.config_json = "{\"note\":\"echo\"}";
  ckpt.rng_state = rng.serialize();
  ckpt.adam.step = 77;
  ckpt.adam.rejected_steps = 2;
  for (const auto& [name, p] : ckpt.params) {
    std::vector<double> m(p.numel()), v(p.numel());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = rng.normal();
      v[i] = rng.uniform();
    }
    ckpt.adam.m[name] = std::move(m);
    ckpt.adam.v[name] = std::move(v);
  }

  const std::string path = temp_dir("c2f_ckpt") + "/roundtrip.ckpt";
  pipeline::save_checkpoint(ckpt, path);
  const auto back = pipeline::load_checkpoint(path);

  CHECK(back.lineage == "self");
  CHECK(back.train_step == 123);
  CHECK(back.config_json == ckpt.config_json);
  CHECK(back.rng_state == ckpt.rng_state);
  CHECK(back.adam.step == 77);
  CHECK(back.adam.rejected_steps == 2);
  CHECK(params_equal(back.params, ckpt.params));
  for (const auto& [name, m] : ckpt.adam.m) {
    CHECK(std::memcmp(back.adam.m.at(name).data(), m.data(),
                      m.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(back.adam.v.at(name).data(),
                      ckpt.adam.v.at(name).data(),
                      m.size() * sizeof(double)) == 0);
  }
  CHECK(Rng::deserialize(back.rng_state) == Rng::deserialize(ckpt.rng_state));
}

TEST_CASE("checkpoint loader rejects foreign files") {
  const std::string path = temp_dir("c2f_ckpt") + "/garbage.bin";
  std::ofstream(path) << "not a checkpoint at all";
  CHECK_THROWS_WITH_AS(pipeline::load_checkpoint(path),
                       doctest::Contains("not a checkpoint"),
                       std::runtime_error);
}

TEST_CASE("zero training steps return the initialization") {
  const auto manifest = data::read_manifest(shared_warp_manifest());
  auto cfg = smoke_train_config(0);
  const auto result =
      pipeline::train_self(desk_model(), cfg, manifest, nullptr);
  CHECK(result.steps_run == 0);
  CHECK(!result.diverged);

  // Reconstruct the would-be initialization: same seed, same constructor.
  Rng rng(cfg.seed);
  net::Model fresh(desk_model(), rng);
  CHECK(params_equal(result.checkpoint.params, fresh.parameters()));
}

TEST_CASE("stage-1 smoke training decreases the matching loss") {
  const auto manifest = data::read_manifest(shared_warp_manifest());
  std::ostringstream log;
  auto cfg = smoke_train_config(60);
  const auto result =
      pipeline::train_self(desk_model(), cfg, manifest, &log);
  CHECK(result.steps_run == 60);
  CHECK(!result.diverged);

  std::vector<double> l_m;
  std::istringstream in(log.str());
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    l_m.push_back(j.at("l_m").get<double>());
    // Composite must recompute from its terms.
    const double recomputed = j.at("l_m").get<double>() +
                              1.0 * j.at("l_c").get<double>();
    CHECK(std::fabs(recomputed - j.at("composite").get<double>()) <= 1e-9);
  }
  REQUIRE(l_m.size() == 60);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += l_m[i];
    tail += l_m[l_m.size() - 1 - i];
  }
  CHECK(tail < head);  // trailing window improves on the leading one
}

TEST_CASE("same-seed deterministic runs produce identical logs and checkpoints") {
  const auto manifest = data::read_manifest(shared_warp_manifest());
  auto run = [&] {
    std::ostringstream log;
    auto cfg = smoke_train_config(8);
    auto result = pipeline::train_self(desk_model(), cfg, manifest, &log);
    return std::make_pair(log.str(), std::move(result.checkpoint));
  };
  auto [log_a, ckpt_a] = run();
  auto [log_b, ckpt_b] = run();
  CHECK(log_a == log_b);
  CHECK(params_equal(ckpt_a.params, ckpt_b.params));
  CHECK(ckpt_a.rng_state == ckpt_b.rng_state);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  const auto manifest = data::read_manifest(shared_warp_manifest());

  std::ostringstream log_full;
  auto cfg_full = smoke_train_config(12);
  const auto full =
      pipeline::train_self(desk_model(), cfg_full, manifest, &log_full);

  std::ostringstream log_a, log_b;
  auto cfg_half = smoke_train_config(6);
  const auto first =
      pipeline::train_self(desk_model(), cfg_half, manifest, &log_a);
  const auto second = pipeline::train_self(desk_model(), cfg_half, manifest,
                                           &log_b, first.checkpoint);

  CHECK(params_equal(second.checkpoint.params, full.checkpoint.params));
  CHECK(second.checkpoint.rng_state == full.checkpoint.rng_state);
  CHECK(second.checkpoint.train_step == full.checkpoint.train_step);

  // The resumed log must be the second half of the uninterrupted log.
  std::vector<std::string> full_lines, resumed_lines;
  std::string line;
  std::istringstream fin(log_full.str());
  while (std::getline(fin, line)) full_lines.push_back(line);
  std::istringstream rin(log_b.str());
  while (std::getline(rin, line)) resumed_lines.push_back(line);
  REQUIRE(full_lines.size() == 12);
  REQUIRE(resumed_lines.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(resumed_lines[i] == full_lines[6 + i]);
}

TEST_CASE("weak training never mutates detector parameters") {
  CorpusSpec spec;
  spec.warp_pairs = 3;
  spec.scene_pairs = 2;
  spec.image_size = 64;
  spec.seed = 11;
  spec.scene.oracle_points = 16;
  spec.scene.max_rotation_deg = 10.0;
  const auto corpus = build_corpus(temp_dir("c2f_pipe_weak"), spec);
  const auto manifest = data::read_manifest(corpus.manifest_path);

  auto cfg = smoke_train_config(6);
  const auto stage1 =
      pipeline::train_self(desk_model(), cfg, manifest, nullptr);

  auto weak_cfg = smoke_train_config(5);
  weak_cfg.stage = "weak";
  weak_cfg.batch_pairs = 2;
  std::ostringstream log;
  const auto stage2 = pipeline::train_weak(desk_model(), weak_cfg, manifest,
                                           stage1.checkpoint, &log);
  CHECK(stage2.steps_run == 5);

  int detector_params = 0;
  for (const auto& [name, p] : stage1.checkpoint.params) {
    if (!name.starts_with("detector.")) continue;
    ++detector_params;
    const auto& after = stage2.checkpoint.params.at(name);
    CHECK(std::memcmp(p.values().data(), after.values().data(),
                      p.numel() * sizeof(double)) == 0);
  }
  CHECK(detector_params > 0);

  // Some non-detector parameter must have moved.
  bool moved = false;
  for (const auto& [name, p] : stage1.checkpoint.params) {
    if (name.starts_with("detector.")) continue;
    const auto& after = stage2.checkpoint.params.at(name);
    if (std::memcmp(p.values().data(), after.values().data(),
                    p.numel() * sizeof(double)) != 0) {
      moved = true;
    }
  }
  CHECK(moved);

  // Weak-stage log recomputes its composite from the three terms.
  std::istringstream in(log.str());
  std::string line;
  int records = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    ++records;
    const double recomputed =
        j.at("l_m").get<double>() +
        1.0 * (j.at("l_e").get<double>() + j.at("l_cy").get<double>());
    CHECK(std::fabs(recomputed - j.at("composite").get<double>()) <= 1e-9);
  }
  CHECK(records == 5);
}

TEST_CASE("weak training with zero lambda3 reduces to the matching objective") {
  const auto manifest = data::read_manifest(shared_warp_manifest());
  auto cfg = smoke_train_config(4);
  const auto stage1 =
      pipeline::train_self(desk_model(), cfg, manifest, nullptr);

  CorpusSpec spec;
  spec.warp_pairs = 3;
  spec.scene_pairs = 1;
  spec.image_size = 64;
  spec.seed = 13;
  spec.scene.oracle_points = 8;
  const auto corpus = build_corpus(temp_dir("c2f_pipe_weak0"), spec);
  const auto weak_manifest = data::read_manifest(corpus.manifest_path);

  auto weak_cfg = smoke_train_config(3);
  weak_cfg.stage = "weak";
  weak_cfg.weights.lambda3 = 0.0;
  std::ostringstream log;
  pipeline::train_weak(desk_model(), weak_cfg, weak_manifest,
                       stage1.checkpoint, &log);
  std::istringstream in(log.str());
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("composite").get<double>() ==
          doctest::Approx(j.at("l_m").get<double>()).epsilon(1e-12));
  }
}

TEST_CASE("the oracle matcher reaches full accuracy at a tight threshold") {
  CorpusSpec spec;
  spec.warp_pairs = 0;
  spec.scene_pairs = 6;
  spec.image_size = 64;
  spec.seed = 17;
  spec.scene.oracle_points = 24;
  spec.scene.max_rotation_deg = 20.0;
  const auto corpus = build_corpus(temp_dir("c2f_pipe_oracle"), spec);
  const auto manifest = data::read_manifest(corpus.manifest_path);

  pipeline::EvalConfig cfg;
  cfg.threshold_deg = 0.1;
  cfg.lineage_tag = "oracle";
  const pipeline::MatcherFn oracle = [&](const data::ManifestEntry& entry,
                                         const std::string&,
                                         std::vector<Eigen::Vector2d>& x_t,
                                         std::vector<Eigen::Vector2d>& x_r) {
    for (const auto& om : corpus.oracles.at(entry.pair_id)) {
      x_t.push_back(om.x_t);
      x_r.push_back(om.x_r);
    }
  };
  const auto table = pipeline::evaluate_with_matcher(oracle, manifest, cfg);
  CHECK(table.estimation_failures == 0);
  int scored = 0;
  for (const auto& row : table.rows) {
    if (row.pair_count == 0) continue;
    scored += row.pair_count;
    CHECK(row.rotation_acc_pct == 100.0);
    CHECK(row.translation_acc_pct == 100.0);
  }
  CHECK(scored == 6);
}

TEST_CASE("evaluation is reproducible for a fixed seed") {
  CorpusSpec spec;
  spec.warp_pairs = 0;
  spec.scene_pairs = 2;
  spec.image_size = 64;
  spec.seed = 19;
  spec.scene.oracle_points = 12;
  const auto corpus = build_corpus(temp_dir("c2f_pipe_evalrep"), spec);
  const auto manifest = data::read_manifest(corpus.manifest_path);

  Rng rng(23);
  net::Model model(desk_model(), rng);
  pipeline::EvalConfig cfg;
  cfg.max_keypoints = 48;
  cfg.seed = 5;
  const auto a = pipeline::evaluate(model, manifest, cfg);
  const auto b = pipeline::evaluate(model, manifest, cfg);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].rotation_acc_pct == b.rows[i].rotation_acc_pct);
    CHECK(a.rows[i].translation_acc_pct == b.rows[i].translation_acc_pct);
    CHECK(a.rows[i].pair_count == b.rows[i].pair_count);
  }
  CHECK(a.estimation_failures == b.estimation_failures);
}

TEST_CASE("match records serialize with all per-level components") {
  const auto manifest = data::read_manifest(shared_warp_manifest());
  Rng rng(29);
  net::Model model(desk_model(), rng);
  pipeline::EvalConfig cfg;
  cfg.max_keypoints = 16;
  cfg.detect_threshold = 0.2;
  const auto matches =
      pipeline::match_pair(model, manifest.entries[0], manifest.base_dir, cfg);
  REQUIRE(!matches.matches.empty());

  const std::string path = temp_dir("c2f_pipe_match") + "/matches.jsonl";
  pipeline::write_matches_jsonl(matches, path);
  std::ifstream in(path);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    ++rows;
    CHECK(j.at("pair_id").get<std::string>() == matches.pair_id);
    for (const char* key : {"x_t", "x_r", "x_r_c", "x_r_m", "x_r_f"}) {
      CHECK(j.at(key).size() == 2);
    }
    // Vector-sum decomposition survives serialization.
    const double x = j["x_r_c"][0].get<double>() + j["x_r_m"][0].get<double>() +
                     j["x_r_f"][0].get<double>();
    CHECK(std::fabs(x - j["x_r"][0].get<double>()) <= 1e-6);
  }
  CHECK(rows == static_cast<int>(matches.matches.size()));
}

TEST_CASE("visualization artifacts land on disk with the right shapes") {
  const auto manifest = data::read_manifest(shared_warp_manifest());
  Rng rng(31);
  net::Model model(desk_model(), rng);

  const auto pair = data::read_manifest(shared_warp_manifest());
  const Image img_t =
      load_pnm(data::join_path(pair.base_dir, pair.entries[0].image_t));
  const Image img_r =
      load_pnm(data::join_path(pair.base_dir, pair.entries[0].image_r));

  pipeline::EvalConfig cfg;
  cfg.max_keypoints = 8;
  cfg.detect_threshold = 0.2;
  const auto matches =
      pipeline::match_pair(model, manifest.entries[0], manifest.base_dir, cfg);

  const std::string dir = temp_dir("c2f_pipe_viz");
  pipeline::write_match_overlay(img_t, img_r, matches.matches,
                                dir + "/overlay.ppm");
  const Image overlay = load_pnm(dir + "/overlay.ppm");
  CHECK(overlay.width == img_t.width * 2);
  CHECK(overlay.height == img_t.height);
  CHECK(overlay.channels == 3);

  pipeline::write_similarity_heatmaps(model, img_t, img_r, {32.0, 32.0},
                                      dir + "/heat");
  for (const char* level : {"coarse", "median", "fine"}) {
    const Image heat = load_pnm(dir + "/heat_" + std::string(level) + ".ppm");
    CHECK(heat.channels == 3);
    CHECK(heat.width >= 40);  // upscaled similarity grid
  }
}
