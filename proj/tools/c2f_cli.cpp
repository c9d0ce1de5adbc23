// c2f command line: dataset synthesis, two-stage training, matching,
// RANSAC pose evaluation, visualization and gradient checking.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "c2f/data.hpp"
#include "c2f/gradcheck_suite.hpp"
#include "c2f/pipeline.hpp"

namespace {

using namespace c2f;
namespace fs = std::filesystem;

struct GenDataArgs {
  std::string out_dir = "corpus";
  int textures = 32;
  int warp_pairs = 32;
  int scene_pairs = 0;
  int size = 128;
  std::uint64_t seed = 1;
  double min_rotation_deg = 0.0;
  double max_rotation_deg = 15.0;
  double heldout_fraction = 0.0;
};

void run_gen_data(const GenDataArgs& args) {
  fs::create_directories(args.out_dir);
  Rng rng(args.seed);
  data::Manifest train, heldout;

  std::vector<Image> textures;
  for (int i = 0; i < args.textures; ++i) {
    textures.push_back(data::gen_texture(rng.raw(), args.size));
  }

  auto push = [&](data::ManifestEntry entry, int index, int total) {
    const bool hold =
        args.heldout_fraction > 0.0 &&
        index >= static_cast<int>(total * (1.0 - args.heldout_fraction));
    (hold ? heldout : train).entries.push_back(std::move(entry));
  };

  for (int i = 0; i < args.warp_pairs; ++i) {
    data::WarpConfig wcfg;
    Rng pair_rng = rng.derive(1000 + i);
    const Image& texture = textures[i % textures.size()];
    const auto pair = data::gen_warp_pair(texture, wcfg, pair_rng);
    data::ManifestEntry e;
    e.pair_id = "warp_" + std::to_string(i);
    e.kind = "warp";
    e.image_t = e.pair_id + "_t.pgm";
    e.image_r = e.pair_id + "_r.pgm";
    e.homography = pair.homography;
    save_pnm(pair.image_t, data::join_path(args.out_dir, e.image_t));
    save_pnm(pair.image_r, data::join_path(args.out_dir, e.image_r));
    push(std::move(e), i, args.warp_pairs);
  }

  data::SceneConfig scfg;
  scfg.image_size = std::max(64, args.size);
  scfg.min_rotation_deg = args.min_rotation_deg;
  scfg.max_rotation_deg = args.max_rotation_deg;
  for (int i = 0; i < args.scene_pairs; ++i) {
    Rng pair_rng = rng.derive(2000 + i);
    const auto pair = data::gen_scene_pair(scfg, pair_rng);
    data::ManifestEntry e;
    e.pair_id = "scene_" + std::to_string(i);
    e.kind = "scene";
    e.image_t = e.pair_id + "_t.pgm";
    e.image_r = e.pair_id + "_r.pgm";
    e.k_t = pair.k_t;
    e.k_r = pair.k_r;
    e.pose = pair.relative_pose;
    save_pnm(pair.image_t, data::join_path(args.out_dir, e.image_t));
    save_pnm(pair.image_r, data::join_path(args.out_dir, e.image_r));
    push(std::move(e), i, args.scene_pairs);
  }

  data::write_manifest(train, data::join_path(args.out_dir, "manifest.jsonl"));
  if (args.heldout_fraction > 0.0) {
    data::write_manifest(heldout,
                         data::join_path(args.out_dir, "heldout.jsonl"));
  }
  std::cout << "wrote " << train.entries.size() << " training pairs";
  if (args.heldout_fraction > 0.0) {
    std::cout << " and " << heldout.entries.size() << " held-out pairs";
  }
  std::cout << " under " << args.out_dir << "\n";
}

net::ModelConfig model_config_from_flags(const std::string& preset) {
  if (preset == "tiny") {
    net::ModelConfig cfg;
    cfg.extractor.channels = {8, 12, 16};
    cfg.extractor.coarse_side = 8;
    cfg.detector.hidden = {8, 8};
    cfg.matcher.conv1 = 8;
    cfg.matcher.conv2 = 8;
    cfg.windows.coarse_side = 8;
    return cfg;
  }
  if (preset == "full") return net::ModelConfig{};
  throw std::invalid_argument("unknown model preset '" + preset +
                              "' (expected tiny|full)");
}

struct TrainArgs {
  std::string manifest;
  std::string out = "model.ckpt";
  std::string log_path;
  std::string init;  // stage-1 checkpoint (train-weak) or resume point
  std::string model_preset = "tiny";
  pipeline::TrainConfig config;
};

void run_train(const TrainArgs& args, bool weak) {
  const auto manifest = data::read_manifest(args.manifest);
  const auto model_config = model_config_from_flags(args.model_preset);
  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!args.log_path.empty()) {
    log_file.open(args.log_path);
    if (!log_file) {
      throw std::runtime_error("cannot open log file " + args.log_path);
    }
    log = &log_file;
  }

  pipeline::TrainResult result;
  if (weak) {
    if (args.init.empty()) {
      throw std::invalid_argument(
          "train-weak requires --init with a stage-1 checkpoint");
    }
    const auto init = pipeline::load_checkpoint(args.init);
    auto cfg = args.config;
    cfg.stage = "weak";
    result = pipeline::train_weak(model_config, cfg, manifest, init, log);
  } else {
    std::optional<pipeline::Checkpoint> init;
    if (!args.init.empty()) init = pipeline::load_checkpoint(args.init);
    auto cfg = args.config;
    cfg.stage = "self";
    result = pipeline::train_self(model_config, cfg, manifest, log, init);
  }
  pipeline::save_checkpoint(result.checkpoint, args.out);
  std::cout << "stage " << (weak ? "weak" : "self") << ": ran "
            << result.steps_run << " steps, skipped " << result.skipped_pairs
            << " pairs" << (result.diverged ? ", DIVERGED (last good state)" : "")
            << "; checkpoint -> " << args.out << "\n";
  if (result.diverged) std::exit(3);
}

int run_grad_check(double tolerance) {
  const auto reports = run_gradcheck_suite(tolerance);
  int failed = 0;
  double worst = 0.0;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) {
      ++failed;
      std::printf("FAIL  %-36s rel %.3e  (%s)\n", r.op_name.c_str(),
                  r.max_rel_error, r.detail.c_str());
    }
  }
  std::printf("%zu checks, %d failures, worst relative error %.3e\n",
              reports.size(), failed, worst);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-to-fine feature matching and two-view pose estimation"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  auto* gen = app.add_subcommand("gen-data",
                                 "synthesize textures, warp pairs and scene "
                                 "pairs with a manifest");
  gen->add_option("--out", gen_args.out_dir, "output directory");
  gen->add_option("--textures", gen_args.textures, "texture count");
  gen->add_option("--warp-pairs", gen_args.warp_pairs, "homography pairs");
  gen->add_option("--scene-pairs", gen_args.scene_pairs, "rendered scene pairs");
  gen->add_option("--size", gen_args.size, "image size (multiple of 32)");
  gen->add_option("--seed", gen_args.seed, "generation seed");
  gen->add_option("--min-rotation-deg", gen_args.min_rotation_deg,
                  "scene rotation lower bound");
  gen->add_option("--max-rotation-deg", gen_args.max_rotation_deg,
                  "scene rotation upper bound");
  gen->add_option("--heldout-fraction", gen_args.heldout_fraction,
                  "fraction of pairs diverted to heldout.jsonl");

  TrainArgs self_args, weak_args;
  auto add_train_flags = [](CLI::App* cmd, TrainArgs& args) {
    cmd->add_option("--manifest", args.manifest, "training manifest")
        ->required();
    cmd->add_option("--out", args.out, "output checkpoint path");
    cmd->add_option("--log", args.log_path, "JSONL training log path");
    cmd->add_option("--model", args.model_preset, "model preset (tiny|full)");
    cmd->add_option("--steps", args.config.steps, "optimization steps");
    cmd->add_option("--batch-pairs", args.config.batch_pairs,
                    "image pairs per step");
    cmd->add_option("--keypoints", args.config.keypoints_per_pair,
                    "keypoints per pair");
    cmd->add_option("--lr", args.config.lr, "learning rate");
    cmd->add_option("--seed", args.config.seed, "training seed");
    cmd->add_option("--lambda1", args.config.weights.lambda1,
                    "confidence loss weight (stage 1)");
    cmd->add_option("--lambda3", args.config.weights.lambda3,
                    "epipolar+cycle weight (stage 2)");
    cmd->add_option("--detect-threshold", args.config.detect_threshold,
                    "keypoint confidence threshold");
    cmd->add_option("--nms-radius", args.config.nms_radius, "NMS radius, px");
    cmd->add_option("--inlier-px", args.config.inlier_px,
                    "stage-1 label threshold, px");
    cmd->add_option("--levels", args.config.levels,
                    "match depth: 1 coarse, 2 +median, 3 full");
    cmd->add_flag("--deterministic", args.config.deterministic,
                  "zero wall-time fields for bitwise-reproducible logs");
  };
  auto* train_self_cmd =
      app.add_subcommand("train-self", "stage 1: homography self-supervision");
  add_train_flags(train_self_cmd, self_args);
  train_self_cmd->add_option("--init", self_args.init,
                             "resume from this checkpoint");
  auto* train_weak_cmd = app.add_subcommand(
      "train-weak", "stage 2: epipolar weak supervision (frozen detector)");
  add_train_flags(train_weak_cmd, weak_args);
  train_weak_cmd->add_option("--init", weak_args.init,
                             "stage-1 checkpoint to start from");

  std::string match_manifest, match_ckpt, match_pair_id, match_out;
  pipeline::EvalConfig match_cfg;
  auto* match_cmd = app.add_subcommand(
      "match", "write the correspondence file for one manifest pair");
  match_cmd->add_option("--manifest", match_manifest)->required();
  match_cmd->add_option("--checkpoint", match_ckpt)->required();
  match_cmd->add_option("--pair", match_pair_id, "pair id")->required();
  match_cmd->add_option("--out", match_out, "output JSONL path")->required();
  match_cmd->add_option("--levels", match_cfg.levels);
  match_cmd->add_option("--detect-threshold", match_cfg.detect_threshold);
  match_cmd->add_option("--max-keypoints", match_cfg.max_keypoints);

  std::string eval_manifest, eval_ckpt, eval_out, eval_lineage;
  pipeline::EvalConfig eval_cfg;
  auto* eval_cmd = app.add_subcommand(
      "eval", "RANSAC pose accuracy table over scene pairs");
  eval_cmd->add_option("--manifest", eval_manifest)->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--threshold-deg", eval_cfg.threshold_deg,
                       "accuracy threshold in degrees (10 default, 5 by flag)");
  eval_cmd->add_option("--out", eval_out, "machine-readable table path");
  eval_cmd->add_option("--lineage", eval_lineage,
                       "tag for the checkpoint lineage (self|weak)");
  eval_cmd->add_option("--levels", eval_cfg.levels);
  eval_cmd->add_option("--seed", eval_cfg.seed);
  eval_cmd->add_option("--detect-threshold", eval_cfg.detect_threshold);
  eval_cmd->add_option("--max-keypoints", eval_cfg.max_keypoints);

  std::string viz_manifest, viz_ckpt, viz_pair_id, viz_out = "viz";
  pipeline::EvalConfig viz_cfg;
  auto* viz_cmd = app.add_subcommand(
      "viz", "match overlay and per-level similarity heatmaps for one pair");
  viz_cmd->add_option("--manifest", viz_manifest)->required();
  viz_cmd->add_option("--checkpoint", viz_ckpt)->required();
  viz_cmd->add_option("--pair", viz_pair_id)->required();
  viz_cmd->add_option("--out", viz_out, "output directory");
  viz_cmd->add_option("--detect-threshold", viz_cfg.detect_threshold);
  viz_cmd->add_option("--max-keypoints", viz_cfg.max_keypoints);

  double grad_tolerance = 1e-4;
  auto* grad_cmd = app.add_subcommand(
      "grad-check", "finite-difference validation of every op and loss");
  grad_cmd->add_option("--tolerance", grad_tolerance);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      run_gen_data(gen_args);
    } else if (train_self_cmd->parsed()) {
      run_train(self_args, false);
    } else if (train_weak_cmd->parsed()) {
      run_train(weak_args, true);
    } else if (match_cmd->parsed()) {
      const auto manifest = data::read_manifest(match_manifest);
      const auto model =
          pipeline::model_from_checkpoint(pipeline::load_checkpoint(match_ckpt));
      for (const auto& entry : manifest.entries) {
        if (entry.pair_id != match_pair_id) continue;
        const auto matches =
            pipeline::match_pair(model, entry, manifest.base_dir, match_cfg);
        pipeline::write_matches_jsonl(matches, match_out);
        std::cout << matches.matches.size() << " matches -> " << match_out
                  << "\n";
        return 0;
      }
      throw std::invalid_argument("pair id '" + match_pair_id +
                                  "' not present in " + match_manifest);
    } else if (eval_cmd->parsed()) {
      const auto manifest = data::read_manifest(eval_manifest);
      const auto ckpt = pipeline::load_checkpoint(eval_ckpt);
      eval_cfg.lineage_tag =
          eval_lineage.empty() ? ckpt.lineage : eval_lineage;
      const auto model = pipeline::model_from_checkpoint(ckpt);
      const auto table = pipeline::evaluate(model, manifest, eval_cfg);
      std::cout << pipeline::format_eval_table(table);
      if (!eval_out.empty()) pipeline::write_eval_table(table, eval_out);
    } else if (viz_cmd->parsed()) {
      const auto manifest = data::read_manifest(viz_manifest);
      const auto model =
          pipeline::model_from_checkpoint(pipeline::load_checkpoint(viz_ckpt));
      for (const auto& entry : manifest.entries) {
        if (entry.pair_id != viz_pair_id) continue;
        fs::create_directories(viz_out);
        const Image img_t =
            load_pnm(data::join_path(manifest.base_dir, entry.image_t));
        const Image img_r =
            load_pnm(data::join_path(manifest.base_dir, entry.image_r));
        const auto matches =
            pipeline::match_pair(model, entry, manifest.base_dir, viz_cfg);
        pipeline::write_match_overlay(
            img_t, img_r, matches.matches,
            data::join_path(viz_out, entry.pair_id + "_overlay.ppm"));
        const Eigen::Vector2d center(img_t.width / 2.0, img_t.height / 2.0);
        const Eigen::Vector2d probe =
            matches.matches.empty() ? center : matches.matches.front().x_t;
        pipeline::write_similarity_heatmaps(
            model, img_t, img_r, probe,
            data::join_path(viz_out, entry.pair_id + "_sim"));
        std::cout << "overlay and heatmaps -> " << viz_out << "\n";
        return 0;
      }
      throw std::invalid_argument("pair id '" + viz_pair_id +
                                  "' not present in " + viz_manifest);
    } else if (grad_cmd->parsed()) {
      return run_grad_check(grad_tolerance);
    }
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
