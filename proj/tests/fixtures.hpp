#pragma once

// Shared fixtures: a desk-scale model configuration and an on-disk corpus
// builder used by the pipeline and acceptance suites.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "c2f/data.hpp"
#include "c2f/network.hpp"

namespace c2f::testing {

// Small model that trains in seconds on one CPU core.
inline net::ModelConfig desk_model(int coarse_side = 8) {
  net::ModelConfig cfg;
  cfg.extractor.channels = {8, 12, 16};
  cfg.extractor.coarse_side = coarse_side;
  cfg.detector.hidden = {8, 8};
  cfg.matcher.conv1 = 8;
  cfg.matcher.conv2 = 8;
  cfg.windows.target_side = 3;
  cfg.windows.refine_side = 5;
  cfg.windows.coarse_side = coarse_side;
  return cfg;
}

struct CorpusSpec {
  int warp_pairs = 8;
  int scene_pairs = 0;
  int image_size = 64;
  std::uint64_t seed = 1;
  geo::HomographyConfig homography;  // width/height filled from image_size
  data::SceneConfig scene;           // image_size filled from image_size
  bool identity_warps = false;
};

struct BuiltCorpus {
  std::string manifest_path;
  // Oracle matches per scene pair id (test-only; never read by training).
  std::map<std::string, std::vector<data::OracleMatch>> oracles;
};

inline BuiltCorpus build_corpus(const std::string& dir, const CorpusSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  data::Manifest manifest;
  Rng rng(spec.seed);
  BuiltCorpus built;

  for (int i = 0; i < spec.warp_pairs; ++i) {
    const Image texture = data::gen_texture(rng.raw(), spec.image_size);
    data::WarpConfig wcfg;
    wcfg.homography = spec.homography;
    wcfg.identity = spec.identity_warps;
    Rng pair_rng = rng.derive(1000 + i);
    const auto pair = data::gen_warp_pair(texture, wcfg, pair_rng);
    data::ManifestEntry e;
    e.pair_id = "warp_" + std::to_string(i);
    e.kind = "warp";
    e.image_t = e.pair_id + "_t.pgm";
    e.image_r = e.pair_id + "_r.pgm";
    e.homography = pair.homography;
    save_pnm(pair.image_t, data::join_path(dir, e.image_t));
    save_pnm(pair.image_r, data::join_path(dir, e.image_r));
    manifest.entries.push_back(e);
  }

  data::SceneConfig scfg = spec.scene;
  scfg.image_size = spec.image_size;
  for (int i = 0; i < spec.scene_pairs; ++i) {
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
    save_pnm(pair.image_t, data::join_path(dir, e.image_t));
    save_pnm(pair.image_r, data::join_path(dir, e.image_r));
    manifest.entries.push_back(e);
    built.oracles[e.pair_id] = pair.oracle;
  }

  built.manifest_path = data::join_path(dir, "manifest.jsonl");
  data::write_manifest(manifest, built.manifest_path);
  return built;
}

inline std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace c2f::testing
