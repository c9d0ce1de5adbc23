#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "c2f/data.hpp"

namespace c2f::data {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json intrinsics_json(const geo::Intrinsics& k) {
  return ordered_json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
}

geo::Intrinsics intrinsics_from(const nlohmann::json& j) {
  geo::Intrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  check(k.fx > 0.0 && k.fy > 0.0, "intrinsics: focal lengths must be positive");
  return k;
}

std::vector<double> matrix_rows(const Eigen::Matrix3d& m) {
  std::vector<double> v(9);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) v[r * 3 + c] = m(r, c);
  }
  return v;
}

Eigen::Matrix3d matrix_from_rows(const std::vector<double>& v) {
  check(v.size() == 9, "manifest: matrix field must hold 9 reals");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = v[r * 3 + c];
  }
  return m;
}

}  // namespace

std::string join_path(const std::string& dir, const std::string& file) {
  if (dir.empty()) return file;
  return (std::filesystem::path(dir) / file).string();
}

void write_manifest(const Manifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  for (const auto& e : manifest.entries) {
    ordered_json j;
    j["pair_id"] = e.pair_id;
    j["kind"] = e.kind;
    j["image_t"] = e.image_t;
    j["image_r"] = e.image_r;
    if (e.k_t) j["k_t"] = intrinsics_json(*e.k_t);
    if (e.k_r) j["k_r"] = intrinsics_json(*e.k_r);
    if (e.pose) {
      j["pose"] = ordered_json{
          {"r", matrix_rows(e.pose->rotation)},
          {"t", {e.pose->translation.x(), e.pose->translation.y(),
                 e.pose->translation.z()}}};
    }
    if (e.homography) {
      j["homography"] = matrix_rows(e.homography->m);
    }
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write_manifest: write failed for " + path);
}

Manifest read_manifest(const std::string& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
  Manifest manifest;
  manifest.base_dir = std::filesystem::path(path).parent_path().string();

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("read_manifest: " + where +
                               ": malformed record: " + e.what());
    }
    try {
      ManifestEntry entry;
      entry.pair_id = j.at("pair_id").get<std::string>();
      entry.kind = j.at("kind").get<std::string>();
      check(entry.kind == "warp" || entry.kind == "scene" ||
                entry.kind == "real",
            "unknown pair kind '" + entry.kind + "'");
      entry.image_t = j.at("image_t").get<std::string>();
      entry.image_r = j.at("image_r").get<std::string>();
      if (j.contains("k_t")) entry.k_t = intrinsics_from(j["k_t"]);
      if (j.contains("k_r")) entry.k_r = intrinsics_from(j["k_r"]);
      if (j.contains("pose")) {
        const Eigen::Matrix3d r =
            matrix_from_rows(j["pose"].at("r").get<std::vector<double>>());
        const auto tv = j["pose"].at("t").get<std::vector<double>>();
        check(tv.size() == 3, "pose t must hold 3 reals");
        // Pose::make re-validates the rotation invariants.
        entry.pose = geo::Pose::make(
            r, Eigen::Vector3d(tv[0], tv[1], tv[2]));
      }
      if (j.contains("homography")) {
        geo::Homography h;
        h.m = matrix_from_rows(j["homography"].get<std::vector<double>>());
        check(std::fabs(h.m(2, 2)) > 1e-12, "homography not normalizable");
        h.m /= h.m(2, 2);
        check(std::fabs(h.m.determinant()) > 1e-12, "homography singular");
        entry.homography = h;
      }
      if (entry.kind == "warp") {
        check(entry.homography.has_value(), "warp pair missing homography");
      } else {
        check(entry.k_t.has_value() && entry.k_r.has_value() &&
                  entry.pose.has_value(),
              entry.kind + " pair missing intrinsics or pose");
      }
      if (check_files) {
        for (const std::string& img : {entry.image_t, entry.image_r}) {
          const std::string full = join_path(manifest.base_dir, img);
          check(std::filesystem::exists(full),
                "referenced image does not exist: " + img);
        }
      }
      manifest.entries.push_back(std::move(entry));
    } catch (const std::exception& e) {
      throw std::runtime_error("read_manifest: " + where + ": " + e.what());
    }
  }
  return manifest;
}

}  // namespace c2f::data
