#pragma once

// Internal helpers shared by the training and evaluation translation units.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "c2f/data.hpp"
#include "c2f/image.hpp"
#include "c2f/tensor.hpp"

namespace c2f::pipeline::internal {

struct LoadedPair {
  std::string pair_id;
  std::string kind;
  Image image_t, image_r;
  int width = 0, height = 0;
  std::optional<geo::Homography> homography;
  std::vector<std::uint8_t> mask;  // warp pairs: exact target visibility
  std::optional<geo::Pose> pose;
  geo::Intrinsics k_t, k_r;

  Tensor tensor_t() const { return image_to_tensor(image_t); }
  Tensor tensor_r() const { return image_to_tensor(image_r); }

  bool in_mask(int x, int y) const {
    return !mask.empty() &&
           mask[static_cast<std::size_t>(y) * width + x] != 0;
  }
};

inline LoadedPair load_pair(const data::ManifestEntry& entry,
                            const std::string& base_dir) {
  LoadedPair pair;
  pair.pair_id = entry.pair_id;
  pair.kind = entry.kind;
  pair.image_t = load_pnm(data::join_path(base_dir, entry.image_t));
  pair.image_r = load_pnm(data::join_path(base_dir, entry.image_r));
  pair.width = pair.image_t.width;
  pair.height = pair.image_t.height;
  if (entry.homography) {
    pair.homography = entry.homography;
    pair.mask.assign(static_cast<std::size_t>(pair.width) * pair.height, 0);
    for (int y = 0; y < pair.height; ++y) {
      for (int x = 0; x < pair.width; ++x) {
        const auto dst = geo::warp_point(*entry.homography,
                                         {static_cast<double>(x),
                                          static_cast<double>(y)});
        if (dst && pair.image_r.in_bounds(dst->x(), dst->y())) {
          pair.mask[static_cast<std::size_t>(y) * pair.width + x] = 1;
        }
      }
    }
  }
  if (entry.pose) {
    pair.pose = entry.pose;
    pair.k_t = entry.k_t.value();
    pair.k_r = entry.k_r.value();
  }
  return pair;
}

// Lazily loads manifest entries and keeps the decoded images around.
class PairCache {
 public:
  PairCache(const data::Manifest& manifest) : manifest_(manifest) {}

  const LoadedPair& get(int index) {
    auto it = cache_.find(index);
    if (it == cache_.end()) {
      it = cache_
               .emplace(index, load_pair(manifest_.entries[index],
                                         manifest_.base_dir))
               .first;
    }
    return it->second;
  }

 private:
  const data::Manifest& manifest_;
  std::map<int, LoadedPair> cache_;
};

inline std::vector<int> entries_of_kind(const data::Manifest& manifest,
                                        const std::string& kind) {
  std::vector<int> indices;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (manifest.entries[i].kind == kind) {
      indices.push_back(static_cast<int>(i));
    }
  }
  return indices;
}

}  // namespace c2f::pipeline::internal
