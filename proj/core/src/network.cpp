#include "c2f/network.hpp"

#include <algorithm>
#include <cmath>

#include "c2f/ops.hpp"

namespace c2f::net {

namespace {

std::vector<double> lecun_uniform(Rng& rng, std::size_t count, int fan_in) {
  const double limit = std::sqrt(3.0 / fan_in);
  std::vector<double> values(count);
  for (double& v : values) v = rng.uniform(-limit, limit);
  return values;
}

Tensor make_param(Rng& rng, Shape shape, int fan_in) {
  Tensor t = Tensor::from_values(shape,
                                 lecun_uniform(rng, shape_numel(shape), fan_in));
  t.set_requires_grad(true);
  return t;
}

Tensor make_zero_param(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Tensor const2(double x, double y) {
  return Tensor::from_values({2}, {x, y});
}

// (px + 0.5) / stride - 0.5 per component.
Tensor to_feature_coords(const Tensor& px, double stride_x, double stride_y) {
  return ops::add_scalar(
      ops::mul(ops::add_scalar(px, 0.5), const2(1.0 / stride_x, 1.0 / stride_y)),
      -0.5);
}

}  // namespace

void ModelConfig::validate() const {
  check(extractor.channels.size() >= 3,
        "model config: extractor needs at least 3 blocks for the three taps");
  for (int c : extractor.channels) {
    check(c >= 1, "model config: extractor channels must be positive");
  }
  check(extractor.coarse_side >= 2, "model config: coarse side must be >= 2");
  check(!detector.hidden.empty(), "model config: detector needs hidden layers");
  check(matcher.conv1 >= 1 && matcher.conv2 >= 1,
        "model config: matcher conv channels must be positive");
  check(windows.target_side >= 1 && windows.target_side % 2 == 1,
        "model config: target window must be odd");
  check(windows.refine_side >= 1 && windows.refine_side % 2 == 1,
        "model config: refine window must be odd");
  check(windows.coarse_side == extractor.coarse_side,
        "model config: coarse window " + std::to_string(windows.coarse_side) +
            " must equal the coarse pyramid side " +
            std::to_string(extractor.coarse_side));
}

Model::Model(ModelConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const auto& ex = config_.extractor;
  int in_ch = 3;
  for (std::size_t b = 0; b < ex.channels.size(); ++b) {
    const int out_ch = ex.channels[b];
    const std::string name = "extractor.block" + std::to_string(b);
    params_[name + ".weight"] =
        make_param(rng, {out_ch, in_ch, 3, 3}, in_ch * 9);
    params_[name + ".bias"] = make_zero_param({out_ch});
    in_ch = out_ch;
  }

  in_ch = 3;
  std::vector<int> det = config_.detector.hidden;
  det.push_back(1);
  for (std::size_t l = 0; l < det.size(); ++l) {
    const std::string name = "detector.conv" + std::to_string(l);
    params_[name + ".weight"] = make_param(rng, {det[l], in_ch, 3, 3}, in_ch * 9);
    // Zero bias keeps the initial confidence map near 0.5 through the sigmoid.
    params_[name + ".bias"] = make_zero_param({det[l]});
    in_ch = det[l];
  }

  const int wt2 = config_.windows.target_side * config_.windows.target_side;
  const auto add_head = [&](const std::string& head, int side) {
    const int c1 = config_.matcher.conv1, c2 = config_.matcher.conv2;
    params_[head + ".conv0.weight"] = make_param(rng, {c1, wt2, 3, 3}, wt2 * 9);
    params_[head + ".conv0.bias"] = make_zero_param({c1});
    params_[head + ".conv1.weight"] = make_param(rng, {c2, c1, 3, 3}, c1 * 9);
    params_[head + ".conv1.bias"] = make_zero_param({c2});
    const int fc_in = c2 * side * side;
    params_[head + ".fc.weight"] = make_param(rng, {fc_in, 2}, fc_in);
    params_[head + ".fc.bias"] = make_zero_param({2});
  };
  add_head("matcher.coarse", config_.windows.coarse_side);
  // The median and fine levels share one refinement head: the similarity
  // tensor has the same shape at both levels.
  add_head("matcher.refine", config_.windows.refine_side);
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  check(it != params_.end(), "model: unknown parameter " + name);
  return it->second;
}

void Model::zero_grad() {
  for (auto& [name, tensor] : params_) tensor.zero_grad();
}

Tensor Model::conv_block(const Tensor& x, const std::string& name,
                         bool do_pool) const {
  Tensor y = ops::relu(
      ops::conv2d(x, param(name + ".weight"), param(name + ".bias"), 1, 1));
  if (do_pool) y = ops::pool(y, ops::PoolKind::kMax, 2);
  return y;
}

FeaturePyramid Model::extract_features(const Tensor& image) const {
  check(image.shape().size() == 3 && image.shape()[0] == 3,
        "extract_features: image must be [3,H,W], got " +
            shape_str(image.shape()));
  const int h = image.shape()[1], w = image.shape()[2];
  check(h % 32 == 0 && w % 32 == 0,
        "extract_features: image size " + std::to_string(w) + "x" +
            std::to_string(h) + " must be divisible by 32");
  const int side = config_.extractor.coarse_side;
  check(h / 8 >= side && w / 8 >= side,
        "extract_features: image " + std::to_string(w) + "x" +
            std::to_string(h) + " too small for coarse side " +
            std::to_string(side) + " (needs size/8 >= side)");

  FeaturePyramid pyr;
  pyr.image_width = w;
  pyr.image_height = h;

  Tensor x = ops::reshape(image, {1, 3, h, w});
  int cur_h = h, cur_w = w;
  const std::size_t blocks = config_.extractor.channels.size();
  for (std::size_t b = 0; b < blocks; ++b) {
    // The first three blocks pin the fine (1/2) and median (1/8) taps; the
    // rest keep pooling only while the map stays at least coarse_side wide.
    const bool do_pool =
        b < 3 || (cur_h / 2 >= side && cur_w / 2 >= side);
    x = conv_block(x, "extractor.block" + std::to_string(b), do_pool);
    if (do_pool) {
      cur_h /= 2;
      cur_w /= 2;
    }
    const int ch = config_.extractor.channels[b];
    if (b == 0) pyr.fine = ops::reshape(x, {ch, cur_h, cur_w});
    if (b == 2) pyr.median = ops::reshape(x, {ch, cur_h, cur_w});
    if (b + 1 == blocks) {
      Tensor coarse = ops::adaptive_avg_pool(x, side, side);
      pyr.coarse = ops::reshape(coarse, {ch, side, side});
    }
  }
  return pyr;
}

Tensor Model::detect(const Tensor& image) const {
  check(image.shape().size() == 3 && image.shape()[0] == 3,
        "detect: image must be [3,H,W], got " + shape_str(image.shape()));
  const int h = image.shape()[1], w = image.shape()[2];
  Tensor x = ops::reshape(image, {1, 3, h, w});
  const std::size_t layers = config_.detector.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string name = "detector.conv" + std::to_string(l);
    x = ops::conv2d(x, param(name + ".weight"), param(name + ".bias"), 1, 1);
    if (l + 1 < layers) x = ops::relu(x);
  }
  return ops::reshape(ops::sigmoid(x), {1, h, w});
}

Tensor crop_patch(const Tensor& map, const Tensor& center, int side) {
  check(map.shape().size() == 3, "crop_patch: map must be [C,h,w]");
  check(center.shape() == Shape{2}, "crop_patch: center must be [2]");
  check(side >= 1 && side % 2 == 1, "crop_patch: side must be odd");
  const int ch = map.shape()[0];
  const int half = (side - 1) / 2;
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(side) * side * 2);
  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      grid.push_back(px - half);
      grid.push_back(py - half);
    }
  }
  Tensor offsets = Tensor::from_values({side * side, 2}, std::move(grid));
  Tensor points = ops::add_rowvec(offsets, center);
  Tensor sampled = ops::bilinear_sample(map, points);  // [side^2, C]
  return ops::reshape(ops::transpose(sampled), {ch, side, side});
}

Model::HeadOutput Model::match_layer(const Tensor& patch_t,
                                     const Tensor& region_r,
                                     const std::string& head) const {
  const int ch = patch_t.shape()[0];
  check(region_r.shape()[0] == ch,
        "match_layer: channel mismatch between patch and region");
  const int wt = patch_t.shape()[1];
  const int s = region_r.shape()[1];

  // Cosine similarity with a fixed temperature keeps the softmax informative
  // at any activation scale (raw dot products collapse it to uniform when
  // the features are small).
  Tensor pt = ops::transpose(
      ops::l2_normalize_cols(ops::reshape(patch_t, {ch, wt * wt})));
  Tensor pr = ops::l2_normalize_cols(ops::reshape(region_r, {ch, s * s}));
  Tensor sim = ops::scale(ops::matmul(pt, pr), config_.matcher.temperature);
  Tensor smax = ops::softmax(sim, 1);

  Tensor x = ops::reshape(smax, {1, wt * wt, s, s});
  x = ops::relu(ops::conv2d(x, param(head + ".conv0.weight"),
                            param(head + ".conv0.bias"), 1, 1));
  x = ops::relu(ops::conv2d(x, param(head + ".conv1.weight"),
                            param(head + ".conv1.bias"), 1, 1));
  Tensor flat = ops::reshape(x, {config_.matcher.conv2 * s * s});
  Tensor uv = ops::sigmoid(
      ops::linear(flat, param(head + ".fc.weight"), param(head + ".fc.bias")));

  HeadOutput out;
  out.uv = uv;
  out.sim = smax;
  out.peak = *std::max_element(smax.values().begin(), smax.values().end());
  return out;
}

MatchTrace Model::match(const Eigen::Vector2d& x_t,
                        const FeaturePyramid& pyr_t,
                        const FeaturePyramid& pyr_r, int levels) const {
  MatchTrace trace = match_from(const2(x_t.x(), x_t.y()), pyr_t, pyr_r, levels);
  trace.x_t = x_t;
  return trace;
}

MatchTrace Model::match_from(const Tensor& x_t, const FeaturePyramid& pyr_t,
                             const FeaturePyramid& pyr_r, int levels) const {
  check(levels >= 1 && levels <= 3, "match: levels must be 1, 2 or 3");
  check(pyr_t.image_width > 0 && pyr_r.image_width > 0,
        "match: feature pyramids not initialized");
  const double w = pyr_r.image_width, h = pyr_r.image_height;
  const int side = config_.extractor.coarse_side;
  const int wt = config_.windows.target_side;
  const int wr = config_.windows.refine_side;

  MatchTrace trace;
  trace.x_t = {x_t.at(0), x_t.at(1)};
  trace.levels = levels;

  // Coarse: target window against the whole coarse reference map.
  const double stride_cx = static_cast<double>(pyr_t.image_width) / side;
  const double stride_cy = static_cast<double>(pyr_t.image_height) / side;
  Tensor patch_t_c = crop_patch(
      pyr_t.coarse, to_feature_coords(x_t, stride_cx, stride_cy), wt);
  HeadOutput coarse = match_layer(patch_t_c, pyr_r.coarse, "matcher.coarse");
  // (0,0) is the upper-left corner of the reference image.
  Tensor x_c = ops::mul(coarse.uv, const2(w - 1.0, h - 1.0));
  trace.comp_coarse = x_c;
  trace.sim_coarse = coarse.sim;
  trace.similarity_peaks[0] = coarse.peak;
  Tensor current = x_c;

  const std::vector<double> lo{0.0, 0.0};
  const std::vector<double> hi{w - 1.0, h - 1.0};
  const auto refine = [&](const Tensor& map_t, const Tensor& map_r,
                          double stride, Tensor& comp_out, Tensor& sim_out,
                          double& peak_out) {
    Tensor patch_t = crop_patch(
        map_t, to_feature_coords(x_t, stride, stride), wt);
    Tensor region_r = crop_patch(
        map_r, to_feature_coords(current, stride, stride), wr);
    HeadOutput out = match_layer(patch_t, region_r, "matcher.refine");
    // [0,1]^2 -> signed offset within the refinement window, in pixels.
    Tensor offset = ops::mul(ops::add_scalar(out.uv, -0.5),
                             const2((wr - 1.0) * stride, (wr - 1.0) * stride));
    Tensor raw = ops::add(current, offset);
    Tensor clamped = ops::clamp_box(raw, lo, hi);
    if (clamped.at(0) != raw.at(0) || clamped.at(1) != raw.at(1)) {
      trace.clamped = true;
    }
    comp_out = ops::sub(clamped, current);  // effective offset, sums exactly
    sim_out = out.sim;
    peak_out = out.peak;
    current = clamped;
  };

  if (levels >= 2) {
    refine(pyr_t.median, pyr_r.median, 8.0, trace.comp_median,
           trace.sim_median, trace.similarity_peaks[1]);
  }
  if (levels >= 3) {
    refine(pyr_t.fine, pyr_r.fine, 2.0, trace.comp_fine, trace.sim_fine,
           trace.similarity_peaks[2]);
  }
  trace.x_r = current;
  return trace;
}

MatchResult MatchTrace::to_result() const {
  MatchResult r;
  r.x_t = x_t;
  r.x_r = {x_r.at(0), x_r.at(1)};
  r.comp_coarse = {comp_coarse.at(0), comp_coarse.at(1)};
  if (comp_median.defined()) {
    r.comp_median = {comp_median.at(0), comp_median.at(1)};
  }
  if (comp_fine.defined()) {
    r.comp_fine = {comp_fine.at(0), comp_fine.at(1)};
  }
  r.similarity_peaks = similarity_peaks;
  r.clamped = clamped;
  r.levels = levels;
  return r;
}

std::vector<Keypoint> select_keypoints(const Tensor& confidence_map,
                                       double threshold, int nms_radius,
                                       int max_k) {
  check(confidence_map.shape().size() == 3 && confidence_map.shape()[0] == 1,
        "select_keypoints: confidence map must be [1,H,W], got " +
            shape_str(confidence_map.shape()));
  check(threshold > 0.0 && threshold < 1.0,
        "select_keypoints: threshold must lie in (0,1)");
  check(nms_radius >= 1, "select_keypoints: nms_radius must be >= 1");
  check(max_k >= 1, "select_keypoints: max_k must be >= 1");
  const int h = confidence_map.shape()[1], w = confidence_map.shape()[2];
  const auto v = confidence_map.values();

  struct Candidate {
    double confidence;
    int index;  // row-major
  };
  std::vector<Candidate> kept;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double c = v[y * w + x];
      if (c <= threshold) continue;
      bool suppressed = false;
      for (int dy = -nms_radius; dy <= nms_radius && !suppressed; ++dy) {
        const int ny = y + dy;
        if (ny < 0 || ny >= h) continue;
        for (int dx = -nms_radius; dx <= nms_radius; ++dx) {
          const int nx = x + dx;
          if (nx < 0 || nx >= w || (dx == 0 && dy == 0)) continue;
          const double q = v[ny * w + nx];
          // Equal-valued neighbors tie-break row-major: the earlier wins.
          if (q > c || (q == c && ny * w + nx < y * w + x)) {
            suppressed = true;
            break;
          }
        }
      }
      if (!suppressed) kept.push_back({c, y * w + x});
    }
  }
  std::sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.index < b.index;
  });
  if (static_cast<int>(kept.size()) > max_k) kept.resize(max_k);

  std::vector<Keypoint> result;
  result.reserve(kept.size());
  for (const Candidate& c : kept) {
    result.push_back({{static_cast<double>(c.index % w),
                       static_cast<double>(c.index / w)},
                      c.confidence});
  }
  return result;
}

}  // namespace c2f::net
