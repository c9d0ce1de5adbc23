#include <cstring>
#include <fstream>

#include <json.hpp>

#include "c2f/pipeline.hpp"

namespace c2f::pipeline {

namespace {

constexpr char kMagic[8] = {'C', '2', 'F', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_i64(std::ostream& out, std::int64_t v) {
  unsigned char b[8];
  auto u = static_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) b[i] = (u >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::int64_t read_i64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<std::int64_t>(u);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const std::uint32_t len = read_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}

void write_doubles(std::ostream& out, std::span<const double> values) {
  // Raw IEEE-754 little-endian payload: the round trip is bitwise exact.
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in, std::size_t count) {
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  return values;
}

void write_blob(std::ostream& out, const std::string& name,
                const Shape& shape, std::span<const double> values) {
  write_string(out, name);
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) write_u32(out, static_cast<std::uint32_t>(d));
  write_u32(out, static_cast<std::uint32_t>(values.size()));
  write_doubles(out, values);
}

}  // namespace

std::string model_config_to_json(const net::ModelConfig& config) {
  nlohmann::ordered_json j;
  j["extractor"] = {{"channels", config.extractor.channels},
                    {"coarse_side", config.extractor.coarse_side}};
  j["detector"] = {{"hidden", config.detector.hidden}};
  j["matcher"] = {{"conv1", config.matcher.conv1},
                  {"conv2", config.matcher.conv2},
                  {"temperature", config.matcher.temperature}};
  j["windows"] = {{"target_side", config.windows.target_side},
                  {"refine_side", config.windows.refine_side},
                  {"coarse_side", config.windows.coarse_side}};
  return j.dump();
}

net::ModelConfig model_config_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  net::ModelConfig config;
  config.extractor.channels = j.at("extractor").at("channels").get<std::vector<int>>();
  config.extractor.coarse_side = j.at("extractor").at("coarse_side").get<int>();
  config.detector.hidden = j.at("detector").at("hidden").get<std::vector<int>>();
  config.matcher.conv1 = j.at("matcher").at("conv1").get<int>();
  config.matcher.conv2 = j.at("matcher").at("conv2").get<int>();
  config.matcher.temperature = j.at("matcher").at("temperature").get<double>();
  config.windows.target_side = j.at("windows").at("target_side").get<int>();
  config.windows.refine_side = j.at("windows").at("refine_side").get<int>();
  config.windows.coarse_side = j.at("windows").at("coarse_side").get<int>();
  config.validate();
  return config;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, checkpoint.version);
  write_string(out, checkpoint.lineage);
  write_i64(out, checkpoint.train_step);
  write_string(out, checkpoint.config_json);
  write_string(out, model_config_to_json(checkpoint.model_config));

  write_u32(out, static_cast<std::uint32_t>(checkpoint.params.size()));
  for (const auto& [name, tensor] : checkpoint.params) {
    write_blob(out, name, tensor.shape(), tensor.values());
  }

  write_u32(out, static_cast<std::uint32_t>(checkpoint.adam.m.size()));
  for (const auto& [name, m] : checkpoint.adam.m) {
    const auto& v = checkpoint.adam.v.at(name);
    write_string(out, name);
    write_u32(out, static_cast<std::uint32_t>(m.size()));
    write_doubles(out, m);
    write_doubles(out, v);
  }
  write_i64(out, checkpoint.adam.step);
  write_u32(out, static_cast<std::uint32_t>(checkpoint.adam.rejected_steps));
  write_string(out, checkpoint.rng_state);
  if (!out) throw std::runtime_error("save_checkpoint: write failed " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: " + path +
                             " is not a checkpoint file");
  }
  Checkpoint ckpt;
  ckpt.version = read_u32(in);
  if (ckpt.version != 1) {
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(ckpt.version));
  }
  ckpt.lineage = read_string(in);
  ckpt.train_step = read_i64(in);
  ckpt.config_json = read_string(in);
  ckpt.model_config = model_config_from_json(read_string(in));

  const std::uint32_t param_count = read_u32(in);
  for (std::uint32_t i = 0; i < param_count; ++i) {
    const std::string name = read_string(in);
    const std::uint32_t ndim = read_u32(in);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(in));
    const std::uint32_t count = read_u32(in);
    Tensor t = Tensor::from_values(shape, read_doubles(in, count));
    t.set_requires_grad(true);
    ckpt.params.emplace(name, std::move(t));
  }

  const std::uint32_t adam_count = read_u32(in);
  for (std::uint32_t i = 0; i < adam_count; ++i) {
    const std::string name = read_string(in);
    const std::uint32_t count = read_u32(in);
    ckpt.adam.m[name] = read_doubles(in, count);
    ckpt.adam.v[name] = read_doubles(in, count);
  }
  ckpt.adam.step = read_i64(in);
  ckpt.adam.rejected_steps = static_cast<int>(read_u32(in));
  ckpt.rng_state = read_string(in);
  if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return ckpt;
}

net::Model model_from_checkpoint(const Checkpoint& checkpoint) {
  Rng scratch(0);
  net::Model model(checkpoint.model_config, scratch);
  auto& params = model.parameters();
  check(params.size() == checkpoint.params.size(),
        "model_from_checkpoint: parameter count mismatch");
  for (auto& [name, tensor] : params) {
    auto it = checkpoint.params.find(name);
    check(it != checkpoint.params.end(),
          "model_from_checkpoint: missing parameter " + name);
    check(it->second.shape() == tensor.shape(),
          "model_from_checkpoint: shape mismatch for " + name);
    // Deep copy: training must never mutate the caller's checkpoint buffers.
    Tensor copy = Tensor::from_values(
        it->second.shape(), std::vector<double>(it->second.values().begin(),
                                                it->second.values().end()));
    copy.set_requires_grad(true);
    tensor = std::move(copy);
  }
  return model;
}

Checkpoint checkpoint_from_model(const net::Model& model) {
  Checkpoint ckpt;
  ckpt.model_config = model.config();
  for (const auto& [name, tensor] : model.parameters()) {
    Tensor copy = Tensor::from_values(
        tensor.shape(),
        std::vector<double>(tensor.values().begin(), tensor.values().end()));
    copy.set_requires_grad(true);
    ckpt.params.emplace(name, std::move(copy));
  }
  return ckpt;
}

}  // namespace c2f::pipeline
