// Apache License, Version 2.0, refer to LICENSE.txt
#include "sbtm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace sbtm {

namespace {

constexpr char kMagic[4] = {'S', 'B', 'T', 'M'};

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

void write_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) {
  const uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  write_u64(out, name.size());
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape) write_u32(out, static_cast<uint32_t>(d));
  for (int64_t i = 0; i < t.size(); ++i) write_f64(out, t[i]);
}

}  // namespace

void save_checkpoint(TopicModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  write_u32(out, kCheckpointVersion);

  const std::string config = model.config.to_json_string();
  write_u64(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  write_u64(out, model.vocab_hash);
  write_u64(out, static_cast<uint64_t>(model.vocab_size));
  write_u64(out, static_cast<uint64_t>(model.n_slices));

  ParamList params = model.parameters();
  auto state = model.state_tensors();
  write_u64(out, params.size() + state.size());
  for (const auto& [name, p] : params) write_tensor(out, name, p->value);
  for (const auto& [name, t] : state) write_tensor(out, name, *t);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

TopicModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));

  const uint64_t config_len = read_u64(in);
  std::string config_text(config_len, '\0');
  in.read(config_text.data(), static_cast<std::streamsize>(config_len));
  const uint64_t vocab_hash = read_u64(in);
  const int vocab_size = static_cast<int>(read_u64(in));
  const int n_slices = static_cast<int>(read_u64(in));

  const ModelConfig config = ModelConfig::from_json_string(config_text);
  TopicModel model = TopicModel::create(config, vocab_size, vocab_hash, n_slices);

  std::map<std::string, Tensor> tensors;
  const uint64_t count = read_u64(in);
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const uint32_t rank = read_u32(in);
    std::vector<int> shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(read_u32(in)));
    Tensor t(shape);
    for (int64_t j = 0; j < t.size(); ++j) t[j] = read_f64(in);
    tensors.emplace(std::move(name), std::move(t));
  }

  for (const auto& [name, p] : model.parameters()) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("load_checkpoint: missing tensor '" + name + "'");
    if (it->second.shape != p->value.shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "'");
    p->value = it->second;
  }
  for (auto& [name, t] : model.state_tensors()) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("load_checkpoint: missing tensor '" + name + "'");
    *t = it->second;
  }
  return model;
}

}  // namespace sbtm
