#pragma once

// Self-describing binary tensor bundles:
//   "AXBT" | u32 container version | u64 header length | JSON header | float64 data
// The JSON header names the bundle kind, its schema version, free-form
// metadata, and the name and shape of every tensor in data order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "axbert/alignment.hpp"
#include "axbert/encoder.hpp"
#include "axbert/errors.hpp"
#include "axbert/numerics.hpp"

namespace axbert {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr int kEncoderCheckpointVersion = 1;
inline constexpr int kTranslatorCheckpointVersion = 1;

struct TensorBundle {
  std::string kind;
  int version = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw DataError("bundle '" + kind + "' has no tensor '" + name + "'");
  }
};

inline void write_bundle(const std::string& path, const TensorBundle& b) {
  nlohmann::json header;
  header["kind"] = b.kind;
  header["version"] = b.version;
  header["meta"] = b.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : b.tensors) header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write("AXBT", 4);
  const std::uint32_t cv = kContainerVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&cv), sizeof cv);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : b.tensors)
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

inline TensorBundle read_bundle(const std::string& path, const std::string& expected_kind, int max_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[4];
  std::uint32_t cv = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&cv), sizeof cv);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, "AXBT", 4) != 0) throw DataError(path + ": not a checkpoint file");
  if (cv != kContainerVersion) throw DataError(path + ": unsupported container version " + std::to_string(cv));
  if (len > (1u << 30)) throw DataError(path + ": header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path + ": truncated header");

  TensorBundle b;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    b.kind = header.at("kind").get<std::string>();
    b.version = header.at("version").get<int>();
    b.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad checkpoint header: " + e.what());
  }
  if (b.kind != expected_kind) throw DataError(path + ": expected a '" + expected_kind + "' checkpoint, found '" + b.kind + "'");
  if (b.version < 1 || b.version > max_version)
    throw DataError(path + ": unsupported " + b.kind + " version " + std::to_string(b.version));
  for (const auto& t : header.at("tensors")) {
    Matrix m(t.at("rows").get<Index>(), t.at("cols").get<Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw DataError(path + ": truncated tensor data");
    b.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return b;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"layers", c.layers}, {"heads", c.heads}, {"hidden", c.hidden},
          {"ffn", c.ffn},               {"max_seq", c.max_seq}, {"dropout", c.dropout}, {"seed", c.seed}};
}

// Missing keys keep their defaults.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.hidden = j.value("hidden", c.hidden);
  c.ffn = j.value("ffn", c.ffn);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline void save_encoder(const EncoderState& s, const std::string& path) {
  TensorBundle b{"encoder", kEncoderCheckpointVersion, {{"config", to_json(s.config)}}, {}};
  for (std::size_t i = 0; i < s.params.size(); ++i) b.tensors.emplace_back(param::name(i, s.config.layers), s.params[i]);
  write_bundle(path, b);
}

inline EncoderState load_encoder(const std::string& path) {
  TensorBundle b = read_bundle(path, "encoder", kEncoderCheckpointVersion);
  EncoderState s;
  s.config = model_config_from_json(b.meta.at("config"));
  s.config.validate();
  if (b.tensors.size() != param::count(s.config.layers)) throw DataError(path + ": wrong number of encoder tensors");
  const EncoderState shape = EncoderState::initialize(s.config);
  for (std::size_t i = 0; i < b.tensors.size(); ++i) {
    auto& [name, m] = b.tensors[i];
    if (name != param::name(i, s.config.layers) || m.rows() != shape.params[i].rows() || m.cols() != shape.params[i].cols())
      throw DataError(path + ": tensor '" + name + "' does not match the configuration");
    s.params.push_back(std::move(m));
  }
  return s;
}

inline void save_translator(const TranslatorMatrix& t, const std::string& path) {
  write_bundle(path, TensorBundle{"translator", kTranslatorCheckpointVersion, {{"seq_len", t.seq_len()}}, {{"M_F", t.weights}}});
}

inline TranslatorMatrix load_translator(const std::string& path) {
  TensorBundle b = read_bundle(path, "translator", kTranslatorCheckpointVersion);
  TranslatorMatrix t;
  t.weights = b.tensor("M_F");
  if (t.weights.rows() != t.weights.cols()) throw DataError(path + ": translator must be square");
  return t;
}

}  // namespace axbert
