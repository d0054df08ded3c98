#pragma once

// Checkpoint file layout (version 1), all integers little-endian:
//
//   bytes 0..7    magic "MMLPCKPT"
//   bytes 8..11   u32 format version (1)
//   bytes 12..19  u64 header length H
//   next H bytes  UTF-8 JSON header
//   remainder     IEEE-754 binary64 values, little-endian, concatenated in
//                 the order of header["arrays"]
//
// The header carries "version", "tag", "schema_hash", "architecture",
// free-form "metadata", and "arrays": [{"name", "shape", "offset", "count"}]
// where offset/count are in doubles from the start of the payload.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/mlp.hpp"

namespace maskmlp {

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'M', 'L', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::string tag;
  std::string schema_hash;
  nlohmann::json architecture = nlohmann::json::object();
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw ParseError("checkpoint has no array named '" + name + "'");
  }
  bool has_array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }
};

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = "maskmlp-checkpoint";
  header["version"] = kCheckpointVersion;
  header["tag"] = ckpt.tag;
  header["schema_hash"] = ckpt.schema_hash;
  header["architecture"] = ckpt.architecture;
  header["metadata"] = ckpt.metadata;
  header["arrays"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    std::size_t count = 1;
    for (auto d : a.shape) count *= d;
    if (count != a.data.size()) throw ShapeError("checkpoint array '" + a.name + "' shape/data mismatch");
    header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", count}});
    offset += count;
  }
  const std::string h = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, h.size());
  out += h;
  out.reserve(out.size() + offset * 8);
  for (const auto& a : ckpt.arrays)
    for (double v : a.data) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 20 || std::memcmp(p, kCheckpointMagic.data(), 8) != 0) {
    throw ParseError("not a maskmlp checkpoint (bad magic)");
  }
  const auto version = detail::get_le<std::uint32_t>(p + 8);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto hlen = detail::get_le<std::uint64_t>(p + 12);
  if (20 + hlen > bytes.size()) throw ParseError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(20, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint ckpt;
  ckpt.tag = header.at("tag").get<std::string>();
  ckpt.schema_hash = header.at("schema_hash").get<std::string>();
  ckpt.architecture = header.at("architecture");
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  const std::size_t payload = 20 + hlen;
  for (const auto& a : header.at("arrays")) {
    NamedArray arr;
    arr.name = a.at("name").get<std::string>();
    arr.shape = a.at("shape").get<std::vector<std::size_t>>();
    const auto offset = a.at("offset").get<std::size_t>();
    const auto count = a.at("count").get<std::size_t>();
    if (payload + (offset + count) * 8 > bytes.size()) {
      throw ParseError("checkpoint array '" + arr.name + "' runs past end of file");
    }
    arr.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      arr.data[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(p + payload + (offset + i) * 8));
    }
    ckpt.arrays.push_back(std::move(arr));
  }
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

/// Appends the model's parameters and architecture to a checkpoint.
inline void store_model(Checkpoint& ckpt, const MlpModel& model, const std::string& prefix = "") {
  nlohmann::json arch;
  arch["input_dim"] = model.input_dim();
  arch["hidden_size"] = model.hidden_size();
  arch["depth"] = model.depth();
  arch["activations"] = nlohmann::json::array();
  for (const auto& l : model.layers) arch["activations"].push_back(to_string(l.activation));
  arch["head"] = model.head.has_value();
  if (prefix.empty()) {
    ckpt.architecture = arch;
  } else {
    ckpt.architecture[prefix] = arch;
  }
  auto push_layer = [&](const std::string& name, const Layer& l) {
    ckpt.arrays.push_back({prefix + name + ".weight", {l.weight.rows(), l.weight.cols()},
                           {l.weight.values().begin(), l.weight.values().end()}});
    ckpt.arrays.push_back({prefix + name + ".bias", {l.bias.size()}, l.bias});
  };
  for (std::size_t i = 0; i < model.layers.size(); ++i) push_layer("encoder." + std::to_string(i), model.layers[i]);
  if (model.head) push_layer("head", *model.head);
}

inline MlpModel restore_model(const Checkpoint& ckpt, const std::string& prefix = "") {
  const auto& arch = prefix.empty() ? ckpt.architecture : ckpt.architecture.at(prefix);
  MlpModel m;
  m.declared_input_dim = arch.at("input_dim").get<std::size_t>();
  const auto acts = arch.at("activations").get<std::vector<std::string>>();
  auto load_layer = [&](const std::string& name, Activation act) {
    const auto& w = ckpt.array(prefix + name + ".weight");
    const auto& b = ckpt.array(prefix + name + ".bias");
    if (w.shape.size() != 2 || b.shape.size() != 1 || b.shape[0] != w.shape[1]) {
      throw ParseError("checkpoint layer '" + name + "' has inconsistent shapes");
    }
    return Layer{Matrix(w.shape[0], w.shape[1], w.data), b.data, act};
  };
  for (std::size_t i = 0; i < acts.size(); ++i) {
    m.layers.push_back(load_layer("encoder." + std::to_string(i), activation_from_string(acts[i])));
    if (i > 0 && m.layers[i].in_dim() != m.layers[i - 1].out_dim()) {
      throw ParseError("checkpoint layers do not chain at layer " + std::to_string(i));
    }
  }
  if (arch.at("head").get<bool>()) m.head = load_layer("head", Activation::sigmoid);
  return m;
}

}  // namespace maskmlp
