#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "slt/transformer.hpp"

// Checkpoint layout:
//
//   slt-checkpoint 1
//   <key> <value>            model config, then free-form metadata
//   ...
//   end-header
//   param <name> <dim>...    one line per parameter, followed by the raw
//   <bytes>                  little-endian float32 values
//
// The metadata keys are written sorted, so identical parameters give
// identical bytes.

namespace slt {

inline constexpr std::string_view kCheckpointMagic = "slt-checkpoint 1";

template <typename T>
struct Checkpoint {
  TransformerModel<T> model;
  std::map<std::string, std::string> metadata;
};

namespace detail {

inline void put_f32(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                         static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
  out.write(bytes, 4);
}

inline float get_f32(const unsigned char* b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

template <typename T>
void write_checkpoint(std::ostream& out, const TransformerModel<T>& model,
                      const std::map<std::string, std::string>& metadata = {}) {
  out << kCheckpointMagic << '\n';
  for (const auto& [k, v] : model.config().to_map()) out << k << ' ' << v << '\n';
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint metadata must be single-line and keys must not contain spaces");
    }
    out << "meta." << k << ' ' << v << '\n';
  }
  out << "end-header\n";
  for (const auto& [name, t] : model.named_parameters()) {
    out << "param " << name;
    for (auto d : t.shape()) out << ' ' << d;
    out << '\n';
    for (T v : t.data()) detail::put_f32(out, static_cast<float>(v));
  }
}

template <typename T>
void save_checkpoint(const std::string& path, const TransformerModel<T>& model,
                     const std::map<std::string, std::string>& metadata = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError(path, "cannot write");
  write_checkpoint(out, model, metadata);
  if (!out) throw PathError(path, "write failed");
}

template <typename T>
Checkpoint<T> read_checkpoint(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kCheckpointMagic) throw ParseError("not a checkpoint file", lineno);
  std::map<std::string, std::string> config_kv, meta;
  while (true) {
    ++lineno;
    if (!std::getline(in, line)) throw ParseError("unterminated header", lineno);
    if (line == "end-header") break;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw ParseError("expected '<key> <value>'", lineno);
    const std::string key = line.substr(0, sp), value = line.substr(sp + 1);
    if (key.rfind("meta.", 0) == 0) {
      meta[key.substr(5)] = value;
    } else {
      config_kv[key] = value;
    }
  }
  CounterRng rng(0);
  Checkpoint<T> ckpt{TransformerModel<T>(ModelConfig::from_map(config_kv), rng), std::move(meta)};
  for (auto& [name, t] : ckpt.model.named_parameters()) {
    ++lineno;
    if (!std::getline(in, line)) throw ParseError("missing parameter " + name, lineno);
    std::istringstream hdr(line);
    std::string tag, got;
    hdr >> tag >> got;
    if (tag != "param" || got != name) throw ParseError("expected parameter " + name + ", found '" + line + "'", lineno);
    Shape shape;
    std::size_t d = 0;
    while (hdr >> d) shape.push_back(d);
    if (shape != t.shape()) {
      throw ParseError("parameter " + name + " has shape " + shape_str(shape) + ", expected " + shape_str(t.shape()),
                       lineno);
    }
    std::vector<unsigned char> bytes(t.size() * 4);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw ParseError("truncated parameter " + name, lineno);
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<T>(detail::get_f32(bytes.data() + 4 * i));
  }
  return ckpt;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError(path);
  return read_checkpoint<T>(in);
}

}  // namespace slt
