#pragma once

#include "bbdrec/config.hpp"
#include "bbdrec/trainer.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace bbdrec {

// Checkpoint file layout (all integers little-endian):
//
//   8 bytes   magic "BBDRCKPT"
//   u32       format version (1)
//   u64       header length H
//   H bytes   UTF-8 JSON header: config, shape, item_names, epoch,
//             validation, adam_steps, n_params
//   n_params  float64  parameters (flat, in layout order)
//   n_params  float64  AdamW first moment
//   n_params  float64  AdamW second moment
//
// Values are stored as raw IEEE-754 bits so a round trip is bit-exact.

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr char kMagic[8] = {'B', 'B', 'D', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("checkpoint truncated");
  return v;
}

inline void put_vector(std::ostream& out, const Vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline Vector<double> get_vector(std::istream& in, Index n) {
  Vector<double> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw CheckpointError("checkpoint truncated");
  }
  return v;
}

inline nlohmann::json shape_json(const ModelShape& s) {
  return {{"n_items", s.n_items}, {"dim", s.dim},         {"max_len", s.max_len},
          {"ffn_dim", s.ffn_dim}, {"time_dim", s.time_dim}, {"hidden", s.hidden},
          {"steps", s.steps},     {"dropout", s.dropout},   {"encoder", to_string(s.encoder)},
          {"conditional", s.conditional}, {"tie_embeddings", s.tie_embeddings}};
}

inline ModelShape shape_from_json(const nlohmann::json& j) {
  ModelShape s;
  s.n_items = j.at("n_items").get<Index>();
  s.dim = j.at("dim").get<Index>();
  s.max_len = j.at("max_len").get<Index>();
  s.ffn_dim = j.at("ffn_dim").get<Index>();
  s.time_dim = j.at("time_dim").get<Index>();
  s.hidden = j.at("hidden").get<Index>();
  s.steps = j.at("steps").get<int>();
  s.dropout = j.at("dropout").get<double>();
  s.encoder = parse_encoder_mode(j.at("encoder").get<std::string>());
  s.conditional = j.at("conditional").get<bool>();
  s.tie_embeddings = j.at("tie_embeddings").get<bool>();
  return s;
}

}  // namespace detail

inline void save_checkpoint(const ModelCheckpoint& c, std::ostream& out) {
  const Index n = c.params.size();
  if (c.adam_m.size() != n || c.adam_v.size() != n) throw CheckpointError("optimizer moments do not match parameters");
  // the variant preset is already folded into c.config; loading does not re-apply it
  nlohmann::json header{{"config", to_json(c.config)},
                        {"shape", detail::shape_json(c.shape)},
                        {"item_names", c.item_names},
                        {"epoch", c.epoch},
                        {"validation", c.validation},
                        {"adam_steps", c.adam_steps},
                        {"n_params", n}};
  const std::string text = header.dump();
  out.write(detail::kMagic, sizeof(detail::kMagic));
  detail::put<std::uint32_t>(out, detail::kVersion);
  detail::put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::put_vector(out, c.params);
  detail::put_vector(out, c.adam_m);
  detail::put_vector(out, c.adam_v);
  if (!out) throw CheckpointError("failed writing checkpoint");
}

inline ModelCheckpoint load_checkpoint(std::istream& in) {
  char magic[sizeof(detail::kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, detail::kMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = detail::get<std::uint32_t>(in);
  if (version != detail::kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto len = detail::get<std::uint64_t>(in);
  if (len > (std::uint64_t{1} << 32)) throw CheckpointError("checkpoint header too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("checkpoint truncated");

  ModelCheckpoint c;
  try {
    const auto header = nlohmann::json::parse(text);
    c.config = parse_config(header.at("config"), false);
    c.shape = detail::shape_from_json(header.at("shape"));
    c.item_names = header.at("item_names").get<std::vector<std::string>>();
    c.epoch = header.at("epoch").get<int>();
    c.validation = header.at("validation").get<std::vector<double>>();
    c.adam_steps = header.at("adam_steps").get<std::uint64_t>();
    const auto n = header.at("n_params").get<Index>();
    c.params = detail::get_vector(in, n);
    c.adam_m = detail::get_vector(in, n);
    c.adam_v = detail::get_vector(in, n);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const BasicModel<double> probe(c.shape);
  if (probe.layout().total() != c.params.size()) throw CheckpointError("checkpoint parameter count does not match shape");
  return c;
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  save_checkpoint(c, out);
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

}  // namespace bbdrec
