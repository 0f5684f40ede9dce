#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "copynext/transducer.hpp"

namespace copynext {

/// Versioned binary checkpoint. Layout (all integers little-endian):
///   magic "CPNX", u32 version,
///   u32 J, u32 D, u32 E, u32 |L|, u8 scheme, u64 seed,
///   u32 label count + length-prefixed label strings,
///   u32 vocab count + length-prefixed vocab strings (0 when ingesting vectors),
///   u32 array count, then per array: length-prefixed name, u32 rows,
///   u32 cols, rows*cols f64 values in column-major order.
inline constexpr uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace detail {

inline void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ConfigError("checkpoint truncated");
  return v;
}
inline uint64_t get_u64(std::istream& in) {
  uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ConfigError("checkpoint truncated");
  return v;
}
inline std::string get_str(std::istream& in) {
  uint32_t len = get_u32(in);
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len)) throw ConfigError("checkpoint truncated");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const TransducerParams<double>& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out.write("CPNX", 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<uint32_t>(p.layers));
  detail::put_u32(out, static_cast<uint32_t>(p.hidden));
  detail::put_u32(out, static_cast<uint32_t>(p.input_dim));
  detail::put_u32(out, static_cast<uint32_t>(p.labels.size()));
  out.put(static_cast<char>(p.scheme));
  detail::put_u64(out, p.seed);
  detail::put_u32(out, static_cast<uint32_t>(p.labels.size()));
  for (const auto& name : p.labels.names()) detail::put_str(out, name);
  detail::put_u32(out, static_cast<uint32_t>(p.vocab.size()));
  for (const auto& name : p.vocab) detail::put_str(out, name);

  uint32_t count = 0;
  p.visit_arrays([&](const std::string&, const auto&) { ++count; });
  detail::put_u32(out, count);
  p.visit_arrays([&](const std::string& name, const auto& arr) {
    detail::put_str(out, name);
    detail::put_u32(out, static_cast<uint32_t>(arr.rows()));
    detail::put_u32(out, static_cast<uint32_t>(arr.cols()));
    out.write(reinterpret_cast<const char*>(arr.data()),
              static_cast<std::streamsize>(sizeof(double) * arr.size()));
  });
  if (!out) throw ConfigError("write failure on checkpoint: " + path);
}

inline TransducerParams<double> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "CPNX", 4) != 0)
    throw ConfigError(path + ": not a checkpoint file");
  const uint32_t version = detail::get_u32(in);
  if (version != kCheckpointVersion)
    throw ConfigError(path + ": unsupported checkpoint version " + std::to_string(version));
  const int layers = static_cast<int>(detail::get_u32(in));
  const int hidden = static_cast<int>(detail::get_u32(in));
  const int input_dim = static_cast<int>(detail::get_u32(in));
  const int num_labels = static_cast<int>(detail::get_u32(in));
  int scheme_byte = in.get();
  if (scheme_byte < 0 || scheme_byte > 2) throw ConfigError(path + ": bad scheme byte");
  const Scheme scheme = static_cast<Scheme>(scheme_byte);
  const uint64_t seed = detail::get_u64(in);
  const uint32_t label_count = detail::get_u32(in);
  if (static_cast<int>(label_count) != num_labels)
    throw ConfigError(path + ": label count mismatch in manifest");
  std::vector<std::string> label_names;
  for (uint32_t i = 0; i < label_count; ++i) label_names.push_back(detail::get_str(in));
  const uint32_t vocab_count = detail::get_u32(in);
  std::vector<std::string> vocab;
  for (uint32_t i = 0; i < vocab_count; ++i) vocab.push_back(detail::get_str(in));

  auto p = make_transducer<double>(layers, hidden, input_dim, LabelSet(label_names), scheme,
                                   seed, vocab);
  const uint32_t count = detail::get_u32(in);
  uint32_t seen = 0;
  p.visit_arrays([&](const std::string& name, auto& arr) {
    ++seen;
    const std::string got = detail::get_str(in);
    if (got != name)
      throw ConfigError(path + ": unexpected array '" + got + "' (want '" + name + "')");
    const uint32_t rows = detail::get_u32(in);
    const uint32_t cols = detail::get_u32(in);
    if (rows != static_cast<uint32_t>(arr.rows()) || cols != static_cast<uint32_t>(arr.cols()))
      throw ConfigError(path + ": shape mismatch for array " + name);
    if (!in.read(reinterpret_cast<char*>(arr.data()),
                 static_cast<std::streamsize>(sizeof(double) * arr.size())))
      throw ConfigError(path + ": truncated array " + name);
  });
  if (seen != count) throw ConfigError(path + ": array count mismatch");
  return p;
}

}  // namespace copynext
