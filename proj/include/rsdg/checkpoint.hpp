#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rsdg/error.hpp"
#include "rsdg/nn.hpp"

namespace rsdg {

// Versioned binary checkpoint: magic "RSDG", u32 version, input-shape and
// per-layer shape table, little-endian f64 parameters, optional Adam state.
// An architecture descriptor can be written alongside as JSON.

namespace ckpt_detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(static_cast<bool>(is), "checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  require(static_cast<bool>(is), "checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  const std::uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  require(n < 4096, "checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  require(static_cast<bool>(is), "checkpoint: truncated file");
  return s;
}

}  // namespace ckpt_detail

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Network& net,
                            const AdamState* adam = nullptr) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "checkpoint: cannot open for write: " + path);
  os.write("RSDG", 4);
  ckpt_detail::put_u32(os, kCheckpointVersion);

  const Shape& in = net.input_shape();
  ckpt_detail::put_u32(os, static_cast<std::uint32_t>(in.size()));
  for (int d : in) ckpt_detail::put_u32(os, static_cast<std::uint32_t>(d));

  ckpt_detail::put_u32(os, static_cast<std::uint32_t>(net.layer_count()));
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    ckpt_detail::put_str(os, net.layer(i).kind());
    ckpt_detail::put_u64(os, static_cast<std::uint64_t>(net.layer(i).param_count()));
  }

  ckpt_detail::put_u64(os, static_cast<std::uint64_t>(net.params().size()));
  for (double p : net.params()) ckpt_detail::put_f64(os, p);

  if (adam != nullptr && adam->m.size() == net.params().size()) {
    os.put(1);
    ckpt_detail::put_u64(os, static_cast<std::uint64_t>(adam->t));
    for (double v : adam->m) ckpt_detail::put_f64(os, v);
    for (double v : adam->v) ckpt_detail::put_f64(os, v);
  } else {
    os.put(0);
  }
  require(static_cast<bool>(os), "checkpoint: write failed: " + path);
}

// Loads parameters (and Adam state when present and requested) into a
// network of the exact same architecture.
inline void load_checkpoint(const std::string& path, Network& net, AdamState* adam = nullptr) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  require(is && std::string(magic, 4) == "RSDG", "checkpoint: bad magic: " + path);
  require(ckpt_detail::get_u32(is) == kCheckpointVersion, "checkpoint: unsupported version");

  const std::uint32_t ndims = ckpt_detail::get_u32(is);
  require(ndims == net.input_shape().size(), "checkpoint: input rank mismatch");
  for (std::uint32_t i = 0; i < ndims; ++i)
    require(static_cast<int>(ckpt_detail::get_u32(is)) == net.input_shape()[i],
            "checkpoint: input shape mismatch");

  const std::uint32_t n_layers = ckpt_detail::get_u32(is);
  require(n_layers == net.layer_count(), "checkpoint: layer count mismatch");
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    require(ckpt_detail::get_str(is) == net.layer(i).kind(), "checkpoint: layer kind mismatch");
    require(ckpt_detail::get_u64(is) == static_cast<std::uint64_t>(net.layer(i).param_count()),
            "checkpoint: layer size mismatch");
  }

  const std::uint64_t total = ckpt_detail::get_u64(is);
  require(total == net.params().size(), "checkpoint: parameter count mismatch");
  for (double& p : net.params()) p = ckpt_detail::get_f64(is);

  const int has_adam = is.get();
  require(has_adam == 0 || has_adam == 1, "checkpoint: corrupt adam flag");
  if (has_adam == 1) {
    AdamState st;
    st.t = static_cast<std::int64_t>(ckpt_detail::get_u64(is));
    st.m.resize(total);
    st.v.resize(total);
    for (double& v : st.m) v = ckpt_detail::get_f64(is);
    for (double& v : st.v) v = ckpt_detail::get_f64(is);
    if (adam != nullptr) *adam = std::move(st);
  } else if (adam != nullptr) {
    *adam = AdamState{};
  }
}

inline void save_architecture_json(const std::string& path, const Network& net,
                                   const std::string& config_hash = "") {
  nlohmann::json j;
  j["input_shape"] = net.input_shape();
  j["output_shape"] = net.output_shape();
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    layers.push_back({{"kind", net.layer(i).kind()}, {"params", net.layer(i).param_count()}});
  }
  j["layers"] = layers;
  j["param_count"] = net.param_count();
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot write architecture descriptor: " + path);
  os << j.dump(2) << "\n";
}

}  // namespace rsdg
