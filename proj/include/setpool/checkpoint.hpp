#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "setpool/nn.hpp"

namespace setpool {

// Parameter file layout (all integers and reals little-endian):
//   magic "SPNET1\n", format version u32, layer count u32,
//   per layer: in u32, out u32, activation code u32,
//   then per layer: w row-major f64[out*in], b f64[out].
inline constexpr char kNetMagic[] = "SPNET1\n";
inline constexpr uint32_t kNetVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("parameter file: truncated u32");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw ParseError("parameter file: truncated f64");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline void save_net(const DenseNet& net, std::ostream& os) {
  os.write(kNetMagic, sizeof(kNetMagic) - 1);
  detail::put_u32(os, kNetVersion);
  detail::put_u32(os, static_cast<uint32_t>(net.layers.size()));
  for (const Layer& l : net.layers) {
    detail::put_u32(os, static_cast<uint32_t>(l.in));
    detail::put_u32(os, static_cast<uint32_t>(l.out));
    detail::put_u32(os, static_cast<uint32_t>(l.act));
  }
  for (const Layer& l : net.layers) {
    for (const double v : l.w) detail::put_f64(os, v);
    for (const double v : l.b) detail::put_f64(os, v);
  }
  if (!os) throw std::runtime_error("save_net: write failed");
}

inline DenseNet load_net(std::istream& is) {
  char magic[sizeof(kNetMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kNetMagic, sizeof(magic)) != 0)
    throw ParseError("parameter file: bad magic");
  const uint32_t version = detail::get_u32(is);
  if (version != kNetVersion)
    throw ParseError("parameter file: unsupported version " + std::to_string(version));
  const uint32_t n_layers = detail::get_u32(is);
  DenseNet net;
  for (uint32_t i = 0; i < n_layers; ++i) {
    Layer l;
    l.in = static_cast<int>(detail::get_u32(is));
    l.out = static_cast<int>(detail::get_u32(is));
    const uint32_t act = detail::get_u32(is);
    if (act > 3) throw ParseError("parameter file: unknown activation code");
    l.act = static_cast<Activation>(act);
    if (l.in <= 0 || l.out <= 0) throw ParseError("parameter file: bad layer dims");
    net.layers.push_back(std::move(l));
  }
  for (Layer& l : net.layers) {
    l.w.resize(static_cast<size_t>(l.in) * l.out);
    l.b.resize(l.out);
    for (double& v : l.w) v = detail::get_f64(is);
    for (double& v : l.b) v = detail::get_f64(is);
  }
  return net;
}

inline void save_net(const DenseNet& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_net: cannot open " + path);
  save_net(net, os);
}

inline DenseNet load_net(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_net: cannot open " + path);
  return load_net(is);
}

// Flat key=value text file; '#' starts a comment. Used for the checkpoint
// manifest and for run configs.
inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_kv_file: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline void write_kv_file(const std::string& path,
                          const std::map<std::string, std::string>& kv) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_kv_file: cannot open " + path);
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
  if (!os) throw std::runtime_error("write_kv_file: write failed");
}

}  // namespace setpool
