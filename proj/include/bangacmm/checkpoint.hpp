#pragma once

// "TFU1" tensor container.
//
//   magic   4 bytes  'T' 'F' 'U' '1'
//   count   u64
//   count x { name_len u64, name bytes (UTF-8), rank u64, dims u64[rank],
//             payload f64[prod(dims)] }
//
// All integers and floats are little-endian regardless of host order.

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace bangacmm {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(bytes, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw ParseError("checkpoint: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'T', 'F', 'U', '1'};

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& entries) {
  os.write(kCheckpointMagic, 4);
  detail::put_u64(os, entries.size());
  for (const auto& [name, t] : entries) {
    detail::put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, t.rank());
    for (auto d : t.shape()) detail::put_u64(os, d);
    for (double v : t.data()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
    throw ParseError("checkpoint: bad magic (expected TFU1)");
  }
  const auto count = detail::get_u64(is);
  std::vector<NamedTensor> out;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = detail::get_u64(is);
    if (len > (1u << 20)) throw ParseError("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw ParseError("checkpoint: truncated name");
    const auto rank = detail::get_u64(is);
    if (rank == 0 || rank > 8) throw ParseError("checkpoint: bad rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u64(is);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = std::bit_cast<double>(detail::get_u64(is));
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(os, entries);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

// Text metadata stored as a rank-1 tensor with one byte value per element.
inline NamedTensor text_entry(std::string name, const std::string& text) {
  std::vector<double> bytes;
  for (unsigned char c : text) bytes.push_back(static_cast<double>(c));
  if (bytes.empty()) bytes.push_back(0.0);
  const std::size_t n = bytes.size();
  return {std::move(name), Tensor::from({n}, std::move(bytes))};
}

inline std::string entry_text(const Tensor& t) {
  std::string s;
  for (double v : t.data()) {
    if (v != 0.0) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return s;
}

}  // namespace bangacmm
