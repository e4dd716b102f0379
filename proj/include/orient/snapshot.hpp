#pragma once

// FSLT tensor snapshots:
//   "FSLT" | u32 version | u32 count |
//   count x ( u32 name_len | name bytes | u32 rank | rank x u64 dim | numel x f64 )
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "orient/tensor.hpp"

namespace orient {

inline constexpr std::uint32_t kFsltVersion = 1;
inline constexpr char kFsltMagic[4] = {'F', 'S', 'L', 'T'};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U get_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw std::runtime_error(std::string("FSLT: truncated stream while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_fslt(std::ostream& os, const NamedTensors& tensors) {
  os.write(kFsltMagic, 4);
  detail::put_le<std::uint32_t>(os, kFsltVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint64_t>(os, d);
    for (double v : t.data()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("FSLT: write failed");
}

inline NamedTensors read_fslt(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kFsltMagic, 4) != 0) throw std::runtime_error("FSLT: bad magic");
  const auto version = detail::get_le<std::uint32_t>(is, "version");
  if (version != kFsltVersion) throw std::runtime_error("FSLT: unsupported version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(is, "tensor count");
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = detail::get_le<std::uint32_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("FSLT: truncated name");
    const auto rank = detail::get_le<std::uint32_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_le<std::uint64_t>(is, "dimension");
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is, "value"));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

inline void save_fslt(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_fslt(os, tensors);
}

inline NamedTensors load_fslt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  return read_fslt(is);
}

inline const Tensor& find_tensor(const NamedTensors& ts, const std::string& name) {
  for (const auto& [n, t] : ts)
    if (n == name) return t;
  throw std::out_of_range("FSLT: no tensor named '" + name + "'");
}

}  // namespace orient
