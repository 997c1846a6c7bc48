#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ugest/tensor.hpp"

// UGTN tensor files: "UGTN", version 0x01, dtype 0x01 (f32 LE), ndim,
// ndim x u32 LE dims, then the raw row-major payload.
namespace ugest::ugtn {

inline constexpr std::array<char, 4> kMagic = {'U', 'G', 'T', 'N'};
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::uint8_t kDtypeF32 = 0x01;

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
}  // namespace detail

template <class T>
std::string encode(const Tensor<T>& t) {
  if (t.ndim() > 255) throw DimensionError("UGTN supports at most 255 dimensions");
  std::string out(kMagic.begin(), kMagic.end());
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(kDtypeF32));
  out.push_back(static_cast<char>(t.ndim()));
  for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * t.size());
  for (auto v : t.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32(out, bits);
  }
  return out;
}

inline Tensor<float> decode(std::string_view bytes, const std::string& what = "buffer") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  auto need = [&](std::size_t n) {
    if (bytes.size() < n) throw IoError("truncated UGTN data in " + what);
  };
  need(7);
  if (std::memcmp(p, kMagic.data(), 4) != 0) throw IoError("bad UGTN magic in " + what);
  if (p[4] != kVersion) throw IoError("unsupported UGTN version in " + what);
  if (p[5] != kDtypeF32) throw IoError("unsupported UGTN dtype in " + what);
  const std::size_t ndim = p[6];
  need(7 + 4 * ndim);
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) shape[i] = detail::get_u32(p + 7 + 4 * i);
  const std::size_t header = 7 + 4 * ndim;
  const std::size_t n = shape_size(shape);
  if (bytes.size() != header + 4 * n) throw IoError("UGTN payload size mismatch in " + what);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = detail::get_u32(p + header + 4 * i);
    std::memcpy(&data[i], &bits, 4);
  }
  return Tensor<float>(std::move(shape), std::move(data));
}

template <class T>
void save(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  const auto bytes = encode(t);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline Tensor<float> load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode(ss.str(), path.string());
}

}  // namespace ugest::ugtn
