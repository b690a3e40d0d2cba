// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tnsr_io.hpp
 * @brief  Binary tensor container.
 *
 * Layout (all integers little-endian):
 *
 *   0..3   magic "TNSR"
 *   4      version (1)
 *   5      dtype   (1 = float64, 2 = float32)
 *   6..7   reserved, zero
 *   8..11  u32 ndim
 *   ...    ndim x u64 extents
 *   ...    row-major payload
 */
#pragma once

#include <mgmu/tensor.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace mgmu {

enum class DType : std::uint8_t { float64 = 1, float32 = 2 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (pos + sizeof(U) > in.size()) throw FormatError("tnsr: truncated at byte " + std::to_string(pos));
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tnsr(const Tensor& t, DType dtype = DType::float64) {
  std::vector<std::uint8_t> out = {'T', 'N', 'S', 'R', 1, static_cast<std::uint8_t>(dtype), 0, 0};
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + t.numel() * (dtype == DType::float64 ? 8 : 4));
  for (double v : t.values()) {
    if (dtype == DType::float64) {
      detail::put_le<double>(out, v);
    } else {
      detail::put_le<float>(out, static_cast<float>(v));
    }
  }
  return out;
}

inline Tensor decode_tnsr(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "TNSR", 4) != 0) {
    throw FormatError("tnsr: bad magic");
  }
  if (bytes[4] != 1) throw FormatError("tnsr: unsupported version " + std::to_string(bytes[4]));
  const auto dtype = static_cast<DType>(bytes[5]);
  if (dtype != DType::float64 && dtype != DType::float32) {
    throw FormatError("tnsr: unknown dtype code " + std::to_string(bytes[5]));
  }
  if (bytes[6] != 0 || bytes[7] != 0) throw FormatError("tnsr: reserved bytes must be zero");
  std::size_t pos = 8;
  const auto ndim = detail::get_le<std::uint32_t>(bytes, pos);
  Shape shape(ndim);
  for (auto& d : shape) d = detail::get_le<std::uint64_t>(bytes, pos);
  const std::size_t n = shape_numel(shape);
  const std::size_t width = dtype == DType::float64 ? 8 : 4;
  if (bytes.size() - pos != n * width) {
    throw FormatError("tnsr: payload holds " + std::to_string(bytes.size() - pos) +
                      " bytes, shape " + shape_str(shape) + " needs " + std::to_string(n * width));
  }
  std::vector<double> values(n);
  for (auto& v : values) {
    v = dtype == DType::float64 ? detail::get_le<double>(bytes, pos)
                                : static_cast<double>(detail::get_le<float>(bytes, pos));
  }
  return Tensor(std::move(shape), std::move(values));
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_tnsr(const std::filesystem::path& path, const Tensor& t,
                       DType dtype = DType::float64) {
  write_bytes(path, encode_tnsr(t, dtype));
}

inline Tensor read_tnsr(const std::filesystem::path& path) { return decode_tnsr(read_bytes(path)); }

}  // namespace mgmu
