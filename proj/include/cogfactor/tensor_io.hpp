#pragma once

// NDT tensor files.
//
//   offset  size        field
//   0       4           magic "NDT1"
//   4       1           dtype code (1 = float64, 2 = float32, 3 = int64)
//   5       1           ndim
//   6       8 * ndim    dims, little-endian u64
//   ...     payload     row-major, little-endian elements
//
// A 2 x 3 float64 tensor therefore occupies 4 + 1 + 1 + 2*8 + 6*8 = 70 bytes.

#include "cogfactor/core.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>

namespace cogfactor {

enum class DType : std::uint8_t { Float64 = 1, Float32 = 2, Int64 = 3 };

constexpr std::size_t dtype_size(DType t) {
  return t == DType::Float32 ? 4 : 8;
}

/// Untyped tensor: shape plus a little-endian row-major payload.
struct Tensor {
  DType dtype = DType::Float64;
  std::vector<std::uint64_t> shape;
  std::vector<std::byte> bytes;

  std::uint64_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                           std::multiplies<>());
  }

  bool operator==(const Tensor&) const = default;
};

namespace detail {

inline constexpr std::array<char, 4> kNdtMagic = {'N', 'D', 'T', '1'};

template <typename T>
void put_le(std::vector<std::byte>& out, T value) {
  std::array<std::byte, sizeof(T)> raw;
  std::memcpy(raw.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  out.insert(out.end(), raw.begin(), raw.end());
}

template <typename T>
T get_le(const std::byte* src) {
  std::array<std::byte, sizeof(T)> raw;
  std::memcpy(raw.data(), src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  T value;
  std::memcpy(&value, raw.data(), sizeof(T));
  return value;
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, double>) return DType::Float64;
  else if constexpr (std::is_same_v<T, float>) return DType::Float32;
  else {
    static_assert(std::is_same_v<T, std::int64_t>, "unsupported NDT element type");
    return DType::Int64;
  }
}

}  // namespace detail

inline std::vector<std::byte> encode_tensor(const Tensor& t) {
  require(t.shape.size() <= 255, ErrorCode::InvalidArgument, "NDT supports at most 255 dims");
  require(t.bytes.size() == t.numel() * dtype_size(t.dtype), ErrorCode::ShapeMismatch,
          "payload size does not match shape");
  std::vector<std::byte> out;
  out.reserve(6 + 8 * t.shape.size() + t.bytes.size());
  for (char c : detail::kNdtMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(t.dtype));
  out.push_back(static_cast<std::byte>(t.shape.size()));
  for (auto d : t.shape) detail::put_le<std::uint64_t>(out, d);
  out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  return out;
}

inline Tensor decode_tensor(std::span<const std::byte> buf) {
  require(buf.size() >= 4, ErrorCode::TruncatedFile, "missing magic");
  require(std::equal(detail::kNdtMagic.begin(), detail::kNdtMagic.end(), buf.begin(),
                     [](char c, std::byte b) { return static_cast<std::byte>(c) == b; }),
          ErrorCode::BadMagic, "expected NDT1");
  require(buf.size() >= 6, ErrorCode::TruncatedFile, "missing dtype/ndim");
  const auto code = static_cast<std::uint8_t>(buf[4]);
  require(code >= 1 && code <= 3, ErrorCode::UnsupportedDtype,
          "dtype code " + std::to_string(code));
  Tensor t;
  t.dtype = static_cast<DType>(code);
  const std::size_t ndim = static_cast<std::uint8_t>(buf[5]);
  std::size_t pos = 6;
  require(buf.size() >= pos + 8 * ndim, ErrorCode::TruncatedFile, "dims truncated");
  t.shape.resize(ndim);
  for (auto& d : t.shape) {
    d = detail::get_le<std::uint64_t>(buf.data() + pos);
    pos += 8;
  }
  const std::uint64_t n = t.numel();
  const std::size_t esize = dtype_size(t.dtype);
  const std::size_t remaining = buf.size() - pos;
  require(n <= remaining / esize, ErrorCode::TruncatedFile,
          "payload has " + std::to_string(remaining) + " bytes, shape needs more");
  require(remaining == n * esize, ErrorCode::ShapeMismatch, "trailing bytes after payload");
  t.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
  return t;
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot open " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), ErrorCode::IoError, "short write to " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor(std::as_bytes(std::span(raw)));
}

/// Packs typed values into a tensor of the given shape.
template <typename T>
Tensor make_tensor(std::vector<std::uint64_t> shape, std::span<const T> values) {
  Tensor t;
  t.dtype = detail::dtype_of<T>();
  t.shape = std::move(shape);
  require(values.size() == t.numel(), ErrorCode::ShapeMismatch, "value count does not match shape");
  t.bytes.reserve(values.size() * sizeof(T));
  for (const T& v : values) detail::put_le<T>(t.bytes, v);
  return t;
}

/// Unpacks a tensor into typed values; the stored dtype must match T exactly.
template <typename T>
std::vector<T> tensor_values(const Tensor& t) {
  require(t.dtype == detail::dtype_of<T>(), ErrorCode::UnsupportedDtype,
          "tensor dtype does not match requested element type");
  std::vector<T> out(t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::get_le<T>(t.bytes.data() + i * sizeof(T));
  return out;
}

inline Tensor matrix_to_tensor(const Matrix& m) {
  std::vector<double> rowmajor(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      rowmajor[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return make_tensor<double>({static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                             rowmajor);
}

/// Accepts float64 or float32 tensors of rank 1 (read as a column) or 2.
inline Matrix tensor_to_matrix(const Tensor& t) {
  require(t.shape.size() == 1 || t.shape.size() == 2, ErrorCode::ShapeMismatch,
          "expected a rank-1 or rank-2 tensor");
  const auto rows = static_cast<Eigen::Index>(t.shape[0]);
  const auto cols = t.shape.size() == 2 ? static_cast<Eigen::Index>(t.shape[1]) : Eigen::Index{1};
  std::vector<double> vals;
  if (t.dtype == DType::Float64) {
    vals = tensor_values<double>(t);
  } else if (t.dtype == DType::Float32) {
    auto f = tensor_values<float>(t);
    vals.assign(f.begin(), f.end());
  } else {
    throw Error(ErrorCode::UnsupportedDtype, "expected a floating-point tensor");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = vals[static_cast<std::size_t>(i * cols + j)];
  return m;
}

inline void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  write_tensor(path, matrix_to_tensor(m));
}

inline Matrix read_matrix(const std::filesystem::path& path) {
  return tensor_to_matrix(read_tensor(path));
}

inline void write_vector(const std::filesystem::path& path, const Vector& v) {
  write_tensor(path, make_tensor<double>({static_cast<std::uint64_t>(v.size())},
                                         std::span<const double>(v.data(), static_cast<std::size_t>(v.size()))));
}

inline Vector read_vector(const std::filesystem::path& path) {
  const Tensor t = read_tensor(path);
  require(t.shape.size() == 1, ErrorCode::ShapeMismatch, "expected a rank-1 tensor");
  Matrix m = tensor_to_matrix(t);
  return m.col(0);
}

inline void write_int64(const std::filesystem::path& path, const std::vector<std::int64_t>& v) {
  write_tensor(path, make_tensor<std::int64_t>({v.size()}, v));
}

inline std::vector<std::int64_t> read_int64(const std::filesystem::path& path) {
  const Tensor t = read_tensor(path);
  require(t.shape.size() == 1, ErrorCode::ShapeMismatch, "expected a rank-1 tensor");
  return tensor_values<std::int64_t>(t);
}

}  // namespace cogfactor
