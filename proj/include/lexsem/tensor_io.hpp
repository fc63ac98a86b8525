#pragma once

// TensorFile container.
//
//   offset  size        field
//   0       4           magic "LXSB"
//   4       4           version, u32 LE (= 1)
//   8       1           dtype (0 = f32, 1 = f64)
//   9       1           rank
//   10      8 * rank    dims, u64 LE
//   ...     elem * N    row-major payload, LE
//
// Values are held as double in memory; an f32 file round-trips exactly.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lexsem/core.hpp"

namespace lexsem {

static_assert(std::endian::native == std::endian::little,
              "TensorFile I/O assumes a little-endian host");

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline std::size_t element_size(DType dtype) { return dtype == DType::f32 ? 4 : 8; }

inline constexpr std::array<char, 4> kTensorMagic{'L', 'X', 'S', 'B'};
inline constexpr std::uint32_t kTensorVersion = 1;

struct Tensor {
  DType dtype = DType::f32;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;

  std::uint64_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
  }

  bool operator==(const Tensor&) const = default;
};

inline Tensor to_tensor(const Matrix<double>& m, DType dtype = DType::f32) {
  return Tensor{dtype, {m.rows(), m.cols()}, {m.values().begin(), m.values().end()}};
}

inline Tensor to_tensor(const Vector& v, DType dtype = DType::f32) {
  return Tensor{dtype, {v.size()}, v};
}

/// Interprets a rank-1 tensor as a 1 x n matrix, rank-2 as-is.
inline Matrix<double> to_matrix(const Tensor& t) {
  if (t.dims.size() == 1) return Matrix<double>(1, t.dims[0], t.values);
  require(t.dims.size() == 2, ErrorKind::dimension_mismatch,
          "expected a rank-1 or rank-2 tensor, got rank " + std::to_string(t.dims.size()));
  return Matrix<double>(t.dims[0], t.dims[1], t.values);
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  require(tensor.values.size() == tensor.element_count(), ErrorKind::dimension_mismatch,
          "tensor payload does not match dims");
  require(tensor.dims.size() <= 255, ErrorKind::invalid_argument, "tensor rank exceeds 255");
  require(all_finite(tensor.values), ErrorKind::non_finite,
          "refusing to write non-finite values to " + path.string());

  std::vector<char> bytes;
  bytes.reserve(10 + 8 * tensor.dims.size() + element_size(tensor.dtype) * tensor.values.size());
  auto put = [&bytes](const void* src, std::size_t n) {
    const auto* p = static_cast<const char*>(src);
    bytes.insert(bytes.end(), p, p + n);
  };
  put(kTensorMagic.data(), 4);
  put(&kTensorVersion, 4);
  const auto dtype = static_cast<std::uint8_t>(tensor.dtype);
  const auto rank = static_cast<std::uint8_t>(tensor.dims.size());
  put(&dtype, 1);
  put(&rank, 1);
  for (std::uint64_t d : tensor.dims) put(&d, 8);
  for (double v : tensor.values) {
    if (tensor.dtype == DType::f32) {
      const auto f = static_cast<float>(v);
      put(&f, 4);
    } else {
      put(&v, 8);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  require(!out.fail(), ErrorKind::io, "write failed for " + path.string());
}

inline void write_tensor(const std::filesystem::path& path, const Matrix<double>& m,
                         DType dtype = DType::f32) {
  write_tensor(path, to_tensor(m, dtype));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    require(pos + n <= bytes.size(), ErrorKind::truncated,
            path.string() + ": truncated header");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };

  std::array<char, 4> magic{};
  require(bytes.size() >= 4, ErrorKind::truncated, path.string() + ": truncated header");
  take(magic.data(), 4);
  require(magic == kTensorMagic, ErrorKind::bad_magic, path.string() + ": bad magic");
  std::uint32_t version = 0;
  take(&version, 4);
  require(version == kTensorVersion, ErrorKind::version_mismatch,
          path.string() + ": unsupported version " + std::to_string(version));
  std::uint8_t dtype = 0;
  std::uint8_t rank = 0;
  take(&dtype, 1);
  take(&rank, 1);
  require(dtype <= 1, ErrorKind::malformed, path.string() + ": unknown dtype code");

  Tensor t;
  t.dtype = static_cast<DType>(dtype);
  t.dims.resize(rank);
  for (auto& d : t.dims) take(&d, 8);

  const std::uint64_t count = t.element_count();
  const std::size_t payload = element_size(t.dtype) * count;
  const std::size_t available = bytes.size() - pos;
  require(available >= payload, ErrorKind::truncated,
          path.string() + ": payload is " + std::to_string(available) + " bytes, dims imply " +
              std::to_string(payload));
  require(available == payload, ErrorKind::malformed,
          path.string() + ": trailing bytes after payload");
  t.values.resize(count);
  for (auto& v : t.values) {
    if (t.dtype == DType::f32) {
      float f;
      take(&f, 4);
      v = f;
    } else {
      take(&v, 8);
    }
  }
  return t;
}

}  // namespace lexsem
