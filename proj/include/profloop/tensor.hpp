// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

// KSTN tensor files: the exchange format between the harness and runners.
//
//   offset  size        field
//   0       4           magic "KSTN"
//   4       4           dtype code, u32 LE (1=f32, 2=f64, 3=i32, 4=i64)
//   8       4           rank, u32 LE
//   12      8*rank      dims, u64 LE each
//   ...     elem*count  row-major data, little-endian
namespace profloop::tensor {

enum class DType : std::uint32_t { f32 = 1, f64 = 2, i32 = 3, i64 = 4 };

std::string_view to_string(DType dtype);
std::size_t element_size(DType dtype);

struct Tensor {
  DType dtype = DType::f64;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;  // widened for comparison; written back in `dtype`

  std::uint64_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

/// Throws Errc::format_error on bad magic, unknown dtype or a size mismatch.
Tensor decode(std::string_view bytes);
std::string encode(const Tensor& t);
Tensor read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Tensor& t);

struct Comparison {
  bool pass = false;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::string reason;  // empty on pass
};

/// Elementwise |a - b| <= atol + rtol * |b|, with `b` as the reference.
/// Shape or dtype mismatches fail with a descriptive reason; NaN never passes.
Comparison compare(const Tensor& candidate, const Tensor& reference, double atol, double rtol);
Comparison compare_files(const std::filesystem::path& candidate, const std::filesystem::path& reference,
                         double atol, double rtol);

}  // namespace profloop::tensor
