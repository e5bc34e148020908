// SPDX-License-Identifier: Apache-2.0
#include "profloop/tensor.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "profloop/error.hpp"
#include "profloop/util.hpp"

namespace profloop::tensor {

static_assert(std::endian::native == std::endian::little, "KSTN I/O assumes a little-endian host");

std::string_view to_string(DType dtype) {
  switch (dtype) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::i32: return "i32";
    case DType::i64: return "i64";
  }
  return "?";
}

std::size_t element_size(DType dtype) {
  return dtype == DType::f32 || dtype == DType::i32 ? 4 : 8;
}

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

template <typename T>
T load(std::string_view bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void store(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

Tensor decode(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "KSTN") {
    throw Error(Errc::format_error, "not a KSTN tensor file (bad magic or truncated header)");
  }
  auto code = load<std::uint32_t>(bytes, 4);
  if (code < 1 || code > 4) throw Error(Errc::format_error, fmt::format("unknown KSTN dtype code {}", code));
  Tensor t;
  t.dtype = static_cast<DType>(code);
  auto rank = load<std::uint32_t>(bytes, 8);
  std::size_t header = 12 + 8 * static_cast<std::size_t>(rank);
  if (rank > 16 || bytes.size() < header) throw Error(Errc::format_error, "truncated KSTN dims");
  for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(load<std::uint64_t>(bytes, 12 + 8 * i));
  std::uint64_t count = t.element_count();
  std::size_t esize = element_size(t.dtype);
  if (count > (bytes.size() - header) / esize || bytes.size() - header != count * esize) {
    throw Error(Errc::format_error, fmt::format("KSTN payload is {} bytes, expected {}", bytes.size() - header,
                                                count * esize));
  }
  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::size_t off = header + i * esize;
    switch (t.dtype) {
      case DType::f32: t.values[i] = load<float>(bytes, off); break;
      case DType::f64: t.values[i] = load<double>(bytes, off); break;
      case DType::i32: t.values[i] = load<std::int32_t>(bytes, off); break;
      case DType::i64: t.values[i] = static_cast<double>(load<std::int64_t>(bytes, off)); break;
    }
  }
  return t;
}

std::string encode(const Tensor& t) {
  if (t.values.size() != t.element_count()) {
    throw Error(Errc::invalid_argument, "tensor value count does not match its shape");
  }
  std::string out = "KSTN";
  store(out, static_cast<std::uint32_t>(t.dtype));
  store(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) store(out, d);
  for (double v : t.values) {
    switch (t.dtype) {
      case DType::f32: store(out, static_cast<float>(v)); break;
      case DType::f64: store(out, v); break;
      case DType::i32: store(out, static_cast<std::int32_t>(v)); break;
      case DType::i64: store(out, static_cast<std::int64_t>(v)); break;
    }
  }
  return out;
}

Tensor read(const std::filesystem::path& path) { return decode(util::read_file(path)); }

void write(const std::filesystem::path& path, const Tensor& t) { util::write_file(path, encode(t)); }

Comparison compare(const Tensor& candidate, const Tensor& reference, double atol, double rtol) {
  Comparison c;
  if (candidate.dtype != reference.dtype) {
    c.reason = fmt::format("dtype mismatch: {} vs reference {}", to_string(candidate.dtype), to_string(reference.dtype));
    return c;
  }
  if (candidate.shape != reference.shape) {
    c.reason = fmt::format("shape mismatch: [{}] vs reference [{}]", fmt::join(candidate.shape, ","),
                           fmt::join(reference.shape, ","));
    return c;
  }
  c.pass = true;
  std::size_t first_bad = candidate.values.size();
  for (std::size_t i = 0; i < candidate.values.size(); ++i) {
    double a = candidate.values[i];
    double b = reference.values[i];
    double abs_err = std::fabs(a - b);
    if (std::isnan(a) || std::isnan(b)) abs_err = std::numeric_limits<double>::infinity();
    double rel_err = b != 0.0 ? abs_err / std::fabs(b) : (abs_err == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    c.max_abs_err = std::max(c.max_abs_err, abs_err);
    c.max_rel_err = std::max(c.max_rel_err, rel_err);
    if (!(abs_err <= atol + rtol * std::fabs(b))) {
      if (c.pass) first_bad = i;
      c.pass = false;
    }
  }
  if (!c.pass) {
    c.reason = fmt::format("values differ: first mismatch at flat index {} ({} vs reference {}), max_abs_err {}",
                           first_bad, candidate.values[first_bad], reference.values[first_bad], c.max_abs_err);
  }
  return c;
}

Comparison compare_files(const std::filesystem::path& candidate, const std::filesystem::path& reference,
                         double atol, double rtol) {
  return compare(read(candidate), read(reference), atol, rtol);
}

}  // namespace profloop::tensor
