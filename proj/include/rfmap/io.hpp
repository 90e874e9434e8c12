#pragma once

// Binary file formats.
//
// T3B  magic 54 33 42 01, then n1 n2 n3 as u32 LE, then n1*n2*n3 f64 LE values
//      in storage order (i fastest, then j, then k).
// SMP  magic 53 4D 50 01, then n1 n2 n3 count as u32 LE, then `count` records
//      of (i: u32, j: u32, n3 x f64 LE), indices 0-based.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "rfmap/errors.hpp"
#include "rfmap/samples.hpp"
#include "rfmap/tensor3.hpp"

namespace rfmap {

inline constexpr std::array<unsigned char, 4> kT3BMagic{0x54, 0x33, 0x42, 0x01};
inline constexpr std::array<unsigned char, 4> kSMPMagic{0x53, 0x4D, 0x50, 0x01};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int n = 0; n < 4; ++n) b[n] = static_cast<unsigned char>((v >> (8 * n)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int n = 0; n < 8; ++n) b[n] = static_cast<unsigned char>((bits >> (8 * n)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("truncated input while reading ") + what);
  std::uint32_t v = 0;
  for (int n = 0; n < 4; ++n) v |= static_cast<std::uint32_t>(b[n]) << (8 * n);
  return v;
}

inline double read_f64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError(std::string("truncated input while reading ") + what);
  std::uint64_t bits = 0;
  for (int n = 0; n < 8; ++n) bits |= static_cast<std::uint64_t>(b[n]) << (8 * n);
  return std::bit_cast<double>(bits);
}

inline void expect_magic(std::istream& is, const std::array<unsigned char, 4>& magic, const char* format) {
  std::array<unsigned char, 4> got{};
  if (!is.read(reinterpret_cast<char*>(got.data()), 4) || got != magic) {
    throw FormatError(std::string("not a ") + format + " stream (bad magic or version)");
  }
}

inline std::uint32_t checked_u32(Index v, const char* what) {
  if (v < 0 || v > static_cast<Index>(std::numeric_limits<std::uint32_t>::max()))
    throw FormatError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

inline Index read_dim(std::istream& is, const char* what) {
  const auto v = read_u32(is, what);
  if (v == 0) throw FormatError(std::string(what) + " must be positive");
  return static_cast<Index>(v);
}

}  // namespace detail

inline void write_t3b(std::ostream& os, const Tensor3& t) {
  os.write(reinterpret_cast<const char*>(kT3BMagic.data()), 4);
  detail::write_u32(os, detail::checked_u32(t.n1(), "n1"));
  detail::write_u32(os, detail::checked_u32(t.n2(), "n2"));
  detail::write_u32(os, detail::checked_u32(t.n3(), "n3"));
  for (double v : t.data()) detail::write_f64(os, v);
  if (!os) throw FormatError("write_t3b: stream write failed");
}

inline Tensor3 read_t3b(std::istream& is) {
  detail::expect_magic(is, kT3BMagic, "T3B");
  const Index n1 = detail::read_dim(is, "n1");
  const Index n2 = detail::read_dim(is, "n2");
  const Index n3 = detail::read_dim(is, "n3");
  Tensor3 t(n1, n2, n3);
  for (double& v : t.data()) {
    v = detail::read_f64(is, "T3B values");
    if (!std::isfinite(v)) throw FormatError("T3B: non-finite value");
  }
  return t;
}

inline void write_smp(std::ostream& os, const TubeSampleSet& s) {
  os.write(reinterpret_cast<const char*>(kSMPMagic.data()), 4);
  detail::write_u32(os, detail::checked_u32(s.n1(), "n1"));
  detail::write_u32(os, detail::checked_u32(s.n2(), "n2"));
  detail::write_u32(os, detail::checked_u32(s.n3(), "n3"));
  detail::write_u32(os, detail::checked_u32(s.size(), "count"));
  for (const auto& e : s.sorted_entries()) {
    detail::write_u32(os, static_cast<std::uint32_t>(e.i));
    detail::write_u32(os, static_cast<std::uint32_t>(e.j));
    for (double v : e.tube) detail::write_f64(os, v);
  }
  if (!os) throw FormatError("write_smp: stream write failed");
}

inline TubeSampleSet read_smp(std::istream& is) {
  detail::expect_magic(is, kSMPMagic, "SMP");
  const Index n1 = detail::read_dim(is, "n1");
  const Index n2 = detail::read_dim(is, "n2");
  const Index n3 = detail::read_dim(is, "n3");
  const Index count = detail::read_u32(is, "count");
  if (count > n1 * n2) throw FormatError("SMP: more records than grid positions");
  TubeSampleSet s(n1, n2, n3);
  for (Index r = 0; r < count; ++r) {
    const Index i = detail::read_u32(is, "record row");
    const Index j = detail::read_u32(is, "record column");
    std::vector<double> tube(static_cast<std::size_t>(n3));
    for (double& v : tube) {
      v = detail::read_f64(is, "SMP tube");
      if (!std::isfinite(v)) throw FormatError("SMP: non-finite value");
    }
    try {
      s.add(i, j, std::move(tube));
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("SMP: ") + e.what());
    }
  }
  return s;
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return is;
}

}  // namespace detail

inline void save_t3b(const std::string& path, const Tensor3& t) {
  auto os = detail::open_out(path);
  write_t3b(os, t);
}

inline Tensor3 load_t3b(const std::string& path) {
  auto is = detail::open_in(path);
  return read_t3b(is);
}

inline void save_smp(const std::string& path, const TubeSampleSet& s) {
  auto os = detail::open_out(path);
  write_smp(os, s);
}

inline TubeSampleSet load_smp(const std::string& path) {
  auto is = detail::open_in(path);
  return read_smp(is);
}

}  // namespace rfmap
