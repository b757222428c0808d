#include "sparsekit/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace sparsekit {
namespace detail {

void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), b.size());
}

std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size())) throw FormatError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& out, float v) { write_u32(out, std::bit_cast<std::uint32_t>(v)); }
float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

void expect_magic(std::istream& in, const char (&magic)[5]) {
  char got[4] = {};
  if (!in.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected ") + magic);
  }
}

}  // namespace detail

void write_skdm(std::ostream& out, const DenseMatrix& m) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() || m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw DimensionError("matrix too large for SKDM");
  }
  detail::write_magic(out, "SKDM");
  detail::write_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (float v : m.values()) detail::write_f32(out, v);
  if (!out) throw Error("write failed");
}

DenseMatrix read_skdm(std::istream& in) {
  detail::expect_magic(in, "SKDM");
  const std::size_t rows = detail::read_u32(in);
  const std::size_t cols = detail::read_u32(in);
  std::vector<float> data(rows * cols);
  for (float& v : data) v = detail::read_f32(in);
  for (float v : data) {
    if (!std::isfinite(v)) throw FormatError("SKDM payload contains non-finite values");
  }
  return DenseMatrix(rows, cols, std::move(data));
}

void save_skdm(const std::filesystem::path& path, const DenseMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_skdm(out, m);
}

DenseMatrix load_skdm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_skdm(in);
}

}  // namespace sparsekit
