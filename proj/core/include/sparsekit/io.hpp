#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "sparsekit/tensor.hpp"

namespace sparsekit {

// SKDM container: "SKDM", u32 rows, u32 cols, rows*cols little-endian f32.
void write_skdm(std::ostream& out, const DenseMatrix& m);
DenseMatrix read_skdm(std::istream& in);
void save_skdm(const std::filesystem::path& path, const DenseMatrix& m);
DenseMatrix load_skdm(const std::filesystem::path& path);

namespace detail {

void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);
void write_f32(std::ostream& out, float v);
float read_f32(std::istream& in);
void write_magic(std::ostream& out, const char (&magic)[5]);
void expect_magic(std::istream& in, const char (&magic)[5]);

}  // namespace detail
}  // namespace sparsekit
