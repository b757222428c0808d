#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsekit/tensor.hpp"

namespace sparsekit {

enum class ValueWidth : std::uint8_t { fp32 = 0, fp16 = 1, int8 = 2 };

std::string_view to_string(ValueWidth w) noexcept;
ValueWidth parse_value_width(std::string_view s);
unsigned value_bits(ValueWidth w) noexcept;

inline constexpr std::size_t kMaskBits = 32;

inline std::size_t mask_words_per_row(std::size_t cols) noexcept {
  return (cols + kMaskBits - 1) / kMaskBits;
}

// Bitmask-compressed weights: one u32 per 32 consecutive weights of a row
// (bit j of word w covers column 32*w + j), plus the nonzeros packed in
// row-major scan order. Rows are padded independently; pad bits are zero.
//
// Exactly one of f32/f16/i8 holds the payload, selected by width(). The int8
// payload carries one symmetric scale per row (scale = max|nonzero| / 127).
class BitmaskCompressed {
 public:
  BitmaskCompressed() = default;

  // Validates the mask/payload coherence and rebuilds row offsets.
  BitmaskCompressed(std::size_t rows, std::size_t cols, ValueWidth width,
                    std::vector<std::uint32_t> masks, std::vector<float> f32,
                    std::vector<std::uint16_t> f16, std::vector<std::int8_t> i8,
                    std::vector<float> scales);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t words_per_row() const noexcept { return words_per_row_; }
  ValueWidth width() const noexcept { return width_; }
  std::size_t nnz() const noexcept { return row_offsets_.empty() ? 0 : row_offsets_.back(); }

  std::span<const std::uint32_t> masks() const noexcept { return masks_; }
  std::span<const std::uint32_t> row_masks(std::size_t r) const noexcept {
    return {masks_.data() + r * words_per_row_, words_per_row_};
  }
  // Index into the packed payload of row r's first nonzero; size rows + 1.
  std::span<const std::size_t> row_offsets() const noexcept { return row_offsets_; }

  std::span<const float> f32_values() const noexcept { return f32_; }
  std::span<const std::uint16_t> f16_values() const noexcept { return f16_; }
  std::span<const std::int8_t> i8_values() const noexcept { return i8_; }
  std::span<const float> scales() const noexcept { return scales_; }

  // Payload bytes as stored (excludes scales).
  std::size_t value_bytes() const noexcept;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_per_row_ = 0;
  ValueWidth width_ = ValueWidth::fp32;
  std::vector<std::uint32_t> masks_;
  std::vector<std::size_t> row_offsets_;
  std::vector<float> f32_;
  std::vector<std::uint16_t> f16_;
  std::vector<std::int8_t> i8_;
  std::vector<float> scales_;
};

BitmaskCompressed compress(const DenseMatrix& w, ValueWidth width = ValueWidth::fp32);
DenseMatrix decompress(const BitmaskCompressed& c);

// SKBC container: "SKBC", u32 rows, u32 cols, u8 width tag, mask words,
// packed values, then per-row f32 scales when the tag is int8. Little endian.
void write_skbc(std::ostream& out, const BitmaskCompressed& c);
BitmaskCompressed read_skbc(std::istream& in);
void save_skbc(const std::filesystem::path& path, const BitmaskCompressed& c);
BitmaskCompressed load_skbc(const std::filesystem::path& path);

struct NMPattern {
  std::size_t n = 0;
  std::size_t m = 0;

  // Throws unless 1 <= n <= m.
  void check() const;
  double sparsity() const noexcept { return 1.0 - static_cast<double>(n) / static_cast<double>(m); }
};

// Accepts "N:M".
NMPattern parse_nm_pattern(std::string_view text);

// True iff m divides cols and every length-m block of every row has at most
// n nonzeros. `exact` additionally requires exactly n nonzeros per block.
bool conforms(const DenseMatrix& w, const NMPattern& p, bool exact = false);

struct SparsityStats {
  double sparsity = 0.0;
  std::size_t nnz = 0;
  std::size_t total = 0;
  double bits_per_weight = 0.0;
  double theoretical_speedup = 0.0;
};

// 1 mask bit per position plus the stored values.
double bits_per_weight(unsigned value_bits, double density);
double theoretical_speedup(unsigned dense_bits, unsigned value_bits, double density);

double compression_ratio_to_sparsity(double ratio);
double sparsity_to_compression_ratio(double sparsity);

// Counts exact zeros. Bits-per-weight and speedup are reported for storing
// the matrix in `width` against a dense baseline of `dense_width`.
SparsityStats sparsity_of(const DenseMatrix& w, ValueWidth width = ValueWidth::fp32,
                          ValueWidth dense_width = ValueWidth::fp32);

}  // namespace sparsekit
