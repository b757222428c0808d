#include "sparsekit/sparse_format.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "sparsekit/half.hpp"
#include "sparsekit/io.hpp"
#include "sparsekit/quant.hpp"

namespace sparsekit {

std::string_view to_string(ValueWidth w) noexcept {
  switch (w) {
    case ValueWidth::fp32: return "fp32";
    case ValueWidth::fp16: return "fp16";
    case ValueWidth::int8: return "int8";
  }
  return "?";
}

ValueWidth parse_value_width(std::string_view s) {
  if (s == "fp32") return ValueWidth::fp32;
  if (s == "fp16") return ValueWidth::fp16;
  if (s == "int8") return ValueWidth::int8;
  throw InvalidArgument("unknown value width '" + std::string(s) + "' (fp32|fp16|int8)");
}

unsigned value_bits(ValueWidth w) noexcept {
  switch (w) {
    case ValueWidth::fp32: return 32;
    case ValueWidth::fp16: return 16;
    case ValueWidth::int8: return 8;
  }
  return 0;
}

BitmaskCompressed::BitmaskCompressed(std::size_t rows, std::size_t cols, ValueWidth width,
                                     std::vector<std::uint32_t> masks, std::vector<float> f32,
                                     std::vector<std::uint16_t> f16, std::vector<std::int8_t> i8,
                                     std::vector<float> scales)
    : rows_(rows),
      cols_(cols),
      words_per_row_(mask_words_per_row(cols)),
      width_(width),
      masks_(std::move(masks)),
      f32_(std::move(f32)),
      f16_(std::move(f16)),
      i8_(std::move(i8)),
      scales_(std::move(scales)) {
  if (masks_.size() != rows_ * words_per_row_) {
    throw FormatError("mask word count " + std::to_string(masks_.size()) + " != rows * ceil(cols/32)");
  }
  const std::size_t tail = cols_ % kMaskBits;
  const std::uint32_t pad_mask = tail == 0 ? 0u : ~((1u << tail) - 1u);
  row_offsets_.assign(rows_ + 1, 0);
  for (std::size_t r = 0; r < rows_; ++r) {
    std::size_t count = 0;
    for (std::size_t w = 0; w < words_per_row_; ++w) count += std::popcount(masks_[r * words_per_row_ + w]);
    if (words_per_row_ > 0 && (masks_[r * words_per_row_ + words_per_row_ - 1] & pad_mask) != 0) {
      throw FormatError("pad bits set in row " + std::to_string(r));
    }
    row_offsets_[r + 1] = row_offsets_[r] + count;
  }
  const std::size_t stored = width_ == ValueWidth::fp32 ? f32_.size()
                             : width_ == ValueWidth::fp16 ? f16_.size()
                                                          : i8_.size();
  const std::size_t other = f32_.size() + f16_.size() + i8_.size() - stored;
  if (stored != nnz() || other != 0) {
    throw FormatError("mask popcount " + std::to_string(nnz()) + " != " + std::to_string(stored) +
                      " stored values");
  }
  if ((width_ == ValueWidth::int8) != !scales_.empty() && rows_ > 0) {
    throw FormatError("per-row scales must be present iff payload is int8");
  }
  if (width_ == ValueWidth::int8 && scales_.size() != rows_) {
    throw FormatError("expected one scale per row");
  }
}

std::size_t BitmaskCompressed::value_bytes() const noexcept {
  return f32_.size() * 4 + f16_.size() * 2 + i8_.size();
}

BitmaskCompressed compress(const DenseMatrix& w, ValueWidth width) {
  const std::size_t wpr = mask_words_per_row(w.cols());
  std::vector<std::uint32_t> masks(w.rows() * wpr, 0u);
  std::vector<float> f32;
  std::vector<std::uint16_t> f16;
  std::vector<std::int8_t> i8;
  std::vector<float> scales;
  if (width == ValueWidth::int8) scales.resize(w.rows(), 0.0f);

  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    float scale = 0.0f;
    if (width == ValueWidth::int8) {
      scale = int8_scale(row);
      scales[r] = scale;
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      const float v = row[c];
      if (v == 0.0f) continue;
      masks[r * wpr + c / kMaskBits] |= 1u << (c % kMaskBits);
      switch (width) {
        case ValueWidth::fp32: f32.push_back(v); break;
        case ValueWidth::fp16: f16.push_back(float_to_half(v)); break;
        case ValueWidth::int8: i8.push_back(quantize_value(v, scale)); break;
      }
    }
  }
  return BitmaskCompressed(w.rows(), w.cols(), width, std::move(masks), std::move(f32), std::move(f16),
                           std::move(i8), std::move(scales));
}

DenseMatrix decompress(const BitmaskCompressed& c) {
  DenseMatrix w(c.rows(), c.cols());
  const auto offsets = c.row_offsets();
  for (std::size_t r = 0; r < c.rows(); ++r) {
    std::size_t k = offsets[r];
    const auto masks = c.row_masks(r);
    for (std::size_t word = 0; word < masks.size(); ++word) {
      for (std::uint32_t bits = masks[word]; bits != 0; bits &= bits - 1) {
        const std::size_t col = word * kMaskBits + static_cast<std::size_t>(std::countr_zero(bits));
        float v = 0.0f;
        switch (c.width()) {
          case ValueWidth::fp32: v = c.f32_values()[k]; break;
          case ValueWidth::fp16: v = half_to_float(c.f16_values()[k]); break;
          case ValueWidth::int8: v = static_cast<float>(c.i8_values()[k]) * c.scales()[r]; break;
        }
        w(r, col) = v;
        ++k;
      }
    }
  }
  return w;
}

void write_skbc(std::ostream& out, const BitmaskCompressed& c) {
  detail::write_magic(out, "SKBC");
  detail::write_u32(out, static_cast<std::uint32_t>(c.rows()));
  detail::write_u32(out, static_cast<std::uint32_t>(c.cols()));
  out.put(static_cast<char>(c.width()));
  for (std::uint32_t m : c.masks()) detail::write_u32(out, m);
  switch (c.width()) {
    case ValueWidth::fp32:
      for (float v : c.f32_values()) detail::write_f32(out, v);
      break;
    case ValueWidth::fp16:
      for (std::uint16_t v : c.f16_values()) {
        out.put(static_cast<char>(v & 0xFF));
        out.put(static_cast<char>(v >> 8));
      }
      break;
    case ValueWidth::int8:
      for (std::int8_t v : c.i8_values()) out.put(static_cast<char>(v));
      for (float s : c.scales()) detail::write_f32(out, s);
      break;
  }
  if (!out) throw Error("write failed");
}

BitmaskCompressed read_skbc(std::istream& in) {
  detail::expect_magic(in, "SKBC");
  const std::size_t rows = detail::read_u32(in);
  const std::size_t cols = detail::read_u32(in);
  const int tag = in.get();
  if (tag < 0 || tag > 2) throw FormatError("unknown value width tag " + std::to_string(tag));
  const auto width = static_cast<ValueWidth>(tag);

  std::vector<std::uint32_t> masks(rows * mask_words_per_row(cols));
  std::size_t nnz = 0;
  for (auto& m : masks) {
    m = detail::read_u32(in);
    nnz += std::popcount(m);
  }

  // The payload length is implied by the masks; a short or long payload is
  // a mask/value mismatch.
  std::vector<float> f32;
  std::vector<std::uint16_t> f16;
  std::vector<std::int8_t> i8;
  std::vector<float> scales;
  auto truncated = [&] {
    return FormatError("SKBC payload shorter than mask popcount " + std::to_string(nnz));
  };
  switch (width) {
    case ValueWidth::fp32:
      f32.resize(nnz);
      for (float& v : f32) {
        if (in.peek() == std::char_traits<char>::eof()) throw truncated();
        v = detail::read_f32(in);
      }
      break;
    case ValueWidth::fp16:
      f16.resize(nnz);
      for (auto& v : f16) {
        unsigned char b[2];
        if (!in.read(reinterpret_cast<char*>(b), 2)) throw truncated();
        v = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
      }
      break;
    case ValueWidth::int8:
      i8.resize(nnz);
      if (nnz > 0 && !in.read(reinterpret_cast<char*>(i8.data()), static_cast<std::streamsize>(nnz))) throw truncated();
      scales.resize(rows);
      for (float& s : scales) {
        if (in.peek() == std::char_traits<char>::eof()) throw truncated();
        s = detail::read_f32(in);
      }
      break;
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("SKBC payload longer than mask popcount " + std::to_string(nnz));
  }
  return BitmaskCompressed(rows, cols, width, std::move(masks), std::move(f32), std::move(f16), std::move(i8),
                           std::move(scales));
}

void save_skbc(const std::filesystem::path& path, const BitmaskCompressed& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_skbc(out, c);
}

BitmaskCompressed load_skbc(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_skbc(in);
}

void NMPattern::check() const {
  if (n < 1 || n > m) {
    throw InvalidArgument("invalid N:M pattern " + std::to_string(n) + ":" + std::to_string(m));
  }
}

NMPattern parse_nm_pattern(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw InvalidArgument("N:M pattern must look like 2:4");
  NMPattern p;
  const auto parse = [&](std::string_view part, std::size_t& out) {
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc{} || ptr != part.data() + part.size()) {
      throw InvalidArgument("bad N:M pattern '" + std::string(text) + "'");
    }
  };
  parse(text.substr(0, colon), p.n);
  parse(text.substr(colon + 1), p.m);
  p.check();
  return p;
}

bool conforms(const DenseMatrix& w, const NMPattern& p, bool exact) {
  p.check();
  if (w.cols() % p.m != 0) return false;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    for (std::size_t b = 0; b < row.size(); b += p.m) {
      const auto kept = static_cast<std::size_t>(
          std::count_if(row.begin() + b, row.begin() + b + p.m, [](float v) { return v != 0.0f; }));
      if (kept > p.n || (exact && kept != p.n)) return false;
    }
  }
  return true;
}

double bits_per_weight(unsigned value_bits, double density) {
  if (!(density >= 0.0 && density <= 1.0)) throw InvalidArgument("density must lie in [0, 1]");
  if (value_bits != 32 && value_bits != 16 && value_bits != 8) {
    throw InvalidArgument("value bits must be 32, 16 or 8");
  }
  return 1.0 + static_cast<double>(value_bits) * density;
}

double theoretical_speedup(unsigned dense_bits, unsigned value_bits, double density) {
  if (dense_bits == 0) throw InvalidArgument("dense bits must be positive");
  return static_cast<double>(dense_bits) / bits_per_weight(value_bits, density);
}

double compression_ratio_to_sparsity(double ratio) {
  if (!(ratio >= 1.0)) throw InvalidArgument("compression ratio must be >= 1");
  return 1.0 - 1.0 / ratio;
}

double sparsity_to_compression_ratio(double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw InvalidArgument("sparsity must lie in [0, 1)");
  return 1.0 / (1.0 - sparsity);
}

SparsityStats sparsity_of(const DenseMatrix& w, ValueWidth width, ValueWidth dense_width) {
  SparsityStats s;
  s.total = w.size();
  s.nnz = static_cast<std::size_t>(
      std::count_if(w.values().begin(), w.values().end(), [](float v) { return v != 0.0f; }));
  const double density = s.total == 0 ? 0.0 : static_cast<double>(s.nnz) / static_cast<double>(s.total);
  s.sparsity = s.total == 0 ? 0.0 : 1.0 - density;
  s.bits_per_weight = bits_per_weight(value_bits(width), density);
  s.theoretical_speedup = static_cast<double>(value_bits(dense_width)) / s.bits_per_weight;
  return s;
}

}  // namespace sparsekit
