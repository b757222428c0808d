#include "sparsekit/kernels.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

#include "sparsekit/half.hpp"
#include "sparsekit/quant.hpp"

namespace sparsekit {
namespace {

const std::array<float, 65536>& half_table() {
  static const auto table = [] {
    std::array<float, 65536> t{};
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = half_to_float(static_cast<std::uint16_t>(i));
    return t;
  }();
  return table;
}

struct F32Load {
  const float* values;
  float operator()(std::size_t k) const noexcept { return values[k]; }
};
struct F16Load {
  const std::uint16_t* values;
  const float* table;
  float operator()(std::size_t k) const noexcept { return table[values[k]]; }
};
struct I8Load {
  const std::int8_t* values;
  float operator()(std::size_t k) const noexcept { return static_cast<float>(values[k]); }
};

template <typename Load>
void bitmask_rows(const BitmaskCompressed& c, Load load, std::span<const float> x, std::span<float> y,
                  std::size_t begin, std::size_t end) {
  const std::size_t wpr = c.words_per_row();
  const std::uint32_t* masks = c.masks().data();
  const std::size_t* offsets = c.row_offsets().data();
  const float* xp = x.data();
  const bool scaled = c.width() == ValueWidth::int8;
  for (std::size_t r = begin; r < end; ++r) {
    std::size_t k = offsets[r];
    float acc = 0.0f;
    const std::uint32_t* row_masks = masks + r * wpr;
    for (std::size_t w = 0; w < wpr; ++w) {
      const float* xw = xp + w * kMaskBits;
      for (std::uint32_t bits = row_masks[w]; bits != 0; bits &= bits - 1) {
        acc += load(k++) * xw[std::countr_zero(bits)];
      }
    }
    y[r] = scaled ? acc * c.scales()[r] : acc;
  }
}

void check_input(const BitmaskCompressed& c, std::span<const float> x) {
  if (x.size() != c.cols()) {
    throw DimensionError("sparse_matvec: x has " + std::to_string(x.size()) + " entries, W has " +
                         std::to_string(c.cols()) + " columns");
  }
  if (c.row_offsets().size() != c.rows() + 1) throw FormatError("sparse_matvec: corrupt row offsets");
}

void rows_dispatch(const BitmaskCompressed& c, std::span<const float> x, std::span<float> y, std::size_t begin,
                   std::size_t end) {
  switch (c.width()) {
    case ValueWidth::fp32: bitmask_rows(c, F32Load{c.f32_values().data()}, x, y, begin, end); break;
    case ValueWidth::fp16:
      bitmask_rows(c, F16Load{c.f16_values().data(), half_table().data()}, x, y, begin, end);
      break;
    case ValueWidth::int8: bitmask_rows(c, I8Load{c.i8_values().data()}, x, y, begin, end); break;
  }
}

// Hands out [begin, end) tiles to a fixed number of workers.
template <typename Body>
void for_each_tile(std::size_t rows, std::size_t tile_rows, unsigned threads, Body body) {
  const std::size_t tiles = (rows + tile_rows - 1) / tile_rows;
  threads = static_cast<unsigned>(std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(tiles, 1)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next.fetch_add(1, std::memory_order_relaxed); t < tiles;
         t = next.fetch_add(1, std::memory_order_relaxed)) {
      body(t * tile_rows, std::min(rows, (t + 1) * tile_rows));
    }
  };
  if (threads == 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads - 1);
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
}

}  // namespace

Vector sparse_matvec(const BitmaskCompressed& c, std::span<const float> x) {
  check_input(c, x);
  Vector y(c.rows(), 0.0f);
  rows_dispatch(c, x, y, 0, c.rows());
  return y;
}

Vector sparse_matvec_tiled(const BitmaskCompressed& c, std::span<const float> x, std::size_t tile_rows,
                           unsigned threads) {
  if (tile_rows == 0) throw InvalidArgument("tile_rows must be >= 1");
  check_input(c, x);
  Vector y(c.rows(), 0.0f);
  for_each_tile(c.rows(), tile_rows, threads,
                [&](std::size_t begin, std::size_t end) { rows_dispatch(c, x, y, begin, end); });
  return y;
}

DensePacked::DensePacked(const DenseMatrix& w, ValueWidth width) : rows_(w.rows()), cols_(w.cols()), width_(width) {
  switch (width) {
    case ValueWidth::fp32: f32_.assign(w.values().begin(), w.values().end()); break;
    case ValueWidth::fp16:
      f16_.reserve(w.size());
      for (float v : w.values()) f16_.push_back(float_to_half(v));
      break;
    case ValueWidth::int8: {
      const auto q = quantize_int8(w);
      i8_ = q.values;
      scales_ = q.scales;
      break;
    }
  }
}

std::size_t DensePacked::bytes() const noexcept {
  return f32_.size() * 4 + f16_.size() * 2 + i8_.size() + scales_.size() * 4;
}

void DensePacked::rows_into(std::span<const float> x, std::span<float> y, std::size_t begin, std::size_t end) const {
  const float* xp = x.data();
  for (std::size_t r = begin; r < end; ++r) {
    float acc = 0.0f;
    switch (width_) {
      case ValueWidth::fp32: {
        const float* row = f32_.data() + r * cols_;
        for (std::size_t j = 0; j < cols_; ++j) acc += row[j] * xp[j];
        break;
      }
      case ValueWidth::fp16: {
        const std::uint16_t* row = f16_.data() + r * cols_;
        const float* table = half_table().data();
        for (std::size_t j = 0; j < cols_; ++j) acc += table[row[j]] * xp[j];
        break;
      }
      case ValueWidth::int8: {
        const std::int8_t* row = i8_.data() + r * cols_;
        for (std::size_t j = 0; j < cols_; ++j) acc += static_cast<float>(row[j]) * xp[j];
        acc *= scales_[r];
        break;
      }
    }
    y[r] = acc;
  }
}

Vector DensePacked::matvec(std::span<const float> x, unsigned threads) const {
  if (x.size() != cols_) throw DimensionError("dense matvec: input length mismatch");
  Vector y(rows_, 0.0f);
  const std::size_t tile = std::max<std::size_t>(1, rows_ / (static_cast<std::size_t>(threads) * 4));
  for_each_tile(rows_, tile, threads, [&](std::size_t begin, std::size_t end) { rows_into(x, y, begin, end); });
  return y;
}

std::size_t bytes_moved(std::size_t rows, std::size_t cols, ValueWidth width, double density, StorageMode mode) {
  if (!(density >= 0.0 && density <= 1.0)) throw InvalidArgument("density must lie in [0, 1]");
  const std::size_t value_bytes = value_bits(width) / 8;
  if (mode == StorageMode::dense) return rows * cols * value_bytes;
  const std::size_t scale_bytes = width == ValueWidth::int8 ? rows * 4 : 0;
  const auto nnz = static_cast<std::size_t>(std::llround(density * static_cast<double>(rows * cols)));
  return mask_words_per_row(cols) * 4 * rows + nnz * value_bytes + scale_bytes;
}

unsigned default_threads() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SPARSEKIT_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) hw = std::min<unsigned>(hw, static_cast<unsigned>(cap));
    } catch (const std::exception&) {
    }
  }
  return hw;
}

}  // namespace sparsekit
