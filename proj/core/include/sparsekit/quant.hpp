#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparsekit/sparse_format.hpp"
#include "sparsekit/tensor.hpp"

namespace sparsekit {

// Symmetric per-row INT8: scale = max|w| / 127, q = clamp(round(w / scale)),
// rounding half away from zero. Exact zeros stay exactly zero.
struct QuantizedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> values;
  std::vector<float> scales;

  std::int8_t operator()(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }
};

inline constexpr float kInt8Max = 127.0f;

float int8_scale(std::span<const float> row) noexcept;
std::int8_t quantize_value(float w, float scale) noexcept;

QuantizedMatrix quantize_int8(const DenseMatrix& w);
DenseMatrix dequantize(const QuantizedMatrix& q);

// quantize followed by dequantize, i.e. simulated INT8 weights.
DenseMatrix fake_quantize(const DenseMatrix& w);

// Pruned weights in, int8 bitmask payload out. Only the surviving nonzeros
// determine each row's scale.
BitmaskCompressed sparse_quant_compress(const DenseMatrix& pruned);

// Bits per weight of the int8 bitmask payload, excluding scales, and the
// amortised scale overhead reported separately.
struct QuantStorage {
  double bits_per_weight = 0.0;
  double scale_bits_per_weight = 0.0;
};
QuantStorage int8_storage(const BitmaskCompressed& c);

}  // namespace sparsekit
