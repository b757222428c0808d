#include "sparsekit/quant.hpp"

#include <algorithm>
#include <cmath>

namespace sparsekit {

float int8_scale(std::span<const float> row) noexcept {
  float peak = 0.0f;
  for (float v : row) peak = std::max(peak, std::fabs(v));
  return peak / kInt8Max;
}

std::int8_t quantize_value(float w, float scale) noexcept {
  if (w == 0.0f || scale == 0.0f) return 0;
  // std::round rounds half away from zero.
  const float q = std::round(w / scale);
  return static_cast<std::int8_t>(std::clamp(q, -kInt8Max, kInt8Max));
}

QuantizedMatrix quantize_int8(const DenseMatrix& w) {
  QuantizedMatrix q{w.rows(), w.cols(), std::vector<std::int8_t>(w.size()), std::vector<float>(w.rows())};
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    const float scale = int8_scale(row);
    q.scales[r] = scale;
    for (std::size_t c = 0; c < row.size(); ++c) q.values[r * w.cols() + c] = quantize_value(row[c], scale);
  }
  return q;
}

DenseMatrix dequantize(const QuantizedMatrix& q) {
  DenseMatrix w(q.rows, q.cols);
  for (std::size_t r = 0; r < q.rows; ++r) {
    for (std::size_t c = 0; c < q.cols; ++c) w(r, c) = static_cast<float>(q(r, c)) * q.scales[r];
  }
  return w;
}

DenseMatrix fake_quantize(const DenseMatrix& w) { return dequantize(quantize_int8(w)); }

BitmaskCompressed sparse_quant_compress(const DenseMatrix& pruned) { return compress(pruned, ValueWidth::int8); }

QuantStorage int8_storage(const BitmaskCompressed& c) {
  QuantStorage s;
  const double positions = static_cast<double>(c.rows() * c.cols());
  if (positions == 0.0) return s;
  s.bits_per_weight = bits_per_weight(8, static_cast<double>(c.nnz()) / positions);
  s.scale_bits_per_weight = 32.0 * static_cast<double>(c.scales().size()) / positions;
  return s;
}

}  // namespace sparsekit
