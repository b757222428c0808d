#pragma once

#include <cstddef>
#include <span>

#include "sparsekit/sparse_format.hpp"
#include "sparsekit/tensor.hpp"

namespace sparsekit {

// y = W x over bitmask-compressed weights without materialising W. Set bits
// are visited in ascending column order, so every row is summed in the same
// order as dense_matvec. fp16 payloads are widened to FP32 on unpack; int8
// rows accumulate q * x and apply the row scale once at the end.
Vector sparse_matvec(const BitmaskCompressed& c, std::span<const float> x);

// Rows are cut into tiles of `tile_rows` and the tiles are shared among
// `threads` workers. Output is bit-identical to sparse_matvec for every tile
// size and thread count.
Vector sparse_matvec_tiled(const BitmaskCompressed& c, std::span<const float> x, std::size_t tile_rows,
                           unsigned threads = 1);

// Dense matrix stored at a given width; the baseline the bitmask kernel is
// compared against. fp32 storage runs dense_matvec's exact loop.
class DensePacked {
 public:
  DensePacked(const DenseMatrix& w, ValueWidth width);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  ValueWidth width() const noexcept { return width_; }
  std::size_t bytes() const noexcept;

  Vector matvec(std::span<const float> x, unsigned threads = 1) const;

 private:
  void rows_into(std::span<const float> x, std::span<float> y, std::size_t begin, std::size_t end) const;

  std::size_t rows_;
  std::size_t cols_;
  ValueWidth width_;
  std::vector<float> f32_;
  std::vector<std::uint16_t> f16_;
  std::vector<std::int8_t> i8_;
  std::vector<float> scales_;
};

enum class StorageMode { dense, bitmask };

// Analytic bytes read for one matvec over the weights (inputs and outputs
// excluded). nnz is round(density * rows * cols). The bitmask figure adds
// per-row scales for int8; the dense figure is payload only.
std::size_t bytes_moved(std::size_t rows, std::size_t cols, ValueWidth width, double density, StorageMode mode);

// Worker cap from SPARSEKIT_THREADS, else hardware concurrency (at least 1).
unsigned default_threads();

}  // namespace sparsekit
