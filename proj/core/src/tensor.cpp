#include "sparsekit/tensor.hpp"

#include <algorithm>
#include <thread>

namespace sparsekit {
namespace {

void check_matvec(const DenseMatrix& w, std::span<const float> x) {
  if (x.size() != w.cols()) {
    throw DimensionError("matvec: x has " + std::to_string(x.size()) + " entries, W has " +
                         std::to_string(w.cols()) + " columns");
  }
}

void matvec_rows(const DenseMatrix& w, std::span<const float> x, std::span<float> y,
                 std::size_t begin, std::size_t end) {
  const std::size_t cols = w.cols();
  for (std::size_t i = begin; i < end; ++i) {
    const float* row = w.data() + i * cols;
    float acc = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

}  // namespace

Vector dense_matvec(const DenseMatrix& w, std::span<const float> x) {
  check_matvec(w, x);
  Vector y(w.rows(), 0.0f);
  matvec_rows(w, x, y, 0, w.rows());
  return y;
}

Vector dense_matvec_parallel(const DenseMatrix& w, std::span<const float> x, unsigned threads) {
  check_matvec(w, x);
  Vector y(w.rows(), 0.0f);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(w.rows(), 1))));
  if (threads == 1) {
    matvec_rows(w, x, y, 0, w.rows());
    return y;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (w.rows() + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(w.rows(), begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] { matvec_rows(w, x, y, begin, end); });
  }
  return y;
}

DenseMatrix dense_matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
  }
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const float aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

template <typename T>
void softmax_into(std::span<const T> logits, std::span<T> out) {
  if (logits.empty()) throw InvalidArgument("softmax of an empty vector");
  if (out.size() != logits.size()) throw DimensionError("softmax: output size mismatch");
  const T peak = *std::max_element(logits.begin(), logits.end());
  T total = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (T& v : out) v /= total;
}

template void softmax_into<float>(std::span<const float>, std::span<float>);
template void softmax_into<double>(std::span<const double>, std::span<double>);

Vector softmax(std::span<const float> logits) {
  Vector p(logits.size());
  softmax_into<float>(logits, p);
  return p;
}

}  // namespace sparsekit
