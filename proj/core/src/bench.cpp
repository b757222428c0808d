#include "sparsekit/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "sparsekit/kernels.hpp"
#include "sparsekit/pruning.hpp"
#include "sparsekit/rng.hpp"

namespace sparsekit {
namespace {

using Clock = std::chrono::steady_clock;

template <typename Fn>
std::vector<double> time_reps(Fn&& fn, std::size_t reps, std::size_t warmup) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto start = Clock::now();
    fn();
    const auto stop = Clock::now();
    samples.push_back(std::chrono::duration<double, std::nano>(stop - start).count());
  }
  return samples;
}

// |y - ref| <= tol * sum_j |W_ij x_j| per row.
bool matches_oracle(const Vector& y, const DenseMatrix& w, std::span<const float> x, double tol) {
  const Vector ref = dense_matvec(w, x);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double magnitude = 0.0;
    const auto row = w.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) magnitude += std::fabs(static_cast<double>(row[j]) * x[j]);
    const double err = std::fabs(static_cast<double>(y[i]) - ref[i]);
    if (err > tol * std::max(magnitude, 1e-30)) return false;
  }
  return true;
}

BenchResult make_result(const BenchConfig& cfg, double sparsity, bool dense, const LatencyStats& stats,
                        std::size_t bytes, double tick) {
  BenchResult r;
  r.rows = cfg.rows;
  r.cols = cfg.cols;
  r.sparsity = sparsity;
  r.width = cfg.width;
  r.threads = cfg.threads;
  r.reps = cfg.reps;
  r.warmup = cfg.warmup;
  r.dense_kernel = dense;
  r.median_ns = stats.median;
  r.mean_ns = stats.mean;
  r.p95_ns = stats.p95;
  r.bytes_moved = bytes;
  r.gbps = stats.median > 0 ? static_cast<double>(bytes) / stats.median : 0.0;
  if (stats.median < 100.0 * tick) {
    std::ostringstream msg;
    msg << "median " << stats.median << " ns is below 100x the timer tick (" << tick << " ns)";
    r.warning = msg.str();
  }
  return r;
}

}  // namespace

LatencyStats summarize(std::vector<double> samples) {
  LatencyStats s;
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  s.median = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95 = samples[std::clamp<std::size_t>(rank, 1, n) - 1];
  return s;
}

double timer_tick_ns() {
  double best = 1e300;
  for (int i = 0; i < 64; ++i) {
    const auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best, std::chrono::duration<double, std::nano>(b - a).count());
  }
  return best;
}

std::size_t available_memory_bytes() {
  std::ifstream meminfo("/proc/meminfo");
  std::string key;
  std::size_t kb = 0;
  std::string unit;
  while (meminfo >> key >> kb >> unit) {
    if (key == "MemAvailable:") return kb * 1024;
  }
  return 0;
}

std::size_t bench_memory_estimate(const BenchConfig& c) {
  const std::size_t n = c.rows * c.cols;
  // source matrix, pruned copy, magnitude scratch, dense packed baseline,
  // compressed payload + masks, decompressed oracle.
  return n * 4 * 5 + n * (value_bits(c.width) / 8) + c.rows * mask_words_per_row(c.cols) * 4;
}

std::vector<BenchResult> run_bench(const BenchConfig& cfg) {
  if (cfg.reps < kMinReps) throw InvalidArgument("benchmark needs at least " + std::to_string(kMinReps) + " reps");
  if (cfg.rows == 0 || cfg.cols == 0) throw InvalidArgument("benchmark shape must be positive");
  for (double s : cfg.sparsities) {
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("benchmark sparsity outside [0, 1]");
  }
  const unsigned threads = std::max(1u, cfg.threads);
  const double tick = timer_tick_ns();
  const double tol = cfg.width == ValueWidth::int8 ? 1e-4 : 1e-5;

  Rng rng(cfg.seed);
  const DenseMatrix source = random_matrix(cfg.rows, cfg.cols, rng, Gaussian{1.0});
  Vector x(cfg.cols);
  for (float& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  std::vector<BenchResult> results;
  double dense_median = 0.0;
  {
    const DensePacked dense(source, cfg.width);
    Vector y = dense.matvec(x, threads);
    // The stored payload (rounded or quantized) is what the oracle sees.
    const DenseMatrix effective = cfg.width == ValueWidth::fp32 ? source : decompress(compress(source, cfg.width));
    if (!matches_oracle(y, effective, x, tol)) throw Error("dense baseline failed the correctness gate");
    const auto stats = summarize(time_reps([&] { y = dense.matvec(x, threads); }, cfg.reps, cfg.warmup));
    dense_median = stats.median;
    results.push_back(make_result(cfg, 0.0, true, stats,
                                  bytes_moved(cfg.rows, cfg.cols, cfg.width, 1.0, StorageMode::dense), tick));
  }

  for (double s : cfg.sparsities) {
    LatencyStats stats;
    std::size_t bytes = 0;
    bool dense_kernel = false;
    if (s == 0.0) {
      // No pruning: the configuration is the dense kernel itself.
      const DensePacked dense(source, cfg.width);
      Vector y;
      stats = summarize(time_reps([&] { y = dense.matvec(x, threads); }, cfg.reps, cfg.warmup));
      bytes = bytes_moved(cfg.rows, cfg.cols, cfg.width, 1.0, StorageMode::dense);
      dense_kernel = true;
    } else {
      BitmaskCompressed c;
      {
        auto pruned = magnitude_prune(source, s);
        c = compress(pruned.weights, cfg.width);
      }
      Vector y = sparse_matvec_tiled(c, x, cfg.tile_rows, threads);
      if (!matches_oracle(y, decompress(c), x, tol)) {
        throw Error("sparse kernel failed the correctness gate at sparsity " + std::to_string(s));
      }
      stats = summarize(time_reps([&] { y = sparse_matvec_tiled(c, x, cfg.tile_rows, threads); }, cfg.reps, cfg.warmup));
      const double density = static_cast<double>(c.nnz()) / static_cast<double>(cfg.rows * cfg.cols);
      bytes = bytes_moved(cfg.rows, cfg.cols, cfg.width, density, StorageMode::bitmask);
    }
    results.push_back(make_result(cfg, s, dense_kernel, stats, bytes, tick));
  }
  for (auto& r : results) r.self_speedup = r.median_ns > 0 ? dense_median / r.median_ns : 0.0;
  return results;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchResult>& results) {
  out << kBenchCsvHeader << '\n';
  for (const auto& r : results) {
    out << r.rows << ',' << r.cols << ',' << r.sparsity << ',' << to_string(r.width) << ',' << r.threads << ','
        << r.median_ns << ',' << r.mean_ns << ',' << r.p95_ns << ',' << r.bytes_moved << ',' << r.gbps << ','
        << r.self_speedup << '\n';
  }
}

}  // namespace sparsekit
