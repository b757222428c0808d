#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sparsekit/sparse_format.hpp"

namespace sparsekit {

struct BenchConfig {
  std::size_t rows = 4096;
  std::size_t cols = 12288;
  std::vector<double> sparsities{0.5, 0.6, 0.7, 0.8, 0.9};
  ValueWidth width = ValueWidth::fp32;
  std::size_t reps = 30;
  std::size_t warmup = 3;
  unsigned threads = 1;
  std::size_t tile_rows = 64;
  std::uint64_t seed = 42;
};

struct BenchResult {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double sparsity = 0.0;
  ValueWidth width = ValueWidth::fp32;
  unsigned threads = 1;
  std::size_t reps = 0;
  std::size_t warmup = 0;
  bool dense_kernel = false;  // true for the baseline row and sparsity 0
  double median_ns = 0.0;
  double mean_ns = 0.0;
  double p95_ns = 0.0;
  std::size_t bytes_moved = 0;
  double gbps = 0.0;  // bytes_moved / median latency
  double self_speedup = 0.0;
  std::string warning;
};

inline constexpr std::size_t kMinReps = 30;

// Dense baseline first, then one row per requested sparsity, all on the same
// seeded weights and input. Every kernel output is checked against the dense
// oracle before it is timed; a mismatch throws.
std::vector<BenchResult> run_bench(const BenchConfig& config);

// Conservative peak-memory estimate for run_bench, for refusing huge shapes
// before allocating.
std::size_t bench_memory_estimate(const BenchConfig& config);

// Bytes available according to /proc/meminfo, 0 when unknown.
std::size_t available_memory_bytes();

// Smallest observable steady_clock increment, in ns.
double timer_tick_ns();

struct LatencyStats {
  double median = 0.0;
  double mean = 0.0;
  double p95 = 0.0;
};
LatencyStats summarize(std::vector<double> samples);

inline constexpr const char* kBenchCsvHeader =
    "shape_rows,shape_cols,sparsity,value_width,threads,median_ns,mean_ns,p95_ns,bytes_moved,gbps,self_speedup";

void write_bench_csv(std::ostream& out, const std::vector<BenchResult>& results);

}  // namespace sparsekit
