#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sparsekit/cli/config.hpp"

namespace sparsekit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Whole command line, in-process. Never throws; returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Report tables. Column orders are fixed:
//   accuracy: sparsity,variant,seeds,mean_accuracy,mean_entropy,diverged_runs,failed_runs
//   quant:    sparsity,variant,mean_fp32_accuracy,mean_int8_accuracy,mean_delta
//   speedup:  sparsity,value_width,bits_per_weight,theoretical_speedup,measured_speedup,median_ns
//   storage:  sparsity,bits_fp32,bits_fp16,bits_int8,speedup_fp32,speedup_fp16,speedup_int8
// Speedups in the storage table are against a dense fp32 layer; int8 bits
// exclude scales.
inline constexpr const char* kReportAccuracyHeader =
    "sparsity,variant,seeds,mean_accuracy,mean_entropy,diverged_runs,failed_runs";
inline constexpr const char* kReportQuantHeader = "sparsity,variant,mean_fp32_accuracy,mean_int8_accuracy,mean_delta";
inline constexpr const char* kReportSpeedupHeader =
    "sparsity,value_width,bits_per_weight,theoretical_speedup,measured_speedup,median_ns";
inline constexpr const char* kReportStorageHeader =
    "sparsity,bits_fp32,bits_fp16,bits_int8,speedup_fp32,speedup_fp16,speedup_int8";

struct Report {
  std::string markdown;
  std::vector<std::string> missing;  // artifact file names not found
  bool empty = false;                // nothing to report at all
  // name -> CSV text
  std::vector<std::pair<std::string, std::string>> tables;
};

Report build_report(const std::filesystem::path& run_dir);

// Run directory for a config: <output>/<prefix>-<hash>.
std::filesystem::path run_directory(const ExperimentConfig& config, const std::string& prefix);

}  // namespace sparsekit::cli
