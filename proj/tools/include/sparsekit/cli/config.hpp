#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sparsekit/bench.hpp"
#include "sparsekit/error.hpp"
#include "sparsekit/experiment.hpp"

namespace sparsekit::cli {

// Bad flags, bad config keys or values: exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

enum class Schedule { oneshot, gradual };

// Flat `key = value` file. Lists are comma separated, `#` starts a comment,
// blank lines are ignored. Unknown keys and repeated keys are errors. Keys
// and defaults are listed by render_config().
struct ExperimentConfig {
  RecoveryConfig recovery;
  // `train` fine-tunes the teacher through sparsity_levels with this loss.
  LossVariant variant = LossVariant::squarehead;
  std::vector<double> sparsity_levels{0.5, 0.75, 0.9};
  // gradual: the experiment visits the sparsity_levels below each target first
  Schedule schedule = Schedule::oneshot;
  BenchConfig bench;
  bool run_bench = false;
  std::string output_dir = "runs";  // as written; see output_path()
  std::filesystem::path base_dir;   // directory of the config file

  std::filesystem::path output_path() const;
  // Settings the recovery experiment actually runs with.
  RecoveryConfig effective_recovery() const;
};

ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key, defaults applied, in a fixed order; parses back to the same
// config.
std::string render_config(const ExperimentConfig& config);

std::uint64_t fnv1a64(std::string_view data) noexcept;
// 16 hex digits over the rendered config minus output_dir, so moving the
// output elsewhere does not change the identity of a run.
std::string config_hash(const ExperimentConfig& config);

// "4096x12288" -> {4096, 12288}
std::pair<std::size_t, std::size_t> parse_shape(std::string_view text);
std::vector<double> parse_double_list(std::string_view text);

}  // namespace sparsekit::cli
