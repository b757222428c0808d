#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sparsekit/toy_model.hpp"

namespace sparsekit {

struct RecoveryConfig {
  TinyModelConfig model;
  SyntheticTaskConfig task;
  TrainConfig teacher;  // variant is always cross-entropy
  TrainConfig student = default_student();  // variant and seed are set per run
  // Fine-tuning draws this many sequences from the train split, per seed.
  std::size_t finetune_size = 256;
  std::vector<double> sparsities{0.75, 0.9};
  std::vector<LossVariant> variants{LossVariant::cross_entropy, LossVariant::standard_kd, LossVariant::squarehead};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  // Empty: one-shot pruning. Otherwise the levels below each target are
  // visited first, each followed by a full fine-tuning pass.
  std::vector<double> gradual_levels;
  // Per-level fine-tuning restarts warmup/decay; false runs one curve across
  // all levels.
  bool restart_lr = true;
  unsigned threads = 1;

  static TrainConfig default_student() {
    TrainConfig tc;
    tc.epochs = 60;
    tc.lr = 0.3;
    return tc;
  }
};

struct RecoveryRow {
  double sparsity = 0.0;
  LossVariant variant = LossVariant::cross_entropy;
  std::uint64_t seed = 0;
  double measured_sparsity = 0.0;
  double pruned_accuracy = 0.0;  // before fine-tuning
  double accuracy = 0.0;         // test split, after fine-tuning
  double entropy = 0.0;
  double int8_accuracy = 0.0;
  bool diverged = false;
  std::optional<std::size_t> diverged_step;
  std::string error;  // non-empty when the run failed
  std::vector<StepRecord> steps;
};

struct RecoveryReport {
  EvalResult teacher_val;
  EvalResult teacher_test;
  std::vector<RecoveryRow> rows;

  // Mean of a column over seeds for one (sparsity, variant) cell.
  double mean_accuracy(double sparsity, LossVariant variant) const;
  double mean_entropy(double sparsity, LossVariant variant) const;
  std::size_t failures() const;
};

SyntheticTask make_task(const RecoveryConfig& config);

// Dense cross-entropy training from a seeded init.
TinyModel train_teacher(const RecoveryConfig& config, const SyntheticTask& task, TrainRun* log = nullptr);

// One student: copy the teacher, prune (through the gradual levels below
// `sparsity`, if any), fine-tune, evaluate on the test split. Failures are
// caught into row.error. The fine-tuned student is moved to student_out.
RecoveryRow run_recovery(const RecoveryConfig& config, const TinyModel& teacher, const SyntheticTask& task,
                         double sparsity, LossVariant variant, std::uint64_t seed, TinyModel* student_out = nullptr);

// Copies the teacher, prunes, fine-tunes with each variant, evaluates.
// Rows come out ordered by sparsity, then variant, then seed. A failing run
// is recorded in its row and the rest continue.
RecoveryReport run_recovery_experiment(const RecoveryConfig& config, const TinyModel& teacher,
                                       const SyntheticTask& task);

// Simulated INT8 inference: every weight matrix passes through per-row
// quantize -> dequantize (biases stay FP32).
struct QuantizedEval {
  double fp32_accuracy = 0.0;
  double int8_accuracy = 0.0;
  double delta() const noexcept { return int8_accuracy - fp32_accuracy; }
};
TinyModel fake_quantize_model(const TinyModel& model);
QuantizedEval quantized_eval(const TinyModel& model, const Dataset& split);

inline constexpr const char* kAccuracyCsvHeader = "sparsity,variant,seed,accuracy,entropy,diverged";

void write_accuracy_csv(std::ostream& out, const RecoveryReport& report);
// sparsity,variant,seed,metric,value
void write_long_csv(std::ostream& out, const RecoveryReport& report);
// sparsity,variant,seed,fp32_accuracy,int8_accuracy,delta
void write_quant_csv(std::ostream& out, const RecoveryReport& report);
// One row per optimizer step: run-prefixed loss CSV.
void write_steps_csv(std::ostream& out, const RecoveryReport& report);

}  // namespace sparsekit
