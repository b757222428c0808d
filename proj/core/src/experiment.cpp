#include "sparsekit/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ostream>
#include <thread>

#include "sparsekit/quant.hpp"

namespace sparsekit {
namespace {

struct RunSpec {
  double sparsity;
  LossVariant variant;
  std::uint64_t seed;
};

std::vector<std::size_t> finetune_rows(const RecoveryConfig& config, const Dataset& train, std::uint64_t seed) {
  const std::size_t n = train.size();
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  if (config.finetune_size == 0 || config.finetune_size >= n) return rows;
  // Partial Fisher-Yates; the subset depends only on the seed.
  Rng rng(0x5eed0000ull + seed);
  for (std::size_t i = 0; i < config.finetune_size; ++i) {
    std::swap(rows[i], rows[i + rng.below(n - i)]);
  }
  rows.resize(config.finetune_size);
  return rows;
}

}  // namespace

RecoveryRow run_recovery(const RecoveryConfig& config, const TinyModel& teacher, const SyntheticTask& task,
                         double sparsity, LossVariant variant, std::uint64_t seed, TinyModel* student_out) {
  const RunSpec spec{sparsity, variant, seed};
  RecoveryRow row;
  row.sparsity = spec.sparsity;
  row.variant = spec.variant;
  row.seed = spec.seed;
  try {
    TinyModel student = teacher;
    const auto rows = finetune_rows(config, task.train, spec.seed);
    const Dataset finetune_set = task.train.subset(rows);

    TrainConfig tc = config.student;
    tc.variant = spec.variant;
    tc.seed = spec.seed;

    SparsitySchedule schedule;
    for (double level : config.gradual_levels) {
      if (level < spec.sparsity) schedule.levels.push_back(level);
    }
    if (spec.sparsity > 0.0) schedule.levels.push_back(spec.sparsity);
    schedule.finetune_epochs_per_level = tc.epochs;
    schedule.restart_lr_per_level = config.restart_lr;

    const MagnitudePruner pruner;
    const auto layers = prunable_layers(student);
    bool first_level = true;
    const std::size_t level_steps = (finetune_set.size() + tc.batch_size - 1) / tc.batch_size * tc.epochs;
    auto finetune = [&](std::size_t level, double, std::size_t) -> std::map<std::string, double> {
      if (first_level) {
        row.pruned_accuracy = evaluate(student, task.test).accuracy;
        first_level = false;
      }
      TrainConfig level_tc = tc;
      level_tc.eval_each_epoch = false;
      if (!schedule.restart_lr_per_level) {
        level_tc.lr_step_offset = level * level_steps;
        level_tc.lr_total_steps = std::max<std::size_t>(1, schedule.levels.size()) * level_steps;
      }
      const TrainRun run = train(student, finetune_set, nullptr, level_tc, &teacher);
      const std::size_t offset = row.steps.size();
      for (auto s : run.steps) {
        s.step += offset;
        row.steps.push_back(s);
      }
      if (run.diverged && !row.diverged) {
        row.diverged = true;
        row.diverged_step = offset + *run.diverged_step;
      }
      if (run.halted) throw Error("training halted on a non-finite loss");
      return {{"steps", static_cast<double>(run.steps.size())}};
    };

    if (schedule.levels.empty()) {
      // Dense fine-tuning: a schedule with no levels would skip training.
      finetune(0, 0.0, tc.epochs);
    } else {
      run_schedule(layers, schedule, pruner, finetune);
    }
    row.measured_sparsity = prunable_sparsity(student);
    const auto test = evaluate(student, task.test);
    row.accuracy = test.accuracy;
    row.entropy = test.entropy;
    row.int8_accuracy = quantized_eval(student, task.test).int8_accuracy;
    if (student_out != nullptr) *student_out = std::move(student);
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

namespace {

double mean_of(const std::vector<RecoveryRow>& rows, double sparsity, LossVariant variant, double RecoveryRow::*field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.variant == variant && std::fabs(r.sparsity - sparsity) < 1e-12 && r.error.empty()) {
      sum += r.*field;
      ++n;
    }
  }
  return n == 0 ? NAN : sum / static_cast<double>(n);
}

}  // namespace

double RecoveryReport::mean_accuracy(double sparsity, LossVariant variant) const {
  return mean_of(rows, sparsity, variant, &RecoveryRow::accuracy);
}

double RecoveryReport::mean_entropy(double sparsity, LossVariant variant) const {
  return mean_of(rows, sparsity, variant, &RecoveryRow::entropy);
}

std::size_t RecoveryReport::failures() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.error.empty(); }));
}

SyntheticTask make_task(const RecoveryConfig& config) {
  SyntheticTaskConfig tc = config.task;
  tc.vocab = config.model.vocab;
  tc.seq = config.model.seq;
  return make_task(tc);
}

TinyModel train_teacher(const RecoveryConfig& config, const SyntheticTask& task, TrainRun* log) {
  Rng rng(config.teacher.seed);
  TinyModel teacher = TinyModel::initialized(config.model, rng);
  TrainConfig tc = config.teacher;
  tc.variant = LossVariant::cross_entropy;
  TrainRun run = train(teacher, task.train, &task.val, tc);
  if (log != nullptr) *log = std::move(run);
  teacher.masks.clear();
  return teacher;
}

RecoveryReport run_recovery_experiment(const RecoveryConfig& config, const TinyModel& teacher,
                                       const SyntheticTask& task) {
  RecoveryReport report;
  report.teacher_val = evaluate(teacher, task.val);
  report.teacher_test = evaluate(teacher, task.test);

  std::vector<RunSpec> specs;
  for (double s : config.sparsities) {
    for (auto v : config.variants) {
      for (auto seed : config.seeds) specs.push_back(RunSpec{s, v, seed});
    }
  }
  report.rows.resize(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < specs.size(); i = next.fetch_add(1)) {
      report.rows[i] = run_recovery(config, teacher, task, specs[i].sparsity, specs[i].variant, specs[i].seed);
    }
  };
  const unsigned threads = std::clamp<unsigned>(config.threads, 1, static_cast<unsigned>(std::max<std::size_t>(1, specs.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  return report;
}

TinyModel fake_quantize_model(const TinyModel& model) {
  TinyModel q = model;
  q.embedding = fake_quantize(q.embedding);
  q.prev_embedding = fake_quantize(q.prev_embedding);
  for (auto& b : q.blocks) {
    b.w1 = fake_quantize(b.w1);
    b.w2 = fake_quantize(b.w2);
  }
  q.head = fake_quantize(q.head);
  return q;
}

QuantizedEval quantized_eval(const TinyModel& model, const Dataset& split) {
  QuantizedEval out;
  out.fp32_accuracy = evaluate(model, split).accuracy;
  out.int8_accuracy = evaluate(fake_quantize_model(model), split).accuracy;
  return out;
}

void write_accuracy_csv(std::ostream& out, const RecoveryReport& report) {
  out << kAccuracyCsvHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.sparsity << ',' << to_string(r.variant) << ',' << r.seed << ',';
    if (r.error.empty()) {
      out << r.accuracy << ',' << r.entropy << ',' << (r.diverged ? 1 : 0) << '\n';
    } else {
      out << "nan,nan," << (r.diverged ? 1 : 0) << '\n';
    }
  }
}

void write_long_csv(std::ostream& out, const RecoveryReport& report) {
  out << "sparsity,variant,seed,metric,value\n";
  for (const auto& r : report.rows) {
    const auto emit = [&](const char* metric, double value) {
      out << r.sparsity << ',' << to_string(r.variant) << ',' << r.seed << ',' << metric << ',' << value << '\n';
    };
    emit("accuracy", r.error.empty() ? r.accuracy : NAN);
    emit("entropy", r.error.empty() ? r.entropy : NAN);
    emit("pruned_accuracy", r.pruned_accuracy);
    emit("int8_accuracy", r.error.empty() ? r.int8_accuracy : NAN);
    emit("measured_sparsity", r.measured_sparsity);
    emit("diverged", r.diverged ? 1.0 : 0.0);
  }
}

void write_quant_csv(std::ostream& out, const RecoveryReport& report) {
  out << "sparsity,variant,seed,fp32_accuracy,int8_accuracy,delta\n";
  for (const auto& r : report.rows) {
    if (!r.error.empty()) continue;
    out << r.sparsity << ',' << to_string(r.variant) << ',' << r.seed << ',' << r.accuracy << ',' << r.int8_accuracy
        << ',' << (r.int8_accuracy - r.accuracy) << '\n';
  }
}

void write_steps_csv(std::ostream& out, const RecoveryReport& report) {
  out << "sparsity,seed," << kLossCsvHeader << '\n';
  for (const auto& r : report.rows) {
    for (const auto& s : r.steps) {
      out << r.sparsity << ',' << r.seed << ',' << s.step << ',' << to_string(r.variant) << ',' << s.task << ','
          << s.logit_kd << ',' << s.feat_total << ',' << s.total << ',' << s.entropy << '\n';
    }
  }
}

}  // namespace sparsekit
