#include "sparsekit/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparsekit/bench.hpp"
#include "sparsekit/io.hpp"
#include "sparsekit/kernels.hpp"
#include "sparsekit/pruning.hpp"
#include "sparsekit/rng.hpp"
#include "sparsekit/sparse_format.hpp"

namespace sparsekit::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Parameters shared by every subcommand.
struct Common {
  bool json = false;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

template <typename Fn>
void write_stream(const fs::path& path, Fn&& fn) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  fn(f);
  if (!f) throw Error("write failed: " + path.string());
}

json stats_json(const SparsityStats& s) {
  return json{{"sparsity", s.sparsity},
              {"nnz", s.nnz},
              {"total", s.total},
              {"bits_per_weight", s.bits_per_weight},
              {"theoretical_speedup", s.theoretical_speedup}};
}

ValueWidth width_arg(const std::string& s) {
  try {
    return parse_value_width(s);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

// Directory for a fresh run; refuses to reuse one unless forced.
fs::path prepare_run_dir(const ExperimentConfig& config, const std::string& prefix, bool force) {
  const fs::path dir = run_directory(config, prefix);
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw UsageError("run directory " + dir.string() + " already exists (same config); pass --force to overwrite");
  }
  fs::create_directories(dir);
  write_text(dir / "config.txt", render_config(config));
  return dir;
}

void write_train_steps(std::ostream& out, const TrainRun& run) {
  out << kLossCsvHeader << '\n';
  for (const auto& s : run.steps) {
    out << s.step << ',' << to_string(run.variant) << ',' << s.task << ',' << s.logit_kd << ',' << s.feat_total
        << ',' << s.total << ',' << s.entropy << '\n';
  }
}

// ---- prune / compress / random ---------------------------------------------

struct PruneArgs {
  std::string input, output, mask, nm, width = "fp32";
  std::optional<double> sparsity;
};

int cmd_prune(const PruneArgs& a, const Common& c) {
  if (a.sparsity.has_value() == !a.nm.empty()) throw UsageError("prune: give exactly one of --sparsity or --nm");
  const ValueWidth width = width_arg(a.width);
  std::optional<NMPattern> pattern;
  if (!a.nm.empty()) {
    try {
      pattern = parse_nm_pattern(a.nm);
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  }
  const DenseMatrix w = load_skdm(a.input);
  const PruneResult r = pattern ? nm_project(w, *pattern) : magnitude_prune(w, *a.sparsity);
  save_skdm(a.output, r.weights);
  fs::path mask_path = a.mask;
  if (mask_path.empty()) mask_path = fs::path(a.output).replace_extension(".mask.skdm");
  save_skdm(mask_path, r.mask.as_matrix());

  json j = stats_json(sparsity_of(r.weights, width));
  j["output"] = a.output;
  j["mask"] = mask_path.string();
  *c.out << j.dump(c.json ? -1 : 2) << '\n';
  return kExitOk;
}

struct CompressArgs {
  std::string input, output, width = "fp32";
  bool decompress = false;
};

int cmd_compress(const CompressArgs& a, const Common& c) {
  json j;
  if (a.decompress) {
    const BitmaskCompressed bc = load_skbc(a.input);
    save_skdm(a.output, decompress(bc));
    j = json{{"rows", bc.rows()}, {"cols", bc.cols()}, {"value_width", to_string(bc.width())}, {"nnz", bc.nnz()}};
  } else {
    const ValueWidth width = width_arg(a.width);
    const DenseMatrix w = load_skdm(a.input);
    const BitmaskCompressed bc = compress(w, width);
    save_skbc(a.output, bc);
    j = stats_json(sparsity_of(w, width, width));
    j["value_width"] = to_string(width);
    j["file_bytes"] = fs::file_size(a.output);
  }
  j["output"] = a.output;
  if (c.json) {
    *c.out << j.dump() << '\n';
  } else {
    for (const auto& [k, v] : j.items()) *c.out << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  }
  return kExitOk;
}

struct RandomArgs {
  std::string output, shape = "64x64", dist = "gaussian";
  double scale = 1.0;
  std::uint64_t seed = 0;
};

int cmd_random(const RandomArgs& a, const Common& c) {
  const auto [rows, cols] = parse_shape(a.shape);
  Distribution d;
  if (a.dist == "gaussian") {
    d = Gaussian{a.scale};
  } else if (a.dist == "uniform") {
    d = Uniform{a.scale};
  } else {
    throw UsageError("--dist must be gaussian or uniform");
  }
  Rng rng(a.seed);
  save_skdm(a.output, random_matrix(rows, cols, rng, d));
  if (c.json) *c.out << json{{"output", a.output}, {"rows", rows}, {"cols", cols}}.dump() << '\n';
  return kExitOk;
}

// ---- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string shape = "4096x12288", sparsities = "0.5,0.6,0.7,0.8,0.9", width = "fp32", out = "bench.csv";
  std::size_t reps = 30, warmup = 3, tile_rows = 64;
  unsigned threads = 1;
  std::uint64_t seed = 42;
};

std::vector<BenchResult> checked_bench(const BenchConfig& config, std::ostream& err) {
  const std::size_t need = bench_memory_estimate(config);
  const std::size_t avail = available_memory_bytes();
  if (avail != 0 && need > avail) {
    throw Error("bench: shape " + std::to_string(config.rows) + "x" + std::to_string(config.cols) + " needs about " +
                std::to_string(need >> 20) + " MiB, only " + std::to_string(avail >> 20) + " MiB available");
  }
  auto results = run_bench(config);
  for (const auto& r : results) {
    if (!r.warning.empty()) err << "warning: sparsity " << r.sparsity << ": " << r.warning << '\n';
  }
  return results;
}

void print_bench_table(std::ostream& out, const std::vector<BenchResult>& results) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %-6s %-7s %12s %12s %9s %9s %11s\n", "sparsity", "width", "kernel",
                "median_us", "p95_us", "GB/s", "speedup", "theoretical");
  out << line;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const unsigned vb = value_bits(r.width);
    const double theo = r.dense_kernel ? 1.0 : theoretical_speedup(vb, vb, 1.0 - r.sparsity);
    std::snprintf(line, sizeof(line), "%-8.2f %-6s %-7s %12.1f %12.1f %9.2f %9.3f %11.3f\n", r.sparsity,
                  std::string(to_string(r.width)).c_str(), i == 0 ? "dense" : (r.dense_kernel ? "dense*" : "bitmask"),
                  r.median_ns / 1e3, r.p95_ns / 1e3, r.gbps, r.self_speedup, theo);
    out << line;
  }
}

json bench_json(const std::vector<BenchResult>& results) {
  json rows = json::array();
  for (const auto& r : results) {
    rows.push_back(json{{"rows", r.rows},
                        {"cols", r.cols},
                        {"sparsity", r.sparsity},
                        {"value_width", to_string(r.width)},
                        {"threads", r.threads},
                        {"dense_kernel", r.dense_kernel},
                        {"median_ns", r.median_ns},
                        {"mean_ns", r.mean_ns},
                        {"p95_ns", r.p95_ns},
                        {"bytes_moved", r.bytes_moved},
                        {"gbps", r.gbps},
                        {"self_speedup", r.self_speedup},
                        {"warning", r.warning}});
  }
  return rows;
}

int cmd_bench(const BenchArgs& a, const Common& c) {
  BenchConfig config;
  std::tie(config.rows, config.cols) = parse_shape(a.shape);
  config.sparsities = parse_double_list(a.sparsities);
  for (double s : config.sparsities) {
    if (!(s >= 0.0 && s < 1.0)) throw UsageError("--sparsities: values must lie in [0, 1)");
  }
  config.width = width_arg(a.width);
  if (a.reps < kMinReps) throw UsageError("--reps must be at least " + std::to_string(kMinReps));
  config.reps = a.reps;
  config.warmup = a.warmup;
  config.threads = std::min(std::max(1u, a.threads), default_threads());
  config.tile_rows = a.tile_rows;
  config.seed = a.seed;

  const auto results = checked_bench(config, *c.err);
  write_stream(a.out, [&](std::ostream& f) { write_bench_csv(f, results); });
  if (c.json) {
    *c.out << json{{"csv", a.out}, {"results", bench_json(results)}}.dump() << '\n';
  } else {
    print_bench_table(*c.out, results);
    *c.out << "wrote " << a.out << '\n';
  }
  return kExitOk;
}

// ---- train / experiment ----------------------------------------------------

struct RunArgs {
  std::string config;
  bool force = false;
};

int cmd_train(const RunArgs& a, const Common& c) {
  const ExperimentConfig config = load_config(a.config);
  const RecoveryConfig rc = [&] {
    RecoveryConfig r = config.effective_recovery();
    r.gradual_levels = config.sparsity_levels;  // `train` always walks the schedule
    return r;
  }();
  const fs::path dir = prepare_run_dir(config, "train", a.force);
  *c.err << "run directory: " << dir.string() << '\n';

  const SyntheticTask task = make_task(rc);
  TrainRun teacher_log;
  *c.err << "training teacher (" << rc.teacher.epochs << " epochs)\n";
  const TinyModel teacher = train_teacher(rc, task, &teacher_log);
  save_checkpoint(dir / "teacher", teacher);
  write_stream(dir / "teacher_steps.csv", [&](std::ostream& f) { write_train_steps(f, teacher_log); });
  const EvalResult tv = evaluate(teacher, task.val);
  const EvalResult tt = evaluate(teacher, task.test);

  json j{{"config_hash", config_hash(config)},
         {"teacher", {{"val_accuracy", tv.accuracy}, {"test_accuracy", tt.accuracy}, {"test_entropy", tt.entropy},
                      {"diverged", teacher_log.diverged}}}};
  int code = kExitOk;
  if (!config.sparsity_levels.empty()) {
    const double target = config.sparsity_levels.back();
    const std::uint64_t seed = rc.seeds.front();
    *c.err << "fine-tuning with " << to_string(config.variant) << " through " << config.sparsity_levels.size()
           << " sparsity levels\n";
    TinyModel student;
    const RecoveryRow row = run_recovery(rc, teacher, task, target, config.variant, seed, &student);
    RecoveryReport one;
    one.rows.push_back(row);
    write_stream(dir / "steps.csv", [&](std::ostream& f) { write_steps_csv(f, one); });
    json s{{"variant", to_string(config.variant)},
           {"seed", seed},
           {"sparsity_levels", config.sparsity_levels},
           {"measured_sparsity", row.measured_sparsity},
           {"pruned_accuracy", row.pruned_accuracy},
           {"test_accuracy", row.accuracy},
           {"test_entropy", row.entropy},
           {"int8_test_accuracy", row.int8_accuracy},
           {"diverged", row.diverged},
           {"error", row.error}};
    if (row.error.empty()) {
      save_checkpoint(dir / "student", student);
    } else {
      code = kExitFailure;
    }
    j["student"] = s;
  }
  j["run_dir"] = dir.string();
  write_text(dir / "train.json", j.dump(2) + "\n");
  *c.out << (c.json ? j.dump() : j.dump(2)) << '\n';
  return code;
}

json summary_json(const ExperimentConfig& config, const RecoveryConfig& rc, const RecoveryReport& report,
                  double teacher_int8) {
  json cells = json::array();
  for (double s : rc.sparsities) {
    for (auto v : rc.variants) {
      std::size_t diverged = 0, failed = 0;
      double int8 = 0.0;
      std::size_t ok = 0;
      for (const auto& r : report.rows) {
        if (r.variant != v || r.sparsity != s) continue;
        diverged += r.diverged ? 1 : 0;
        if (!r.error.empty()) {
          ++failed;
        } else {
          int8 += r.int8_accuracy;
          ++ok;
        }
      }
      const double mean_acc = report.mean_accuracy(s, v);
      cells.push_back(json{{"sparsity", s},
                           {"variant", to_string(v)},
                           {"mean_accuracy", std::isnan(mean_acc) ? json(nullptr) : json(mean_acc)},
                           {"mean_entropy", std::isnan(mean_acc) ? json(nullptr) : json(report.mean_entropy(s, v))},
                           {"mean_int8_accuracy", ok == 0 ? json(nullptr) : json(int8 / static_cast<double>(ok))},
                           {"diverged_runs", diverged},
                           {"failed_runs", failed}});
    }
  }
  json errors = json::array();
  for (const auto& r : report.rows) {
    if (!r.error.empty()) {
      errors.push_back(json{{"sparsity", r.sparsity}, {"variant", to_string(r.variant)}, {"seed", r.seed}, {"error", r.error}});
    }
  }
  return json{{"config_hash", config_hash(config)},
              {"teacher",
               {{"val_accuracy", report.teacher_val.accuracy},
                {"test_accuracy", report.teacher_test.accuracy},
                {"test_entropy", report.teacher_test.entropy},
                {"int8_test_accuracy", teacher_int8}}},
              {"runs", report.rows.size()},
              {"failures", report.failures()},
              {"cells", cells},
              {"errors", errors}};
}

int cmd_experiment(const RunArgs& a, const Common& c) {
  const ExperimentConfig config = load_config(a.config);
  const RecoveryConfig rc = config.effective_recovery();
  const fs::path dir = prepare_run_dir(config, "run", a.force);
  *c.err << "run directory: " << dir.string() << '\n';

  const SyntheticTask task = make_task(rc);
  *c.err << "training teacher (" << rc.teacher.epochs << " epochs)\n";
  TrainRun teacher_log;
  const TinyModel teacher = train_teacher(rc, task, &teacher_log);
  save_checkpoint(dir / "teacher", teacher);
  write_stream(dir / "teacher_steps.csv", [&](std::ostream& f) { write_train_steps(f, teacher_log); });

  *c.err << "fine-tuning " << rc.sparsities.size() * rc.variants.size() * rc.seeds.size() << " students on "
         << rc.threads << " thread(s)\n";
  const RecoveryReport report = run_recovery_experiment(rc, teacher, task);
  const double teacher_int8 = quantized_eval(teacher, task.test).int8_accuracy;

  write_stream(dir / "accuracy.csv", [&](std::ostream& f) { write_accuracy_csv(f, report); });
  write_stream(dir / "long.csv", [&](std::ostream& f) { write_long_csv(f, report); });
  write_stream(dir / "quant.csv", [&](std::ostream& f) { write_quant_csv(f, report); });
  write_stream(dir / "steps.csv", [&](std::ostream& f) { write_steps_csv(f, report); });

  json summary = summary_json(config, rc, report, teacher_int8);
  if (config.run_bench) {
    BenchConfig bc = config.bench;
    bc.threads = std::min(bc.threads, default_threads());
    *c.err << "benchmarking " << bc.rows << "x" << bc.cols << '\n';
    const auto results = checked_bench(bc, *c.err);
    write_stream(dir / "bench.csv", [&](std::ostream& f) { write_bench_csv(f, results); });
  }
  summary["run_dir"] = dir.string();
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  if (c.json) {
    *c.out << summary.dump() << '\n';
  } else {
    *c.out << build_report(dir).markdown;
    *c.out << "\nrun directory: " << dir.string() << '\n';
  }
  for (const auto& e : summary["errors"]) *c.err << "run failed: " << e.dump() << '\n';
  return report.failures() == 0 ? kExitOk : kExitFailure;
}

// ---- report ----------------------------------------------------------------

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(std::string_view name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error("missing column " + std::string(name));
    return static_cast<std::size_t>(it - header.begin());
  }
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream s(line);
  std::string cell;
  while (std::getline(s, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

Csv read_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  Csv csv;
  std::string line;
  if (!std::getline(in, line)) throw Error(path.filename().string() + " is empty");
  csv.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != csv.header.size()) throw Error(path.filename().string() + ": ragged row");
    csv.rows.push_back(std::move(cells));
  }
  return csv;
}

double num(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw Error("not a number in CSV: '" + s + "'");
  return v;
}

void markdown_table(std::string& md, const std::string& header, const std::vector<std::vector<std::string>>& rows) {
  const auto cols = split_csv_line(header);
  md += "|";
  for (const auto& h : cols) md += " " + h + " |";
  md += "\n|";
  for (std::size_t i = 0; i < cols.size(); ++i) md += "---|";
  md += "\n";
  for (const auto& r : rows) {
    md += "|";
    for (const auto& cell : r) md += " " + cell + " |";
    md += "\n";
  }
}

std::string csv_text(const std::string& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out = header + "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
    out += "\n";
  }
  return out;
}

// Key of a (sparsity, variant) cell, in order of first appearance.
struct Cells {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> rows;

  void add(const std::string& s, const std::string& v, std::size_t row) {
    auto key = std::make_pair(s, v);
    auto [it, fresh] = rows.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.push_back(row);
  }
};

double mean(const std::vector<double>& v) {
  if (v.empty()) return NAN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

fs::path run_directory(const ExperimentConfig& config, const std::string& prefix) {
  return config.output_path() / (prefix + "-" + config_hash(config));
}

Report build_report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw Error("report: not a directory: " + run_dir.string());
  Report rep;
  std::string& md = rep.markdown;
  md = "# sparsekit report\n\n";

  const auto present = [&](const char* name) {
    if (fs::exists(run_dir / name)) return true;
    rep.missing.emplace_back(name);
    return false;
  };
  const bool has_summary = present("summary.json");
  const bool has_accuracy = present("accuracy.csv");
  const bool has_quant = present("quant.csv");
  const bool has_bench = present("bench.csv");

  if (!has_summary && !has_accuracy && !has_quant && !has_bench) {
    rep.empty = true;
    md += "## No runs\n\nNo run artifacts were found in this directory.\n";
    md += "\n## Missing artifacts\n\n";
    for (const auto& m : rep.missing) md += "- " + m + "\n";
    return rep;
  }

  if (has_summary) {
    const json s = json::parse(read_text(run_dir / "summary.json"));
    md += "Config hash: `" + s.value("config_hash", std::string("?")) + "`\n\n";
    if (s.contains("teacher")) {
      const auto& t = s["teacher"];
      md += "Teacher: val accuracy " + fixed(t.value("val_accuracy", NAN)) + ", test accuracy " +
            fixed(t.value("test_accuracy", NAN)) + ", test entropy " + fixed(t.value("test_entropy", NAN)) +
            ", INT8 test accuracy " + fixed(t.value("int8_test_accuracy", NAN)) + "\n\n";
    }
  }

  std::vector<std::string> sparsities;  // for the storage table
  if (has_accuracy) {
    const Csv csv = read_csv(run_dir / "accuracy.csv");
    const auto cs = csv.col("sparsity"), cv = csv.col("variant"), ca = csv.col("accuracy"), ce = csv.col("entropy"),
               cd = csv.col("diverged");
    Cells cells;
    for (std::size_t i = 0; i < csv.rows.size(); ++i) cells.add(csv.rows[i][cs], csv.rows[i][cv], i);
    std::vector<std::vector<std::string>> rows;
    for (const auto& key : cells.order) {
      std::vector<double> acc, ent;
      std::size_t diverged = 0, failed = 0;
      for (std::size_t i : cells.rows[key]) {
        const double a = num(csv.rows[i][ca]);
        if (std::isnan(a)) {
          ++failed;
        } else {
          acc.push_back(a);
          ent.push_back(num(csv.rows[i][ce]));
        }
        diverged += csv.rows[i][cd] == "1" ? 1 : 0;
      }
      rows.push_back({key.first, key.second, std::to_string(cells.rows[key].size()), fixed(mean(acc)),
                      fixed(mean(ent)), std::to_string(diverged), std::to_string(failed)});
      if (std::find(sparsities.begin(), sparsities.end(), key.first) == sparsities.end()) sparsities.push_back(key.first);
    }
    md += "## Accuracy vs sparsity\n\nMeans over seeds on the test split; entropy in nats.\n\n";
    markdown_table(md, kReportAccuracyHeader, rows);
    md += "\n";
    rep.tables.emplace_back("report_accuracy.csv", csv_text(kReportAccuracyHeader, rows));
  }

  if (has_quant) {
    const Csv csv = read_csv(run_dir / "quant.csv");
    const auto cs = csv.col("sparsity"), cv = csv.col("variant"), cf = csv.col("fp32_accuracy"),
               ci = csv.col("int8_accuracy");
    Cells cells;
    for (std::size_t i = 0; i < csv.rows.size(); ++i) cells.add(csv.rows[i][cs], csv.rows[i][cv], i);
    std::vector<std::vector<std::string>> rows;
    for (const auto& key : cells.order) {
      std::vector<double> f, q, d;
      for (std::size_t i : cells.rows[key]) {
        f.push_back(num(csv.rows[i][cf]));
        q.push_back(num(csv.rows[i][ci]));
        d.push_back(q.back() - f.back());
      }
      rows.push_back({key.first, key.second, fixed(mean(f)), fixed(mean(q)), fixed(mean(d))});
    }
    md += "## INT8 post-training quantization\n\nPer-row symmetric INT8 weights, simulated inference.\n\n";
    markdown_table(md, kReportQuantHeader, rows);
    md += "\n";
    rep.tables.emplace_back("report_quant.csv", csv_text(kReportQuantHeader, rows));
  }

  std::optional<Csv> bench;
  if (has_bench) bench = read_csv(run_dir / "bench.csv");
  if (sparsities.empty() && bench) {
    const auto cs = bench->col("sparsity");
    for (std::size_t i = 1; i < bench->rows.size(); ++i) {
      if (std::find(sparsities.begin(), sparsities.end(), bench->rows[i][cs]) == sparsities.end()) {
        sparsities.push_back(bench->rows[i][cs]);
      }
    }
  }
  if (!sparsities.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : sparsities) {
      const double density = 1.0 - num(s);
      std::vector<std::string> row{s};
      for (auto w : {ValueWidth::fp32, ValueWidth::fp16, ValueWidth::int8}) {
        row.push_back(fixed(bits_per_weight(value_bits(w), density), 3));
      }
      for (auto w : {ValueWidth::fp32, ValueWidth::fp16, ValueWidth::int8}) {
        row.push_back(fixed(theoretical_speedup(32, value_bits(w), density), 3));
      }
      rows.push_back(std::move(row));
    }
    md += "## Storage model\n\nBitmask format: bits per weight = 1 + value bits x density; speedup against dense FP32.\n\n";
    markdown_table(md, kReportStorageHeader, rows);
    md += "\n";
    rep.tables.emplace_back("report_storage.csv", csv_text(kReportStorageHeader, rows));
  }

  if (bench) {
    const auto cs = bench->col("sparsity"), cw = bench->col("value_width"), cm = bench->col("median_ns"),
               csp = bench->col("self_speedup");
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < bench->rows.size(); ++i) {
      const auto& r = bench->rows[i];
      const double s = num(r[cs]);
      const unsigned vb = value_bits(parse_value_width(r[cw]));
      // the baseline row and sparsity 0 run the dense kernel
      const bool dense = i == 0 || s == 0.0;
      const double bits = dense ? vb : bits_per_weight(vb, 1.0 - s);
      const double theo = dense ? 1.0 : theoretical_speedup(vb, vb, 1.0 - s);
      rows.push_back({i == 0 ? "dense" : r[cs], r[cw], fixed(bits, 3), fixed(theo, 3), fixed(num(r[csp]), 3),
                      fixed(num(r[cm]), 0)});
    }
    md += "## Kernel speedup\n\nSelf-speedup against the dense kernel at the same value width (timings vary per run).\n\n";
    markdown_table(md, kReportSpeedupHeader, rows);
    md += "\n";
    rep.tables.emplace_back("report_speedup.csv", csv_text(kReportSpeedupHeader, rows));
  }

  if (!rep.missing.empty()) {
    md += "## Missing artifacts\n\n";
    for (const auto& m : rep.missing) md += "- " + m + "\n";
  }
  return rep;
}

namespace {

struct ReportArgs {
  std::string run_dir;
};

int cmd_report(const ReportArgs& a, const Common& c) {
  const Report rep = build_report(a.run_dir);
  write_text(fs::path(a.run_dir) / "report.md", rep.markdown);
  for (const auto& [name, text] : rep.tables) write_text(fs::path(a.run_dir) / name, text);
  if (c.json) {
    json tables = json::array();
    for (const auto& t : rep.tables) tables.push_back(t.first);
    *c.out << json{{"report", (fs::path(a.run_dir) / "report.md").string()},
                   {"tables", tables},
                   {"missing", rep.missing},
                   {"empty", rep.empty}}
                  .dump()
           << '\n';
  } else {
    *c.out << rep.markdown;
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"sparsekit: sparse weight compression, kernels and distillation experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common{false, &out, &err};
  app.add_flag("--json", common.json, "Machine-readable JSON on stdout");

  PruneArgs prune_args;
  auto* prune = app.add_subcommand("prune", "Magnitude or N:M pruning of an SKDM matrix");
  prune->add_option("input", prune_args.input, "Input .skdm")->required();
  prune->add_option("output", prune_args.output, "Pruned .skdm")->required();
  prune->add_option("--sparsity", prune_args.sparsity, "Unstructured target sparsity in [0, 1]");
  prune->add_option("--nm", prune_args.nm, "N:M pattern, e.g. 2:4");
  prune->add_option("--mask", prune_args.mask, "Mask output (default: <output>.mask.skdm)");
  prune->add_option("--width", prune_args.width, "Value width for the reported storage (fp32|fp16|int8)");

  CompressArgs compress_args;
  auto* comp = app.add_subcommand("compress", "SKDM -> SKBC bitmask format (or back with --decompress)");
  comp->add_option("input", compress_args.input)->required();
  comp->add_option("output", compress_args.output)->required();
  comp->add_option("--width", compress_args.width, "fp32|fp16|int8");
  comp->add_flag("--decompress", compress_args.decompress, "Read SKBC, write SKDM");

  RandomArgs random_args;
  auto* rnd = app.add_subcommand("random", "Write a seeded random SKDM matrix");
  rnd->add_option("output", random_args.output)->required();
  rnd->add_option("--shape", random_args.shape, "ROWSxCOLS");
  rnd->add_option("--dist", random_args.dist, "gaussian|uniform");
  rnd->add_option("--scale", random_args.scale, "Standard deviation or half-width");
  rnd->add_option("--seed", random_args.seed);

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Sparse vs dense matvec latency sweep");
  bench->add_option("--shape", bench_args.shape, "ROWSxCOLS")->capture_default_str();
  bench->add_option("--sparsities", bench_args.sparsities, "Comma-separated list")->capture_default_str();
  bench->add_option("--width", bench_args.width, "fp32|fp16|int8")->capture_default_str();
  bench->add_option("--reps", bench_args.reps, "Timed repetitions (>= 30)")->capture_default_str();
  bench->add_option("--warmup", bench_args.warmup)->capture_default_str();
  bench->add_option("--threads", bench_args.threads, "Workers (capped by SPARSEKIT_THREADS)")->capture_default_str();
  bench->add_option("--tile-rows", bench_args.tile_rows)->capture_default_str();
  bench->add_option("--seed", bench_args.seed)->capture_default_str();
  bench->add_option("--out", bench_args.out, "CSV output")->capture_default_str();

  RunArgs train_args;
  auto* trn = app.add_subcommand("train", "Train a teacher and fine-tune it through sparsity_levels");
  trn->add_option("config", train_args.config)->required();
  trn->add_flag("--force", train_args.force, "Reuse an existing run directory");

  RunArgs exp_args;
  auto* exp = app.add_subcommand("experiment", "Recovery experiment: sparsities x variants x seeds");
  exp->add_option("config", exp_args.config)->required();
  exp->add_flag("--force", exp_args.force, "Reuse an existing run directory");

  ReportArgs report_args;
  auto* rep = app.add_subcommand("report", "Render markdown and CSV tables for a run directory");
  rep->add_option("run_dir", report_args.run_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*prune) return cmd_prune(prune_args, common);
    if (*comp) return cmd_compress(compress_args, common);
    if (*rnd) return cmd_random(random_args, common);
    if (*bench) return cmd_bench(bench_args, common);
    if (*trn) return cmd_train(train_args, common);
    if (*exp) return cmd_experiment(exp_args, common);
    if (*rep) return cmd_report(report_args, common);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace sparsekit::cli
