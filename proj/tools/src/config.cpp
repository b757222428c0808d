#include "sparsekit/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

#include "sparsekit/kernels.hpp"

namespace sparsekit::cli {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <typename T>
T parse_number(std::string_view s) {
  s = trim(s);
  T v{};
  if constexpr (std::is_unsigned_v<T>) {
    // from_chars accepts no sign for unsigned, so "-1" fails cleanly
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  }
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw UsageError("not a number: '" + std::string(s) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw UsageError("not a finite number: '" + std::string(s) + "'");
  }
  return v;
}

bool parse_bool(std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw UsageError("not a boolean: '" + std::string(s) + "'");
}

Schedule parse_schedule(std::string_view s) {
  if (s == "oneshot") return Schedule::oneshot;
  if (s == "gradual") return Schedule::gradual;
  throw UsageError("schedule must be oneshot or gradual, got '" + std::string(s) + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_value(std::string_view s) {
  s = trim(s);
  if constexpr (std::is_same_v<T, bool>) {
    return parse_bool(s);
  } else if constexpr (std::is_arithmetic_v<T>) {
    return parse_number<T>(s);
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (s.empty()) throw UsageError("empty value");
    return std::string(s);
  } else if constexpr (std::is_same_v<T, LossVariant>) {
    try {
      return parse_loss_variant(s);
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  } else if constexpr (std::is_same_v<T, ValueWidth>) {
    try {
      return parse_value_width(s);
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  } else if constexpr (std::is_same_v<T, Schedule>) {
    return parse_schedule(s);
  } else {
    // std::vector<U>
    using U = typename T::value_type;
    T out;
    if (s.empty()) return out;
    for (auto part : split(s, ',')) out.push_back(parse_value<U>(part));
    return out;
  }
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    return fmt(v);
  } else if constexpr (std::is_arithmetic_v<T>) {
    return std::to_string(v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, LossVariant> || std::is_same_v<T, ValueWidth>) {
    return std::string(to_string(v));
  } else if constexpr (std::is_same_v<T, Schedule>) {
    return v == Schedule::oneshot ? "oneshot" : "gradual";
  } else {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ",";
      out += format_value(v[i]);
    }
    return out;
  }
}

struct Key {
  std::string_view name;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Access>
Key key(std::string_view name, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<ExperimentConfig&>()))>;
  return Key{name, [access](ExperimentConfig& c, std::string_view v) { access(c) = parse_value<T>(v); },
             [access](const ExperimentConfig& c) { return format_value(access(c)); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    // model
    k.push_back(key("vocab", [](auto& c) -> auto& { return c.recovery.model.vocab; }));
    k.push_back(key("d_model", [](auto& c) -> auto& { return c.recovery.model.d_model; }));
    k.push_back(key("blocks", [](auto& c) -> auto& { return c.recovery.model.blocks; }));
    k.push_back(key("seq", [](auto& c) -> auto& { return c.recovery.model.seq; }));
    k.push_back(key("expansion", [](auto& c) -> auto& { return c.recovery.model.expansion; }));
    k.push_back(key("embedding_scale", [](auto& c) -> auto& { return c.recovery.model.embedding_scale; }));
    k.push_back(key("prune_embeddings", [](auto& c) -> auto& { return c.recovery.model.prune_embeddings; }));
    k.push_back(key("prune_head", [](auto& c) -> auto& { return c.recovery.model.prune_head; }));
    // task
    k.push_back(key("task_seed", [](auto& c) -> auto& { return c.recovery.task.seed; }));
    k.push_back(key("min_length", [](auto& c) -> auto& { return c.recovery.task.min_length; }));
    k.push_back(key("train_size", [](auto& c) -> auto& { return c.recovery.task.train_size; }));
    k.push_back(key("val_size", [](auto& c) -> auto& { return c.recovery.task.val_size; }));
    k.push_back(key("test_size", [](auto& c) -> auto& { return c.recovery.task.test_size; }));
    // teacher
    k.push_back(key("seed", [](auto& c) -> auto& { return c.recovery.teacher.seed; }));
    k.push_back(key("teacher_epochs", [](auto& c) -> auto& { return c.recovery.teacher.epochs; }));
    k.push_back(key("teacher_lr", [](auto& c) -> auto& { return c.recovery.teacher.lr; }));
    k.push_back(key("teacher_warmup", [](auto& c) -> auto& { return c.recovery.teacher.warmup_steps; }));
    k.push_back(key("teacher_batch_size", [](auto& c) -> auto& { return c.recovery.teacher.batch_size; }));
    // student fine-tuning
    k.push_back(key("seeds", [](auto& c) -> auto& { return c.recovery.seeds; }));
    k.push_back(key("finetune_size", [](auto& c) -> auto& { return c.recovery.finetune_size; }));
    k.push_back(key("epochs", [](auto& c) -> auto& { return c.recovery.student.epochs; }));
    k.push_back(key("lr", [](auto& c) -> auto& { return c.recovery.student.lr; }));
    k.push_back(key("warmup", [](auto& c) -> auto& { return c.recovery.student.warmup_steps; }));
    k.push_back(key("batch_size", [](auto& c) -> auto& { return c.recovery.student.batch_size; }));
    k.push_back(key("weight_decay", [](auto& c) -> auto& { return c.recovery.student.weight_decay; }));
    k.push_back(key("lambda", [](auto& c) -> auto& { return c.recovery.student.lambda; }));
    k.push_back(key("temperature", [](auto& c) -> auto& { return c.recovery.student.temperature; }));
    k.push_back(key("variant", [](auto& c) -> auto& { return c.variant; }));
    k.push_back(key("variants", [](auto& c) -> auto& { return c.recovery.variants; }));
    k.push_back(key("sparsities", [](auto& c) -> auto& { return c.recovery.sparsities; }));
    k.push_back(key("schedule", [](auto& c) -> auto& { return c.schedule; }));
    k.push_back(key("sparsity_levels", [](auto& c) -> auto& { return c.sparsity_levels; }));
    k.push_back(key("restart_lr", [](auto& c) -> auto& { return c.recovery.restart_lr; }));
    k.push_back(key("threads", [](auto& c) -> auto& { return c.recovery.threads; }));
    // kernels
    k.push_back(Key{"bench_shape",
                    [](ExperimentConfig& c, std::string_view v) {
                      std::tie(c.bench.rows, c.bench.cols) = parse_shape(trim(v));
                    },
                    [](const ExperimentConfig& c) {
                      return std::to_string(c.bench.rows) + "x" + std::to_string(c.bench.cols);
                    }});
    k.push_back(key("bench_sparsities", [](auto& c) -> auto& { return c.bench.sparsities; }));
    k.push_back(key("bench_width", [](auto& c) -> auto& { return c.bench.width; }));
    k.push_back(key("bench_reps", [](auto& c) -> auto& { return c.bench.reps; }));
    k.push_back(key("bench_warmup", [](auto& c) -> auto& { return c.bench.warmup; }));
    k.push_back(key("bench_threads", [](auto& c) -> auto& { return c.bench.threads; }));
    k.push_back(key("bench_tile_rows", [](auto& c) -> auto& { return c.bench.tile_rows; }));
    k.push_back(key("bench_seed", [](auto& c) -> auto& { return c.bench.seed; }));
    k.push_back(key("run_bench", [](auto& c) -> auto& { return c.run_bench; }));
    k.push_back(key("output_dir", [](auto& c) -> auto& { return c.output_dir; }));
    return k;
  }();
  return table;
}

void check_sparsities(const std::vector<double>& v, std::string_view name, bool strictly_increasing) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] >= 0.0 && v[i] < 1.0)) throw UsageError(std::string(name) + ": values must lie in [0, 1)");
    if (strictly_increasing && i > 0 && v[i] <= v[i - 1]) {
      throw UsageError(std::string(name) + " must be strictly increasing");
    }
  }
}

void validate(const ExperimentConfig& c) {
  const auto& r = c.recovery;
  if (r.seeds.empty()) throw UsageError("seeds: at least one seed required");
  if (r.variants.empty()) throw UsageError("variants: at least one variant required");
  if (r.sparsities.empty()) throw UsageError("sparsities: at least one sparsity required");
  check_sparsities(r.sparsities, "sparsities", false);
  check_sparsities(c.sparsity_levels, "sparsity_levels", true);
  check_sparsities(c.bench.sparsities, "bench_sparsities", false);
  if (r.finetune_size == 0 || r.finetune_size > r.task.train_size) {
    throw UsageError("finetune_size must be in [1, train_size]");
  }
  if (r.student.batch_size == 0 || r.teacher.batch_size == 0) throw UsageError("batch sizes must be positive");
  if (r.student.lr < 0 || r.teacher.lr < 0) throw UsageError("learning rates must be non-negative");
  if (r.student.temperature <= 0) throw UsageError("temperature must be positive");
  if (r.task.min_length == 0 || r.task.min_length > r.model.seq) throw UsageError("min_length must be in [1, seq]");
  if (c.bench.reps < kMinReps) throw UsageError("bench_reps must be at least " + std::to_string(kMinReps));
  if (r.threads == 0 || c.bench.threads == 0) throw UsageError("thread counts must be positive");
}

}  // namespace

std::pair<std::size_t, std::size_t> parse_shape(std::string_view text) {
  const auto x = text.find('x');
  if (x == std::string_view::npos) throw UsageError("shape must look like ROWSxCOLS, got '" + std::string(text) + "'");
  const auto rows = parse_number<std::size_t>(text.substr(0, x));
  const auto cols = parse_number<std::size_t>(text.substr(x + 1));
  if (rows == 0 || cols == 0) throw UsageError("shape dimensions must be positive");
  return {rows, cols};
}

std::vector<double> parse_double_list(std::string_view text) { return parse_value<std::vector<double>>(text); }

std::filesystem::path ExperimentConfig::output_path() const {
  const std::filesystem::path p(output_dir);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

RecoveryConfig ExperimentConfig::effective_recovery() const {
  RecoveryConfig r = recovery;
  r.task.vocab = r.model.vocab;
  r.task.seq = r.model.seq;
  r.teacher.variant = LossVariant::cross_entropy;
  r.gradual_levels = schedule == Schedule::gradual ? sparsity_levels : std::vector<double>{};
  r.threads = std::min(r.threads, default_threads());
  return r;
}

ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  std::set<std::string, std::less<>> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s(line);
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto where = "config line " + std::to_string(lineno) + ": ";
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw UsageError(where + "expected `key = value`");
    const auto name = trim(s.substr(0, eq));
    const auto value = trim(s.substr(eq + 1));
    const auto& table = keys();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == name; });
    if (it == table.end()) throw UsageError(where + "unknown key '" + std::string(name) + "'");
    if (!seen.insert(std::string(name)).second) throw UsageError(where + "duplicate key '" + std::string(name) + "'");
    try {
      it->set(c, value);
    } catch (const UsageError& e) {
      throw UsageError(where + std::string(name) + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse_config(in, path.parent_path());
}

std::string render_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& k : keys()) {
    out += std::string(k.name) + " = " + k.get(config) + "\n";
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view data) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.output_dir.clear();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(render_config(c))));
  return buf;
}

}  // namespace sparsekit::cli
