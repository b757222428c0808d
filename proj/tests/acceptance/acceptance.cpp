// Acceptance suite: one PASS/FAIL line per criterion, details indented below.
// Exit status counts failures not listed with --known-red.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "sparsekit/bench.hpp"
#include "sparsekit/cli/config.hpp"
#include "sparsekit/distill.hpp"
#include "sparsekit/experiment.hpp"
#include "sparsekit/half.hpp"
#include "sparsekit/kernels.hpp"
#include "sparsekit/pruning.hpp"
#include "sparsekit/quant.hpp"
#include "sparsekit/sparse_format.hpp"
#include "sparsekit/toy_model.hpp"

using namespace sparsekit;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  // Records a sub-check; returns it for chaining.
  bool check(bool ok, const std::string& what) {
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    pass = pass && ok;
    return ok;
  }
  void info(const std::string& what) { notes.push_back("info " + what); }
};

template <typename... Args>
std::string fmt(Args&&... args) {
  std::ostringstream s;
  s << std::setprecision(6);
  (s << ... << args);
  return s.str();
}

double relerr(double a, double b, double floor = 1e-8) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

// ---- 1, 2 ------------------------------------------------------------------

Outcome storage_model() {
  Outcome o;
  const double bits = bits_per_weight(16, 0.5);
  o.check(bits == 9.0, fmt("bits_per_weight(16, 0.5) = ", bits, " (want 9 exactly)"));
  const double speed = theoretical_speedup(16, 16, 0.5);
  o.check(std::fabs(speed - 16.0 / 9.0) < 1e-12, fmt("theoretical_speedup(16, 16, 0.5) = ", speed, " = 16/9"));
  const double shown = std::round(speed * 100.0) / 100.0;
  o.check(shown == 1.78 && std::fabs(shown - 1.77) <= 0.01 + 1e-12,
          fmt("reported as ", std::fixed, std::setprecision(2), shown, ", within 0.01 of 1.77"));
  return o;
}

Outcome compression_table() {
  Outcome o;
  const std::vector<std::pair<double, int>> table{{2, 50}, {3, 67}, {4, 75}, {5, 80}, {6, 83}, {7, 86}, {8, 88},
                                                  {10, 90}, {1.7, 40}, {2.0, 50}, {2.5, 60}, {3.3, 70}, {5.0, 80}};
  for (const auto& [ratio, percent] : table) {
    const double s = compression_ratio_to_sparsity(ratio);
    const int got = static_cast<int>(std::lround(100.0 * s));
    o.check(got == percent, fmt(ratio, "x -> ", got, "% (want ", percent, "%)"));
  }
  // the one-decimal ratios are rounded from the sparsity targets, so the
  // inverse direction is the one that reproduces them
  for (const auto& [percent, shown] : std::vector<std::pair<int, double>>{{40, 1.7}, {50, 2.0}, {60, 2.5}, {70, 3.3},
                                                                          {80, 5.0}}) {
    const double r = sparsity_to_compression_ratio(percent / 100.0);
    o.info(fmt(percent, "% -> ", r, "x, one decimal ", std::round(10 * r) / 10, (std::round(10 * r) / 10 == shown ? " (matches)" : " (differs)")));
  }
  return o;
}

// ---- 3 ---------------------------------------------------------------------

Outcome kernel_correctness() {
  Outcome o;
  Rng rng(2024);
  const double sparsities[] = {0.5, 0.75, 0.9};
  const ValueWidth widths[] = {ValueWidth::fp32, ValueWidth::fp16, ValueWidth::int8};
  std::map<ValueWidth, double> worst;
  std::size_t failures = 0;
  const std::size_t cases = 1000;
  for (std::size_t k = 0; k < cases; ++k) {
    // mostly small shapes, every 50th case near the 512 x 512 limit
    const std::size_t rows = k % 50 == 0 ? 448 + rng.below(65) : 1 + rng.below(96);
    const std::size_t cols = k % 50 == 0 ? 448 + rng.below(65) : 1 + rng.below(160);
    const double s = sparsities[k % 3];
    const ValueWidth width = widths[(k / 3) % 3];
    const auto w = oracle::sparse_random(rows, cols, s, rng);
    const auto x = oracle::random_vector(cols, rng);
    const auto c = compress(w, width);
    const auto y = sparse_matvec(c, x);
    // the oracle sees the stored values: decompressed (fp16-rounded or dequantized) weights
    const auto ref_w = decompress(c);
    const auto ref = oracle::matvec(ref_w, x);
    const auto mag = oracle::abs_matvec(ref_w, x);
    const double tol = width == ValueWidth::int8 ? 1e-4 : 1e-5;
    bool ok = y.size() == rows;
    for (std::size_t r = 0; ok && r < rows; ++r) {
      const double scale = std::max(mag[r], 1e-30);
      const double e = std::fabs(static_cast<double>(y[r]) - ref[r]) / scale;
      worst[width] = std::max(worst[width], e);
      if (e > tol) ok = false;
    }
    failures += ok ? 0 : 1;
  }
  o.check(failures == 0, fmt(cases, " randomized cases, ", failures, " outside tolerance"));
  for (const auto& [width, e] : worst) {
    o.info(fmt(to_string(width), ": worst |y - ref| / sum|w x| = ", e));
  }
  return o;
}

// ---- 4 ---------------------------------------------------------------------

Outcome kernel_performance() {
  Outcome o;
  BenchConfig config;  // 4096 x 12288 fp32, {0.5 .. 0.9}, 30 reps, one thread
  const std::size_t need = bench_memory_estimate(config), have = available_memory_bytes();
  if (have != 0 && need > have) {
    o.check(false, fmt("needs ", need >> 20, " MiB, ", have >> 20, " MiB available"));
    return o;
  }
  std::map<double, std::vector<double>> speedups;
  for (int run = 0; run < 3; ++run) {
    for (const auto& r : run_bench(config)) {
      if (!r.dense_kernel) speedups[r.sparsity].push_back(r.self_speedup);
      if (!r.warning.empty()) o.info(r.warning);
    }
  }
  std::vector<double> medians;
  for (double s : config.sparsities) {
    auto v = speedups[s];
    std::sort(v.begin(), v.end());
    medians.push_back(v[v.size() / 2]);
    o.info(fmt("sparsity ", s, ": runs ", v[0], ", ", v[1], ", ", v[2], " -> median ", v[1], "x"));
  }
  o.check(medians.back() >= 1.5, fmt("median self-speedup at 0.9 = ", medians.back(), "x (>= 1.5)"));
  bool monotone = true;
  for (std::size_t i = 1; i < medians.size(); ++i) monotone = monotone && medians[i] >= medians[i - 1];
  o.check(monotone, "median self-speedup nondecreasing over 0.5 .. 0.9");
  return o;
}

// ---- 5, 6 ------------------------------------------------------------------

TokenBatch make_batch(std::size_t b, std::size_t s, std::size_t vocab, Rng& rng, std::size_t padded) {
  TokenBatch t;
  t.batch = b;
  t.seq = s;
  t.targets.resize(b * s);
  t.padding.assign(b * s, 0);
  for (auto& y : t.targets) y = static_cast<std::int32_t>(rng.below(vocab));
  for (std::size_t k = 0; k < padded; ++k) t.padding[(k % b) * s + (s - 1 - k / b)] = 1;
  return t;
}

std::vector<double> randn(std::size_t n, Rng& rng, double sigma = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = sigma * rng.gaussian();
  return v;
}

// Worst relative error of the analytic gradient over `points` random
// coordinates, central differences with step h.
double fd_worst(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                const std::vector<double>& grad, Rng& rng, std::size_t points, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t p = 0; p < points; ++p) {
    const std::size_t i = rng.below(x.size());
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    worst = std::max(worst, relerr((up - down) / (2 * h), grad[i]));
  }
  return worst;
}

Outcome loss_gradients() {
  Outcome o;
  Rng rng(77);
  const std::size_t B = 3, S = 5, V = 7, D = 6, L = 2, points = 25;
  const auto batch = make_batch(B, S, V, rng, 3);
  const std::size_t N = B * S;

  {
    const auto z = randn(N * V, rng, 2.0);
    const auto g = task_loss<double>(z, V, batch).grad;
    const double e = fd_worst([&](const auto& x) { return task_loss<double>(x, V, batch).loss; }, z, g, rng, points);
    o.check(e < 1e-4, fmt("task_loss: worst rel err ", e, " over ", points, " points"));
  }
  {
    const auto zt = randn(N * V, rng, 2.0), zs = randn(N * V, rng, 2.0);
    const auto g = logit_kd_loss<double>(zt, zs, V, batch).grad;
    const double e =
        fd_worst([&](const auto& x) { return logit_kd_loss<double>(zt, x, V, batch).loss; }, zs, g, rng, points);
    o.check(e < 1e-4, fmt("logit_kd_loss: worst rel err ", e));
  }
  {
    const auto ft = randn(N * D, rng), fs = randn(N * D, rng);
    const auto g = squarehead_layer_loss<double>(ft, fs, D, batch).grad;
    const double e =
        fd_worst([&](const auto& x) { return squarehead_layer_loss<double>(ft, x, D, batch).loss; }, fs, g, rng, points);
    o.check(e < 1e-4, fmt("squarehead_layer_loss: worst rel err ", e));
  }

  // combined variants: student logits and every feature map as one flat vector
  const auto zt = randn(N * V, rng, 2.0), zs = randn(N * V, rng, 2.0);
  FeatureMaps<double> ft, fs;
  ft.d_model = fs.d_model = D;
  for (std::size_t l = 0; l < L; ++l) {
    ft.layers.push_back(randn(N * D, rng));
    fs.layers.push_back(randn(N * D, rng));
  }
  for (auto variant : {LossVariant::cross_entropy, LossVariant::standard_kd, LossVariant::squarehead,
                       LossVariant::kd_squarehead}) {
    auto eval = [&](const std::vector<double>& flat) {
      FeatureMaps<double> f;
      f.d_model = D;
      std::vector<double> logits(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(N * V));
      for (std::size_t l = 0; l < L; ++l) {
        const auto at = flat.begin() + static_cast<std::ptrdiff_t>(N * V + l * N * D);
        f.layers.emplace_back(at, at + static_cast<std::ptrdiff_t>(N * D));
      }
      LossInputs<double> in;
      in.vocab = V;
      in.batch = &batch;
      in.student_logits = logits;
      in.student_features = &f;
      in.teacher_logits = zt;
      in.teacher_features = &ft;
      return compute_loss<double>(variant, in, 0.7);
    };
    std::vector<double> flat = zs;
    for (const auto& l : fs.layers) flat.insert(flat.end(), l.begin(), l.end());
    const auto b = eval(flat);
    std::vector<double> grad = b.grad_logits;
    for (std::size_t l = 0; l < L; ++l) {
      if (b.grad_features.empty()) {
        grad.insert(grad.end(), N * D, 0.0);
      } else {
        grad.insert(grad.end(), b.grad_features[l].begin(), b.grad_features[l].end());
      }
    }
    const double e = fd_worst([&](const auto& x) { return eval(x).total; }, flat, grad, rng, 2 * points);
    o.check(e < 1e-4, fmt("combined ", to_string(variant), ": worst rel err ", e));
  }

  // whole model, FP64 shadow, with a mask on one matrix
  TinyModelConfig c;
  c.vocab = V;
  c.d_model = D;
  c.blocks = L;
  c.seq = S;
  c.expansion = 2;
  c.embedding_scale = 0.5;
  for (auto variant : {LossVariant::cross_entropy, LossVariant::standard_kd, LossVariant::squarehead,
                       LossVariant::kd_squarehead}) {
    Rng mr(5);
    auto student = TinyModel::initialized(c, mr).cast<double>();
    const auto teacher = TinyModel::initialized(c, mr).cast<double>();
    PruneMask mask(c.hidden(), c.d_model);
    for (std::size_t i = 0; i < mask.size(); i += 3) mask.set(i, false);
    mask.apply(student.blocks[0].w1);
    student.masks["block0.w1"] = mask;
    TokenBatch tb = make_batch(2, S, V, mr, 1);
    tb.inputs.resize(tb.tokens());
    for (auto& x : tb.inputs) x = static_cast<std::int32_t>(mr.below(V));

    auto loss = [&](ForwardResult<double>& fwd) {
      fwd = forward(student, tb);
      const auto tf = forward(teacher, tb);
      LossInputs<double> in;
      in.vocab = V;
      in.batch = &tb;
      in.student_logits = fwd.logits;
      in.student_features = &fwd.features;
      in.teacher_logits = tf.logits;
      in.teacher_features = &tf.features;
      return compute_loss<double>(variant, in, 0.7);
    };
    ForwardResult<double> fwd;
    const auto grads = backward(student, tb, fwd, loss(fwd));
    auto params = student.parameters();
    const auto names = student.parameter_names();
    double worst = 0.0;
    std::size_t checked = 0;
    while (checked < 60) {
      const std::size_t p = mr.below(params.size());
      auto v = params[p]->values();
      const std::size_t i = mr.below(v.size());
      if (names[p] == "block0.w1" && !mask.keep(i)) continue;
      const double x0 = v[i], h = 1e-5;
      ForwardResult<double> scratch;
      v[i] = x0 + h;
      const double up = loss(scratch).total;
      v[i] = x0 - h;
      const double down = loss(scratch).total;
      v[i] = x0;
      worst = std::max(worst, relerr((up - down) / (2 * h), grads.params[p].values()[i], 1e-7));
      ++checked;
    }
    o.check(worst < 1e-3, fmt("toy model backward, ", to_string(variant), ": worst rel err ", worst, " over ",
                              checked, " parameters"));
  }
  return o;
}

Outcome loss_identities() {
  Outcome o;
  Rng rng(91);
  const std::size_t B = 2, S = 6, V = 9, D = 5, N = B * S;
  const auto batch = make_batch(B, S, V, rng, 2);

  const auto z = randn(N * V, rng, 3.0);
  o.check(logit_kd_loss<double>(z, z, V, batch).loss == 0.0, "KL(p || p) == 0 exactly");
  double min_kl = INFINITY;
  for (int i = 0; i < 500; ++i) {
    const auto a = randn(N * V, rng, 1.0 + 3.0 * rng.uniform01()), b = randn(N * V, rng, 1.0 + 3.0 * rng.uniform01());
    min_kl = std::min(min_kl, logit_kd_loss<double>(a, b, V, batch).loss);
  }
  o.check(min_kl >= 0.0, fmt("KL >= 0 on 500 random pairs (min ", min_kl, ")"));

  const auto ft = randn(N * D, rng), fs = randn(N * D, rng);
  const double same = squarehead_layer_loss<double>(ft, ft, D, batch).loss;
  o.check(std::fabs(same) <= 1e-7, fmt("SquareHead(f, f) = ", same));
  const std::vector<double> zero(N * D, 0.0);
  const double vs_zero = squarehead_layer_loss<double>(ft, zero, D, batch).loss;
  o.check(std::fabs(vs_zero - 1.0) <= 1e-7, fmt("SquareHead(f_s = 0) = ", vs_zero));

  // padding: garbage at padded positions must not move any loss
  auto zp = z, ftp = ft, fsp = fs;
  for (std::size_t i = 0; i < N; ++i) {
    if (!batch.padded(i)) continue;
    for (std::size_t v = 0; v < V; ++v) zp[i * V + v] = 1e6 * rng.gaussian();
    for (std::size_t d = 0; d < D; ++d) {
      ftp[i * D + d] = 1e6 * rng.gaussian();
      fsp[i * D + d] = 1e6 * rng.gaussian();
    }
  }
  const auto z2 = randn(N * V, rng);
  o.check(task_loss<double>(zp, V, batch).loss == task_loss<double>(z, V, batch).loss,
          "task_loss unchanged by padded logits (exact)");
  o.check(logit_kd_loss<double>(zp, z2, V, batch).loss == logit_kd_loss<double>(z, z2, V, batch).loss,
          "logit_kd_loss unchanged by padded teacher logits (exact)");
  o.check(squarehead_layer_loss<double>(ftp, fsp, D, batch).loss == squarehead_layer_loss<double>(ft, fs, D, batch).loss,
          "squarehead_layer_loss unchanged by padded features (exact)");

  double worst = 0.0;
  for (double k : {1e-3, 0.5, 7.0, 1e4}) {
    std::vector<double> a = ft, b = fs;
    for (auto& x : a) x *= k;
    for (auto& x : b) x *= k;
    worst = std::max(worst, std::fabs(squarehead_layer_loss<double>(a, b, D, batch).loss -
                                      squarehead_layer_loss<double>(ft, fs, D, batch).loss));
  }
  o.check(worst <= 1e-7, fmt("common-scale invariance, worst change ", worst));
  return o;
}

// ---- 7, 8, 10 (shared experiment) ------------------------------------------

struct Experiment {
  RecoveryConfig config;
  RecoveryReport report;
  double teacher_int8 = 0.0;
  double seconds = 0.0;
};

const Experiment& experiment(const std::string& config_path) {
  static std::optional<Experiment> cached;
  if (cached) return *cached;
  const auto t0 = std::chrono::steady_clock::now();
  Experiment e;
  e.config = cli::load_config(config_path).effective_recovery();
  const SyntheticTask task = make_task(e.config);
  const TinyModel teacher = train_teacher(e.config, task);
  e.report = run_recovery_experiment(e.config, teacher, task);
  e.teacher_int8 = quantized_eval(teacher, task.test).int8_accuracy;
  e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  cached = std::move(e);
  return *cached;
}

// Recovery floor for (c), checked once against the committed default config.
constexpr double kRecoveryFloor = 0.90;

Outcome recovery(const std::string& config_path) {
  Outcome o;
  const auto& e = experiment(config_path);
  const auto& r = e.report;
  o.info(fmt("default config, ", e.config.seeds.size(), " seeds, ", r.rows.size(), " runs in ", e.seconds, " s"));
  o.check(e.seconds < 15 * 60, "runtime under 15 minutes");
  o.check(r.failures() == 0, fmt(r.failures(), " failed runs"));
  o.check(r.teacher_val.accuracy >= 0.95, fmt("teacher val accuracy ", r.teacher_val.accuracy, " >= 0.95"));
  for (double s : {0.75, 0.9}) {
    std::string line = fmt("sparsity ", s, ":");
    for (auto v : {LossVariant::cross_entropy, LossVariant::standard_kd, LossVariant::squarehead}) {
      line += fmt(" ", to_string(v), " ", r.mean_accuracy(s, v));
    }
    o.info(line);
  }
  for (double s : {0.75, 0.9}) {
    const double sh = r.mean_accuracy(s, LossVariant::squarehead), ce = r.mean_accuracy(s, LossVariant::cross_entropy);
    o.check(sh >= ce, fmt("(a) SquareHead ", sh, " >= CE ", ce, " at ", s));
  }
  std::size_t diverged = 0;
  for (const auto& row : r.rows) diverged += row.variant == LossVariant::squarehead && row.diverged ? 1 : 0;
  o.check(diverged == 0, fmt("(b) ", diverged, " SquareHead runs flagged diverged"));
  const double ratio = r.mean_accuracy(0.75, LossVariant::squarehead) / r.teacher_test.accuracy;
  o.check(ratio >= kRecoveryFloor, fmt("(c) SquareHead at 0.75 recovers ", 100 * ratio, "% of teacher test accuracy (>= ",
                                       100 * kRecoveryFloor, "%)"));
  return o;
}

Outcome entropy_trend(const std::string& config_path) {
  Outcome o;
  const auto& r = experiment(config_path).report;
  for (double s : {0.75, 0.9}) {
    o.info(fmt("sparsity ", s, ": entropy CE ", r.mean_entropy(s, LossVariant::cross_entropy), ", KD ",
               r.mean_entropy(s, LossVariant::standard_kd), ", SquareHead ",
               r.mean_entropy(s, LossVariant::squarehead)));
  }
  const double ce = r.mean_entropy(0.9, LossVariant::cross_entropy), sh = r.mean_entropy(0.9, LossVariant::squarehead);
  o.check(ce <= sh, fmt("CE entropy ", ce, " <= SquareHead entropy ", sh, " at 0.9 (3-seed means)"));
  return o;
}

// ---- 9 ---------------------------------------------------------------------

Outcome divergence() {
  Outcome o;
  Rng rng(3);
  std::vector<double> base(80);
  for (std::size_t i = 0; i < base.size(); ++i) base[i] = 2.0 * std::exp(-0.02 * i) + 0.05 * rng.uniform01();

  auto spiked = base;
  const std::size_t at = 50;
  std::vector<double> window(spiked.begin() + at - 20, spiked.begin() + at);
  std::sort(window.begin(), window.end());
  spiked[at] = 20.0 * 0.5 * (window[9] + window[10]);  // 20x the running median
  const auto s = detect_divergence(spiked);
  o.check(s && *s == at, fmt("20x spike at step ", at, " flagged at ", s ? std::to_string(*s) : "none"));

  auto nan = base;
  nan[33] = std::nan("");
  const auto n = detect_divergence(nan);
  o.check(n && *n == 33, fmt("NaN at step 33 flagged at ", n ? std::to_string(*n) : "none"));
  auto inf = base;
  inf[7] = INFINITY;
  const auto i = detect_divergence(inf);
  o.check(i && *i == 7, "inf at step 7 flagged");

  std::vector<double> mono(500);
  for (std::size_t k = 0; k < mono.size(); ++k) mono[k] = 5.0 / (1.0 + 0.1 * k);
  o.check(!detect_divergence(mono), "monotone decreasing history never flagged");
  return o;
}

// ---- 10 --------------------------------------------------------------------

Outcome quantization(const std::string& config_path, bool with_model) {
  Outcome o;
  Rng rng(10);
  double worst = 0.0;
  for (int m = 0; m < 100; ++m) {
    const std::size_t rows = 1 + rng.below(64), cols = 1 + rng.below(128);
    const auto w = random_matrix(rows, cols, rng, m % 2 ? Distribution{Gaussian{1.0}} : Distribution{Uniform{3.0}});
    const auto q = quantize_int8(w);
    const auto back = dequantize(q);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double err = std::fabs(static_cast<double>(back(r, c)) - w(r, c));
        const double half = 0.5 * static_cast<double>(q.scales[r]);
        worst = std::max(worst, half == 0.0 ? (err == 0.0 ? 0.0 : INFINITY) : err / half);
      }
    }
  }
  // the bound holds up to one float rounding of the dequantized product
  o.check(worst <= 1.0 + 1e-5, fmt("|dequant - W| <= scale/2 on 100 matrices (worst ratio ", worst, ")"));

  bool pattern = true, exact = true;
  for (double s : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    const auto w = magnitude_prune(random_matrix(64, 160, rng, Gaussian{1.0}), s).weights;
    const auto bc = sparse_quant_compress(w);
    pattern = pattern && std::ranges::equal(bc.masks(), compress(w).masks()) && bc.nnz() == sparsity_of(w).nnz;
    exact = exact && sparsity_of(dequantize(quantize_int8(w))).sparsity == sparsity_of(w).sparsity;
  }
  o.check(pattern, "prune-then-quantize: int8 bitmask keeps the pruned pattern exactly");
  o.check(exact, "prune-then-quantize: sparsity of dequantize(quantize(W)) equals sparsity of W");

  const auto w80 = magnitude_prune(random_matrix(100, 200, rng, Gaussian{1.0}), 0.8).weights;
  const auto storage = int8_storage(sparse_quant_compress(w80));
  o.check(std::fabs(storage.bits_per_weight - 2.6) < 1e-12,
          fmt("sparse+INT8 bits per weight at 80% = ", storage.bits_per_weight, " (scales add ",
              storage.scale_bits_per_weight, ")"));

  if (with_model) {
    const auto& e = experiment(config_path);
    o.info(fmt("teacher INT8 test accuracy ", e.teacher_int8, " vs FP32 ", e.report.teacher_test.accuracy));
    for (double s : e.config.sparsities) {
      for (auto v : e.config.variants) {
        double fp = 0, q = 0;
        std::size_t n = 0;
        for (const auto& row : e.report.rows) {
          if (row.sparsity != s || row.variant != v || !row.error.empty()) continue;
          fp += row.accuracy;
          q += row.int8_accuracy;
          ++n;
        }
        if (n == 0) continue;
        o.info(fmt("sparsity ", s, " ", to_string(v), ": FP32 ", fp / n, ", INT8 ", q / n, ", delta ", (q - fp) / n));
      }
    }
  }
  return o;
}

// ---- 11 --------------------------------------------------------------------

std::string skbc_bytes(const BitmaskCompressed& c) {
  std::ostringstream s;
  write_skbc(s, c);
  return s.str();
}

bool rejected(const std::string& bytes) {
  try {
    std::istringstream in(bytes);
    read_skbc(in);
    return false;
  } catch (const FormatError&) {
    return true;
  }
}

Outcome format_roundtrip() {
  Outcome o;
  Rng rng(11);
  std::size_t bad = 0;
  for (int m = 0; m < 200; ++m) {
    const std::size_t rows = 1 + rng.below(40), cols = 1 + rng.below(100);
    DenseMatrix w;
    switch (m % 10) {
      case 0: w = DenseMatrix(rows, cols); break;                           // all zero
      case 1: w = random_matrix(rows, cols, rng, Gaussian{1.0}); break;     // fully dense
      case 2: {                                                            // single nonzero
        w = DenseMatrix(rows, cols);
        w(rng.below(rows), rng.below(cols)) = static_cast<float>(rng.gaussian());
        break;
      }
      default: w = oracle::sparse_random(rows, cols, rng.uniform01(), rng);
    }
    const auto back = decompress(compress(w, ValueWidth::fp32));
    const bool same = back.rows() == rows && back.cols() == cols &&
                      std::memcmp(back.values().data(), w.values().data(), w.size() * sizeof(float)) == 0;
    std::istringstream file(skbc_bytes(compress(w)));
    const auto through_file = decompress(read_skbc(file));
    bad += same && through_file == w ? 0 : 1;
  }
  o.check(bad == 0, fmt("decompress(compress(W)) bit-exact on 200 matrices incl. edge cases (", bad, " mismatches)"));

  const auto w = oracle::sparse_random(6, 40, 0.5, rng);
  const auto c = compress(w);
  const std::string good = skbc_bytes(c);
  o.check(!rejected(good), "well-formed file accepted");
  // first mask word follows magic, rows, cols and the width tag
  const std::size_t mask_at = 13;
  std::uint32_t word;
  std::memcpy(&word, good.data() + mask_at, 4);
  std::string extra = good, fewer = good;
  const std::uint32_t free_bits = ~word;
  std::uint32_t plus = word | (free_bits & (~free_bits + 1)), minus = word & (word - 1);
  std::memcpy(extra.data() + mask_at, &plus, 4);
  std::memcpy(fewer.data() + mask_at, &minus, 4);
  o.check(free_bits != 0 && rejected(extra), "mask with one bit more than the payload rejected");
  o.check(word != 0 && rejected(fewer), "mask with one bit fewer than the payload rejected");
  o.check(rejected(good.substr(0, good.size() - 2)), "truncated payload rejected");
  o.check(rejected(good + "x"), "trailing bytes rejected");

  bool threw = false;
  try {
    auto masks = std::vector<std::uint32_t>(c.masks().begin(), c.masks().end());
    std::vector<float> values(c.f32_values().begin(), c.f32_values().end());
    values.pop_back();
    BitmaskCompressed(c.rows(), c.cols(), ValueWidth::fp32, masks, values, {}, {}, {});
  } catch (const Error&) {
    threw = true;
  }
  o.check(threw, "in-memory mask/value count mismatch rejected");
  return o;
}

// ---- 12 --------------------------------------------------------------------

Outcome nm_correctness() {
  Outcome o;
  Rng rng(12);
  const auto w = random_matrix(32, 256, rng, Gaussian{1.0});
  const std::vector<std::tuple<std::size_t, std::size_t, double>> patterns{
      {2, 4, 0.5}, {16, 32, 0.5}, {16, 64, 0.75}, {16, 128, 0.875}};
  for (const auto& [n, m, want] : patterns) {
    const auto r = nm_project(w, {n, m});
    const double got = sparsity_of(r.weights).sparsity;
    o.check(got == want && conforms(r.weights, {n, m}, true), fmt(n, ":", m, " sparsity ", got, " (want ", want, ")"));
  }

  // every n:m with m <= 8, every block against exhaustive search
  const std::size_t cols = 840;  // lcm(1..8)
  auto x = random_matrix(12, cols, rng, Gaussian{1.0});
  for (std::size_t i = 0; i < x.size(); i += 7) x.values()[i] = x.values()[i + 1];  // some ties
  std::size_t blocks = 0, mismatches = 0;
  for (std::size_t m = 1; m <= 8; ++m) {
    for (std::size_t n = 1; n <= m; ++n) {
      const auto r = nm_project(x, {n, m});
      for (std::size_t row = 0; row < x.rows(); ++row) {
        for (std::size_t b = 0; b < cols / m; ++b) {
          std::vector<float> block(m);
          for (std::size_t j = 0; j < m; ++j) block[j] = x(row, b * m + j);
          const auto keep = oracle::best_subset(block, n);
          for (std::size_t j = 0; j < m; ++j) {
            const float expect = keep[j] ? block[j] : 0.0f;
            if (r.weights(row, b * m + j) != expect || r.mask.keep(row, b * m + j) != keep[j]) {
              ++mismatches;
              break;
            }
          }
          ++blocks;
        }
      }
    }
  }
  o.check(mismatches == 0, fmt(blocks, " blocks over all n:m with m <= 8 match exhaustive top-n (", mismatches,
                               " mismatches)"));
  return o;
}

std::vector<int> parse_ids(const std::string& text) {
  std::vector<int> ids;
  for (double v : cli::parse_double_list(text)) ids.push_back(static_cast<int>(v));
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparsekit acceptance suite"};
  std::string only, known_red;
  std::string config_path = std::string(SPARSEKIT_SOURCE_DIR) + "/configs/default.conf";
  app.add_option("--only", only, "comma-separated criteria to run (default: all)");
  app.add_option("--known-red", known_red, "criteria documented as failing; they do not set the exit status");
  app.add_option("--config", config_path, "experiment config for criteria 7, 8 and 10");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected, red;
  try {
    for (int id : parse_ids(only)) selected.insert(id);
    for (int id : parse_ids(known_red)) red.insert(id);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  const auto want = [&](int id) { return selected.empty() || selected.count(id) != 0; };
  const bool model_quant = want(7) || want(8) || want(10);

  const std::vector<std::tuple<int, std::string, std::function<Outcome()>>> criteria{
      {1, "bits-per-weight model", storage_model},
      {2, "compression ratio <-> sparsity table", compression_table},
      {3, "kernel correctness", kernel_correctness},
      {4, "kernel performance (4096x12288 fp32, 1 thread)", kernel_performance},
      {5, "loss gradient checks", loss_gradients},
      {6, "loss unit identities", loss_identities},
      {7, "recovery experiment", [&] { return recovery(config_path); }},
      {8, "entropy trend", [&] { return entropy_trend(config_path); }},
      {9, "divergence detection", divergence},
      {10, "quantization", [&] { return quantization(config_path, model_quant); }},
      {11, "format roundtrip", format_roundtrip},
      {12, "N:M correctness", nm_correctness},
  };

  int unexpected = 0, passed = 0, failed = 0;
  for (const auto& [id, name, fn] : criteria) {
    if (!want(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.check(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool known = red.count(id) != 0;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << "  " << name << "  ("
              << std::fixed << std::setprecision(1) << secs << " s)";
    if (!o.pass && known) std::cout << "  [known red]";
    if (o.pass && known) std::cout << "  [listed as known red but passes]";
    std::cout << '\n' << std::defaultfloat;
    for (const auto& n : o.notes) std::cout << "        " << n << '\n';
    std::cout.flush();
    (o.pass ? passed : failed)++;
    if (!o.pass && !known) ++unexpected;
  }
  std::cout << "\n" << passed << " passed, " << failed << " failed";
  if (failed > 0) std::cout << " (" << failed - unexpected << " known red)";
  std::cout << '\n';
  return unexpected == 0 ? 0 : 2;
}
