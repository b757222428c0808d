#include "sparsekit/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "sparsekit/io.hpp"

namespace sparsekit {
namespace {

// Four partial sums, combined in a fixed order.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) noexcept {
  T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// y[t] = W x[t] + b for every token row t.
template <typename T>
void linear(const BasicMatrix<T>& w, const BasicMatrix<T>& b, const std::vector<T>& x, std::size_t tokens,
            std::vector<T>& y) {
  const std::size_t in = w.cols();
  const std::size_t out = w.rows();
  y.assign(tokens * out, T(0));
  for (std::size_t t = 0; t < tokens; ++t) {
    const T* xt = x.data() + t * in;
    T* yt = y.data() + t * out;
    for (std::size_t o = 0; o < out; ++o) yt[o] = dot(w.data() + o * in, xt, in) + b.data()[o];
  }
}

std::size_t prev_token(const TokenBatch& batch, std::size_t t) {
  return t % batch.seq == 0 ? 0 : static_cast<std::size_t>(batch.inputs[t - 1]);
}

template <typename T>
BasicMatrix<T> gaussian_matrix(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  BasicMatrix<T> m(rows, cols);
  for (T& v : m.values()) v = static_cast<T>(sigma * rng.gaussian());
  return m;
}

}  // namespace

void TinyModelConfig::validate() const {
  if (vocab == 0 || d_model == 0 || blocks == 0 || seq == 0 || expansion == 0) {
    throw InvalidArgument("model config: all sizes must be positive");
  }
  if (!(embedding_scale > 0.0)) throw InvalidArgument("model config: embedding_scale must be positive");
}

template <typename T>
BasicTinyModel<T>::BasicTinyModel(const TinyModelConfig& config)
    : embedding(config.vocab, config.d_model),
      prev_embedding(config.vocab, config.d_model),
      head(config.vocab, config.d_model),
      head_bias(1, config.vocab),
      config_(config) {
  config.validate();
  for (std::size_t l = 0; l < config.blocks; ++l) {
    blocks.push_back(Block{BasicMatrix<T>(config.hidden(), config.d_model), BasicMatrix<T>(1, config.hidden()),
                           BasicMatrix<T>(config.d_model, config.hidden()), BasicMatrix<T>(1, config.d_model)});
  }
}

template <typename T>
BasicTinyModel<T> BasicTinyModel<T>::initialized(const TinyModelConfig& config, Rng& rng) {
  BasicTinyModel m(config);
  const double d = static_cast<double>(config.d_model);
  const double h = static_cast<double>(config.hidden());
  m.embedding = gaussian_matrix<T>(config.vocab, config.d_model, config.embedding_scale, rng);
  m.prev_embedding = gaussian_matrix<T>(config.vocab, config.d_model, config.embedding_scale, rng);
  for (auto& block : m.blocks) {
    block.w1 = gaussian_matrix<T>(config.hidden(), config.d_model, 1.0 / std::sqrt(d), rng);
    block.w2 = gaussian_matrix<T>(config.d_model, config.hidden(), 1.0 / std::sqrt(h), rng);
  }
  m.head = gaussian_matrix<T>(config.vocab, config.d_model, 1.0 / std::sqrt(d), rng);
  return m;
}

template <typename T>
std::vector<std::string> BasicTinyModel<T>::parameter_names() const {
  std::vector<std::string> names{"embedding", "prev_embedding"};
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string prefix = "block" + std::to_string(l) + ".";
    for (const char* p : {"w1", "b1", "w2", "b2"}) names.push_back(prefix + p);
  }
  names.emplace_back("head");
  names.emplace_back("head_bias");
  return names;
}

template <typename T>
std::vector<BasicMatrix<T>*> BasicTinyModel<T>::parameters() {
  std::vector<BasicMatrix<T>*> out{&embedding, &prev_embedding};
  for (auto& b : blocks) {
    out.push_back(&b.w1);
    out.push_back(&b.b1);
    out.push_back(&b.w2);
    out.push_back(&b.b2);
  }
  out.push_back(&head);
  out.push_back(&head_bias);
  return out;
}

template <typename T>
std::vector<const BasicMatrix<T>*> BasicTinyModel<T>::parameters() const {
  auto mut = const_cast<BasicTinyModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::size_t BasicTinyModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <typename T>
std::vector<std::string> BasicTinyModel<T>::prunable_names() const {
  std::vector<std::string> names;
  if (config_.prune_embeddings) {
    names.emplace_back("embedding");
    names.emplace_back("prev_embedding");
  }
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    names.push_back("block" + std::to_string(l) + ".w1");
    names.push_back("block" + std::to_string(l) + ".w2");
  }
  if (config_.prune_head) names.emplace_back("head");
  return names;
}

template <typename T>
template <typename U>
BasicTinyModel<U> BasicTinyModel<T>::cast() const {
  BasicTinyModel<U> out(config_);
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
  out.masks = masks;
  return out;
}

template <typename T>
ForwardResult<T> forward(const BasicTinyModel<T>& model, const TokenBatch& batch) {
  const auto& cfg = model.config();
  const std::size_t n = batch.tokens();
  const std::size_t d = cfg.d_model;
  if (batch.inputs.size() != n) throw DimensionError("forward: batch has no inputs for every token");
  for (std::int32_t id : batch.inputs) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) {
      throw InvalidArgument("forward: token id " + std::to_string(id) + " outside vocabulary");
    }
  }

  ForwardResult<T> out;
  out.features.d_model = d;
  out.h0.assign(n * d, T(0));
  for (std::size_t t = 0; t < n; ++t) {
    const T* e = model.embedding.data() + static_cast<std::size_t>(batch.inputs[t]) * d;
    const T* p = model.prev_embedding.data() + prev_token(batch, t) * d;
    for (std::size_t k = 0; k < d; ++k) out.h0[t * d + k] = e[k] + p[k];
  }

  const std::vector<T>* h = &out.h0;
  std::vector<T> branch;
  for (const auto& block : model.blocks) {
    std::vector<T> u;
    linear(block.w1, block.b1, *h, n, u);
    for (T& v : u) v = std::tanh(v);
    linear(block.w2, block.b2, u, n, branch);
    std::vector<T> next(*h);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += branch[i];
    out.hidden.push_back(std::move(u));
    out.features.layers.push_back(std::move(next));
    h = &out.features.layers.back();
  }
  linear(model.head, model.head_bias, *h, n, out.logits);
  return out;
}

template <typename T>
Gradients<T> backward(const BasicTinyModel<T>& model, const TokenBatch& batch, const ForwardResult<T>& fwd,
                      const LossBreakdown<T>& loss) {
  const auto& cfg = model.config();
  const std::size_t n = batch.tokens();
  const std::size_t d = cfg.d_model;
  const std::size_t hid = cfg.hidden();
  const std::size_t vocab = cfg.vocab;
  const std::size_t nblocks = model.blocks.size();
  if (loss.grad_logits.size() != n * vocab) throw DimensionError("backward: logit gradient shape mismatch");
  const bool with_features = !loss.grad_features.empty();
  if (with_features && loss.grad_features.size() != nblocks) {
    throw DimensionError("backward: expected one feature gradient per block");
  }

  Gradients<T> g;
  for (const auto* p : model.parameters()) g.params.emplace_back(p->rows(), p->cols());
  auto& g_embedding = g.params[0];
  auto& g_prev = g.params[1];
  auto& g_head = g.params[2 + 4 * nblocks];
  auto& g_head_bias = g.params[3 + 4 * nblocks];

  std::vector<T> dh(d);
  std::vector<T> du(hid);
  std::vector<T> dh_in(d);
  for (std::size_t t = 0; t < n; ++t) {
    // Every loss here has zero derivative at padding positions.
    if (batch.padded(t)) continue;
    const T* gl = loss.grad_logits.data() + t * vocab;
    const T* h_last = fwd.features.layers.back().data() + t * d;
    std::fill(dh.begin(), dh.end(), T(0));
    for (std::size_t v = 0; v < vocab; ++v) {
      if (gl[v] == T(0)) continue;
      axpy(gl[v], h_last, g_head.data() + v * d, d);
      g_head_bias.data()[v] += gl[v];
      axpy(gl[v], model.head.data() + v * d, dh.data(), d);
    }
    if (with_features) axpy(T(1), loss.grad_features[nblocks - 1].data() + t * d, dh.data(), d);

    for (std::size_t l = nblocks; l-- > 0;) {
      const auto& block = model.blocks[l];
      auto& gw1 = g.params[2 + 4 * l];
      auto& gb1 = g.params[3 + 4 * l];
      auto& gw2 = g.params[4 + 4 * l];
      auto& gb2 = g.params[5 + 4 * l];
      const T* u = fwd.hidden[l].data() + t * hid;
      const T* h_in = (l == 0 ? fwd.h0.data() : fwd.features.layers[l - 1].data()) + t * d;

      std::fill(du.begin(), du.end(), T(0));
      for (std::size_t k = 0; k < d; ++k) {
        gb2.data()[k] += dh[k];
        axpy(dh[k], u, gw2.data() + k * hid, hid);
        axpy(dh[k], block.w2.data() + k * hid, du.data(), hid);
      }
      dh_in = dh;
      for (std::size_t j = 0; j < hid; ++j) {
        const T dz = du[j] * (T(1) - u[j] * u[j]);
        gb1.data()[j] += dz;
        axpy(dz, h_in, gw1.data() + j * d, d);
        axpy(dz, block.w1.data() + j * d, dh_in.data(), d);
      }
      if (l > 0 && with_features) axpy(T(1), loss.grad_features[l - 1].data() + t * d, dh_in.data(), d);
      dh.swap(dh_in);
    }
    axpy(T(1), dh.data(), g_embedding.data() + static_cast<std::size_t>(batch.inputs[t]) * d, d);
    axpy(T(1), dh.data(), g_prev.data() + prev_token(batch, t) * d, d);
  }

  const auto names = model.parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (auto it = model.masks.find(names[i]); it != model.masks.end()) it->second.apply(g.params[i]);
  }
  return g;
}

std::vector<PrunableLayer> prunable_layers(TinyModel& model) {
  std::vector<PrunableLayer> layers;
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (const auto& name : model.prunable_names()) {
    const auto at = static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
    auto [it, inserted] = model.masks.try_emplace(name, params[at]->rows(), params[at]->cols());
    layers.push_back(PrunableLayer{name, params[at], &it->second});
  }
  return layers;
}

void prune_model(TinyModel& model, const Pruner& pruner, double sparsity) {
  for (const auto& layer : prunable_layers(model)) {
    auto result = pruner.prune(*layer.weights, sparsity);
    *layer.weights = std::move(result.weights);
    *layer.mask = std::move(result.mask);
  }
}

double prunable_sparsity(const TinyModel& model) {
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  std::size_t zeros = 0;
  std::size_t total = 0;
  for (const auto& name : model.prunable_names()) {
    const auto at = static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
    const auto stats = sparsity_of(*params[at]);
    zeros += stats.total - stats.nnz;
    total += stats.total;
  }
  return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

// ---- synthetic task ----------------------------------------------------------

TokenBatch Dataset::batch(std::span<const std::size_t> rows) const {
  TokenBatch b;
  b.batch = rows.size();
  b.seq = seq;
  b.inputs.reserve(rows.size() * seq);
  b.targets.reserve(rows.size() * seq);
  b.padding.reserve(rows.size() * seq);
  for (std::size_t r : rows) {
    if (r >= size()) throw InvalidArgument("dataset row out of range");
    b.inputs.insert(b.inputs.end(), inputs.begin() + static_cast<std::ptrdiff_t>(r * seq),
                    inputs.begin() + static_cast<std::ptrdiff_t>((r + 1) * seq));
    b.targets.insert(b.targets.end(), targets.begin() + static_cast<std::ptrdiff_t>(r * seq),
                     targets.begin() + static_cast<std::ptrdiff_t>((r + 1) * seq));
    b.padding.insert(b.padding.end(), padding.begin() + static_cast<std::ptrdiff_t>(r * seq),
                     padding.begin() + static_cast<std::ptrdiff_t>((r + 1) * seq));
  }
  return b;
}

TokenBatch Dataset::all() const {
  std::vector<std::size_t> rows(size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return batch(rows);
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  const TokenBatch b = batch(rows);
  return Dataset{seq, b.inputs, b.targets, b.padding};
}

Dataset generate_sequences(std::size_t count, std::size_t vocab, std::size_t seq, std::size_t min_length, Rng& rng) {
  if (vocab == 0 || seq == 0) throw InvalidArgument("task: vocab and seq must be positive");
  if (min_length == 0 || min_length > seq) throw InvalidArgument("task: min_length must lie in [1, seq]");
  Dataset d;
  d.seq = seq;
  d.inputs.assign(count * seq, 0);
  d.targets.assign(count * seq, 0);
  d.padding.assign(count * seq, 1);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t length = min_length + static_cast<std::size_t>(rng.below(seq - min_length + 1));
    std::int32_t prev = 0;
    for (std::size_t i = 0; i < length; ++i) {
      const auto x = static_cast<std::int32_t>(rng.below(vocab));
      const std::size_t at = s * seq + i;
      d.inputs[at] = x;
      d.targets[at] = static_cast<std::int32_t>((static_cast<std::size_t>(x) + static_cast<std::size_t>(prev)) % vocab);
      d.padding[at] = 0;
      prev = x;
    }
  }
  return d;
}

SyntheticTask make_task(const SyntheticTaskConfig& config) {
  Rng rng(config.seed);
  SyntheticTask task{config, {}, {}, {}};
  task.train = generate_sequences(config.train_size, config.vocab, config.seq, config.min_length, rng);
  task.val = generate_sequences(config.val_size, config.vocab, config.seq, config.min_length, rng);
  task.test = generate_sequences(config.test_size, config.vocab, config.seq, config.min_length, rng);
  return task;
}

// ---- training ------------------------------------------------------------------

double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  if (config.warmup_steps > 0 && step < config.warmup_steps) {
    return config.lr * static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
  }
  if (total_steps <= config.warmup_steps) return config.lr;
  const double remaining = static_cast<double>(total_steps - std::min(step, total_steps));
  return config.lr * remaining / static_cast<double>(total_steps - config.warmup_steps);
}

namespace {

bool spike_or_nan(std::span<const double> losses, std::size_t i, const DivergenceConfig& config,
                  std::vector<double>& window) {
  if (!std::isfinite(losses[i])) return true;
  if (i < config.window) return false;
  window.assign(losses.begin() + static_cast<std::ptrdiff_t>(i - config.window),
                losses.begin() + static_cast<std::ptrdiff_t>(i));
  std::sort(window.begin(), window.end());
  const std::size_t m = window.size();
  const double median = m % 2 ? window[m / 2] : 0.5 * (window[m / 2 - 1] + window[m / 2]);
  return losses[i] > config.spike_factor * median;
}

}  // namespace

std::optional<std::size_t> detect_divergence(std::span<const double> losses, const DivergenceConfig& config) {
  std::vector<double> window;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (spike_or_nan(losses, i, config, window)) return i;
  }
  return std::nullopt;
}

TrainRun train(TinyModel& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& config,
               const TinyModel* teacher) {
  if (config.batch_size == 0) throw InvalidArgument("train: batch_size must be positive");
  if (train_set.size() == 0) throw InvalidArgument("train: empty training set");
  const bool needs_teacher = needs_teacher_logits(config.variant) || needs_teacher_features(config.variant);
  if (needs_teacher && teacher == nullptr) throw InvalidArgument("train: distillation variant needs a teacher");

  TrainRun run;
  run.variant = config.variant;
  run.seed = config.seed;
  run.sparsity = prunable_sparsity(model);

  const std::size_t n = train_set.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = per_epoch * config.epochs;
  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  std::vector<double> totals;
  std::vector<double> window;
  const DivergenceConfig divergence;
  const auto names = model.parameter_names();
  const auto params = model.parameters();

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs && !run.halted; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(n, begin + config.batch_size);
      const TokenBatch batch = train_set.batch(std::span(order).subspan(begin, end - begin));

      const auto fwd = forward(model, batch);
      std::optional<ForwardResult<float>> teacher_fwd;
      if (needs_teacher) teacher_fwd = forward(*teacher, batch);

      LossInputs<float> in;
      in.vocab = model.config().vocab;
      in.batch = &batch;
      in.student_logits = fwd.logits;
      in.student_features = &fwd.features;
      in.temperature = static_cast<float>(config.temperature);
      if (teacher_fwd) {
        in.teacher_logits = teacher_fwd->logits;
        in.teacher_features = &teacher_fwd->features;
      }

      const bool logits_finite =
          std::all_of(fwd.logits.begin(), fwd.logits.end(), [](float v) { return std::isfinite(v); });
      LossBreakdown<float> loss;
      if (logits_finite) loss = compute_loss(config.variant, in, static_cast<float>(config.lambda));
      const bool finite = logits_finite && std::isfinite(loss.total);

      const double lr = learning_rate_at(config, config.lr_step_offset + step,
                                        config.lr_total_steps == 0 ? total_steps : config.lr_total_steps);
      run.steps.push_back(StepRecord{step, lr, loss.task, loss.logit_kd, loss.feat_total,
                                     finite ? static_cast<double>(loss.total) : NAN,
                                     logits_finite ? predictive_entropy<float>(fwd.logits, in.vocab, batch) : NAN});
      totals.push_back(run.steps.back().total);
      if (!run.diverged && spike_or_nan(totals, totals.size() - 1, divergence, window)) {
        run.diverged = true;
        run.diverged_step = step;
      }
      if (!finite) {
        run.halted = true;
        break;
      }

      const auto grads = backward(model, batch, fwd, loss);
      const auto lr_f = static_cast<float>(lr);
      const auto decay = static_cast<float>(config.weight_decay);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto w = params[p]->values();
        const auto g = grads.params[p].values();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_f * (g[k] + decay * w[k]);
      }
    }
    if (val_set != nullptr && config.eval_each_epoch && !run.halted) {
      const auto ev = evaluate(model, *val_set);
      run.epochs.push_back(EpochRecord{epoch, ev.accuracy, ev.entropy});
    }
  }
  return run;
}

EvalResult evaluate(const TinyModel& model, const Dataset& split) {
  const std::size_t chunk = 256;
  const std::size_t vocab = model.config().vocab;
  double correct = 0.0;
  double entropy_sum = 0.0;
  std::size_t active = 0;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < split.size(); begin += chunk) {
    rows.clear();
    for (std::size_t r = begin; r < std::min(split.size(), begin + chunk); ++r) rows.push_back(r);
    const TokenBatch batch = split.batch(rows);
    const std::size_t count = batch.active_tokens();
    if (count == 0) continue;
    const auto fwd = forward(model, batch);
    for (std::size_t t = 0; t < batch.tokens(); ++t) {
      if (batch.padded(t)) continue;
      const float* row = fwd.logits.data() + t * vocab;
      const auto best = static_cast<std::int32_t>(std::max_element(row, row + vocab) - row);
      correct += best == batch.targets[t] ? 1.0 : 0.0;
    }
    entropy_sum += predictive_entropy<float>(fwd.logits, vocab, batch) * static_cast<double>(count);
    active += count;
  }
  if (active == 0) throw InvalidArgument("evaluate: split has no non-padding tokens");
  return EvalResult{correct / static_cast<double>(active), entropy_sum / static_cast<double>(active)};
}

// ---- checkpoints -------------------------------------------------------------------

namespace {

std::string file_name_for(const std::string& name, const char* suffix) {
  std::string out = name;
  std::replace(out.begin(), out.end(), '.', '_');
  return out + suffix;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TinyModel& model) {
  std::filesystem::create_directories(dir);
  const auto& cfg = model.config();
  nlohmann::json manifest;
  manifest["format"] = "sparsekit-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = {{"vocab", cfg.vocab},
                        {"d_model", cfg.d_model},
                        {"blocks", cfg.blocks},
                        {"seq", cfg.seq},
                        {"expansion", cfg.expansion},
                        {"embedding_scale", cfg.embedding_scale},
                        {"prune_embeddings", cfg.prune_embeddings},
                        {"prune_head", cfg.prune_head}};
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    nlohmann::json e;
    e["name"] = names[i];
    e["rows"] = params[i]->rows();
    e["cols"] = params[i]->cols();
    e["file"] = file_name_for(names[i], ".skdm");
    save_skdm(dir / e["file"].get<std::string>(), *params[i]);
    if (auto it = model.masks.find(names[i]); it != model.masks.end()) {
      e["mask"] = file_name_for(names[i], ".mask.skdm");
      save_skdm(dir / e["mask"].get<std::string>(), it->second.as_matrix());
    } else {
      e["mask"] = nullptr;
    }
    entries.push_back(std::move(e));
  }
  manifest["parameters"] = std::move(entries);
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("cannot write manifest in " + dir.string());
}

TinyModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "sparsekit-checkpoint") throw FormatError("not a sparsekit checkpoint");
  const auto& c = manifest.at("config");
  TinyModelConfig cfg;
  cfg.vocab = c.at("vocab");
  cfg.d_model = c.at("d_model");
  cfg.blocks = c.at("blocks");
  cfg.seq = c.at("seq");
  cfg.expansion = c.at("expansion");
  cfg.embedding_scale = c.at("embedding_scale");
  cfg.prune_embeddings = c.at("prune_embeddings");
  cfg.prune_head = c.at("prune_head");
  TinyModel model(cfg);
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  const auto& entries = manifest.at("parameters");
  if (entries.size() != names.size()) throw FormatError("manifest parameter count does not match config");
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& e = entries[i];
    if (e.at("name") != names[i]) throw FormatError("manifest parameter order mismatch at " + names[i]);
    auto m = load_skdm(dir / e.at("file").get<std::string>());
    if (m.rows() != params[i]->rows() || m.cols() != params[i]->cols()) {
      throw FormatError("shape mismatch for " + names[i]);
    }
    *params[i] = std::move(m);
    if (!e.at("mask").is_null()) {
      model.masks[names[i]] = PruneMask::from_matrix(load_skdm(dir / e.at("mask").get<std::string>()));
      model.masks[names[i]].check_shape(params[i]->rows(), params[i]->cols());
    }
  }
  return model;
}

template class BasicTinyModel<float>;
template class BasicTinyModel<double>;
template BasicTinyModel<double> BasicTinyModel<float>::cast<double>() const;
template BasicTinyModel<float> BasicTinyModel<double>::cast<float>() const;
template ForwardResult<float> forward(const BasicTinyModel<float>&, const TokenBatch&);
template ForwardResult<double> forward(const BasicTinyModel<double>&, const TokenBatch&);
template Gradients<float> backward(const BasicTinyModel<float>&, const TokenBatch&, const ForwardResult<float>&,
                                   const LossBreakdown<float>&);
template Gradients<double> backward(const BasicTinyModel<double>&, const TokenBatch&, const ForwardResult<double>&,
                                    const LossBreakdown<double>&);

}  // namespace sparsekit
