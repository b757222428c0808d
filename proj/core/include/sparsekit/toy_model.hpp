#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparsekit/distill.hpp"
#include "sparsekit/pruning.hpp"
#include "sparsekit/rng.hpp"
#include "sparsekit/tensor.hpp"

namespace sparsekit {

struct TinyModelConfig {
  std::size_t vocab = 32;
  std::size_t d_model = 64;
  std::size_t blocks = 2;
  std::size_t seq = 16;
  std::size_t expansion = 4;
  // Initial embedding scale; block weights use 1/sqrt(fan_in).
  double embedding_scale = 0.3;
  bool prune_embeddings = false;
  bool prune_head = false;

  std::size_t hidden() const noexcept { return expansion * d_model; }
  void validate() const;
  friend bool operator==(const TinyModelConfig&, const TinyModelConfig&) = default;
};

// Per-position MLP language model:
//   h0[i]   = E[x_i] + P[x_{i-1}]            (x_{-1} = 0)
//   h_{l+1} = h_l + W2 tanh(W1 h_l + b1) + b2
//   logits  = H h_L + c
// The second embedding table P is the only path between positions, enough
// for targets that depend on the previous token. Each h_l (l >= 1) is a
// feature map for the distillation losses.
template <typename T>
class BasicTinyModel {
 public:
  struct Block {
    BasicMatrix<T> w1;  // hidden x d
    BasicMatrix<T> b1;  // 1 x hidden
    BasicMatrix<T> w2;  // d x hidden
    BasicMatrix<T> b2;  // 1 x d
    friend bool operator==(const Block&, const Block&) = default;
  };

  BasicTinyModel() = default;
  explicit BasicTinyModel(const TinyModelConfig& config);  // all-zero parameters

  static BasicTinyModel initialized(const TinyModelConfig& config, Rng& rng);

  const TinyModelConfig& config() const noexcept { return config_; }

  BasicMatrix<T> embedding;       // vocab x d
  BasicMatrix<T> prev_embedding;  // vocab x d
  std::vector<Block> blocks;
  BasicMatrix<T> head;       // vocab x d
  BasicMatrix<T> head_bias;  // 1 x vocab

  // Masks keyed by parameter name; absent means dense.
  std::map<std::string, PruneMask> masks;

  // Parameters in a fixed order, used for optimisers, checkpoints and
  // finite-difference sweeps.
  std::vector<std::string> parameter_names() const;
  std::vector<BasicMatrix<T>*> parameters();
  std::vector<const BasicMatrix<T>*> parameters() const;
  std::size_t parameter_count() const;

  // Weight matrices eligible for pruning under the current config.
  std::vector<std::string> prunable_names() const;

  template <typename U>
  BasicTinyModel<U> cast() const;

  friend bool operator==(const BasicTinyModel&, const BasicTinyModel&) = default;

 private:
  TinyModelConfig config_;
};

using TinyModel = BasicTinyModel<float>;

template <typename T>
struct ForwardResult {
  std::vector<T> logits;  // B x seq x vocab
  FeatureMaps<T> features;
  // Activations kept for backward: h_0 and tanh outputs per block.
  std::vector<T> h0;
  std::vector<std::vector<T>> hidden;
};

// Throws when an input id is outside the vocabulary.
template <typename T>
ForwardResult<T> forward(const BasicTinyModel<T>& model, const TokenBatch& batch);

template <typename T>
struct Gradients {
  std::vector<BasicMatrix<T>> params;  // aligned with parameters()
};

// Reverse-mode gradients of the loss whose output-side derivatives are in
// `loss` (w.r.t. logits and, when present, block features). Gradients at
// masked positions are zeroed.
template <typename T>
Gradients<T> backward(const BasicTinyModel<T>& model, const TokenBatch& batch, const ForwardResult<T>& fwd,
                      const LossBreakdown<T>& loss);

// Views for pruning.run_schedule; each prunable matrix gets a mask slot.
std::vector<PrunableLayer> prunable_layers(TinyModel& model);

// Installs masks recording every currently-zero prunable weight as dropped.
void prune_model(TinyModel& model, const Pruner& pruner, double sparsity);

// Sparsity over the prunable matrices only.
double prunable_sparsity(const TinyModel& model);

// ---- synthetic task -------------------------------------------------------

// y_i = (x_i + x_{i-1}) mod V with x_{-1} = 0; every sequence keeps at least
// `min_length` real tokens followed by a padding tail.
struct SyntheticTaskConfig {
  std::uint64_t seed = 1;
  std::size_t vocab = 32;
  std::size_t seq = 16;
  std::size_t min_length = 8;
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::size_t test_size = 500;
};

struct Dataset {
  std::size_t seq = 0;
  std::vector<std::int32_t> inputs;
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> padding;

  std::size_t size() const noexcept { return seq == 0 ? 0 : inputs.size() / seq; }
  TokenBatch batch(std::span<const std::size_t> rows) const;
  TokenBatch all() const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

Dataset generate_sequences(std::size_t count, std::size_t vocab, std::size_t seq, std::size_t min_length, Rng& rng);

struct SyntheticTask {
  SyntheticTaskConfig config;
  Dataset train;
  Dataset val;
  Dataset test;
};

SyntheticTask make_task(const SyntheticTaskConfig& config);

// ---- training --------------------------------------------------------------

struct TrainConfig {
  LossVariant variant = LossVariant::cross_entropy;
  std::size_t epochs = 20;
  double lr = 0.1;
  std::size_t batch_size = 16;
  std::size_t warmup_steps = 20;
  double weight_decay = 0.0;
  double lambda = 1.0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  bool eval_each_epoch = true;
  // Lets consecutive runs share one warmup/decay curve: the run's step k is
  // scheduled as step lr_step_offset + k of lr_total_steps (0: own length).
  std::size_t lr_step_offset = 0;
  std::size_t lr_total_steps = 0;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double task = 0.0;
  double logit_kd = 0.0;
  double feat_total = 0.0;
  double total = 0.0;
  double entropy = 0.0;  // student predictive entropy on the batch
};

struct EpochRecord {
  std::size_t epoch = 0;
  double val_accuracy = 0.0;
  double val_entropy = 0.0;
};

struct TrainRun {
  LossVariant variant = LossVariant::cross_entropy;
  std::uint64_t seed = 0;
  double sparsity = 0.0;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  bool diverged = false;
  std::optional<std::size_t> diverged_step;
  bool halted = false;  // stopped early on a non-finite loss
};

// Linear warmup to `lr` over warmup_steps, then linear decay to zero at the
// last step.
double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t total_steps);

// Plain SGD. Masks are honoured every step, so pruned weights stay exactly
// zero. Divergence is checked after every step; a non-finite loss marks the
// run diverged and stops it, a spike only marks it.
TrainRun train(TinyModel& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& config,
               const TinyModel* teacher = nullptr);

struct DivergenceConfig {
  std::size_t window = 20;
  double spike_factor = 10.0;
};

// First step whose loss is non-finite, or exceeds spike_factor times the
// median of the preceding `window` losses.
std::optional<std::size_t> detect_divergence(std::span<const double> losses, const DivergenceConfig& config = {});

struct EvalResult {
  double accuracy = 0.0;
  double entropy = 0.0;
};

EvalResult evaluate(const TinyModel& model, const Dataset& split);

// ---- checkpoints -----------------------------------------------------------

// One SKDM per parameter, one SKDM per installed mask and manifest.json.
void save_checkpoint(const std::filesystem::path& dir, const TinyModel& model);
TinyModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace sparsekit
