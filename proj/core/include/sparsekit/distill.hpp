#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsekit/error.hpp"

namespace sparsekit {

// Targets and padding for a B x seq block of tokens. `inputs` feeds the toy
// model and may be left empty by callers that only evaluate losses.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> inputs;
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> padding;  // 1 marks a padding token

  std::size_t tokens() const noexcept { return batch * seq; }
  bool padded(std::size_t i) const noexcept { return padding[i] != 0; }
  std::size_t active_tokens() const noexcept;

  // Shapes agree, targets < vocab, at least one non-padding token.
  void validate(std::size_t vocab) const;
};

// One B x seq x d_model map per model block.
template <typename T>
struct FeatureMaps {
  std::size_t d_model = 0;
  std::vector<std::vector<T>> layers;
};

template <typename T>
struct LossValue {
  T loss = T(0);
  std::vector<T> grad;  // same shape as the differentiated input
};

// Mean over non-padding tokens of -log softmax(logits)[target].
template <typename T>
LossValue<T> task_loss(std::span<const T> logits, std::size_t vocab, const TokenBatch& batch);

// Masked logit distillation: per-token KL(p_teacher || p_student) summed over
// the vocabulary, averaged over non-padding tokens. Gradient is w.r.t. the
// student logits; the teacher is a constant. `temperature` divides both
// logit sets and defaults to 1.
template <typename T>
LossValue<T> logit_kd_loss(std::span<const T> teacher_logits, std::span<const T> student_logits, std::size_t vocab,
                           const TokenBatch& batch, T temperature = T(1));

// Normalized feature MSE for one block: MSE(f_t, f_s) / MSE(f_t, 0), both
// over non-padding tokens only. Throws DegenerateTeacher when the teacher
// map is (numerically) zero on those tokens.
template <typename T>
LossValue<T> squarehead_layer_loss(std::span<const T> teacher_features, std::span<const T> student_features,
                                   std::size_t d_model, const TokenBatch& batch);

inline constexpr double kSquareHeadMinDenominator = 1e-12;

// Plain sum of per-block terms.
double squarehead_total(std::span<const double> per_layer);

// Mean per-token Shannon entropy of softmax(logits), in nats.
template <typename T>
double predictive_entropy(std::span<const T> logits, std::size_t vocab, const TokenBatch& batch);

enum class LossVariant {
  cross_entropy,   // L_task
  standard_kd,     // L_task + lambda * L_logit
  squarehead,      // L_task + lambda * L_feat
  kd_squarehead,   // L_task + lambda * (L_logit + L_feat)
};

std::string_view to_string(LossVariant v) noexcept;
LossVariant parse_loss_variant(std::string_view s);
bool needs_teacher_logits(LossVariant v) noexcept;
bool needs_teacher_features(LossVariant v) noexcept;

// Scalar assembly used by compute_loss. Missing parts required by the
// variant throw.
double combine(LossVariant variant, double task, std::optional<double> logit_kd, std::optional<double> feat,
               double lambda);

template <typename T>
struct LossBreakdown {
  LossVariant variant = LossVariant::cross_entropy;
  T task = T(0);
  T logit_kd = T(0);
  std::vector<T> feat_per_layer;
  T feat_total = T(0);
  T total = T(0);
  std::vector<T> grad_logits;                 // d total / d student logits
  std::vector<std::vector<T>> grad_features;  // d total / d student feature maps (empty if unused)
};

template <typename T>
struct LossInputs {
  std::size_t vocab = 0;
  const TokenBatch* batch = nullptr;
  std::span<const T> student_logits;
  const FeatureMaps<T>* student_features = nullptr;
  std::span<const T> teacher_logits;              // empty when absent
  const FeatureMaps<T>* teacher_features = nullptr;
  T temperature = T(1);
};

template <typename T>
LossBreakdown<T> compute_loss(LossVariant variant, const LossInputs<T>& in, T lambda = T(1));

inline constexpr const char* kLossCsvHeader = "step,variant,task,logit_kd,feat_total,total,entropy";
void write_loss_csv_row(std::ostream& out, std::size_t step, const LossBreakdown<float>& b, double entropy);

}  // namespace sparsekit
