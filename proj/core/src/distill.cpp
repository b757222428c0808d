#include "sparsekit/distill.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace sparsekit {
namespace {

void check_logits(std::size_t size, std::size_t vocab, const TokenBatch& batch, const char* what) {
  if (vocab == 0 || size != batch.tokens() * vocab) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(batch.tokens()) + " x " +
                         std::to_string(vocab) + " logits, got " + std::to_string(size));
  }
}

// log-softmax of one row into `out`, accumulated in double.
template <typename T>
void log_softmax_row(const T* logits, std::size_t vocab, T temperature, std::vector<double>& out) {
  out.resize(vocab);
  double peak = -INFINITY;
  for (std::size_t v = 0; v < vocab; ++v) peak = std::max(peak, static_cast<double>(logits[v]) / temperature);
  double total = 0.0;
  for (std::size_t v = 0; v < vocab; ++v) {
    out[v] = static_cast<double>(logits[v]) / temperature - peak;
    total += std::exp(out[v]);
  }
  const double log_total = std::log(total);
  for (double& v : out) v -= log_total;
}

template <typename T>
void require_finite(std::span<const T> values, const char* what) {
  for (T v : values) {
    if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + ": non-finite input");
  }
}

}  // namespace

std::size_t TokenBatch::active_tokens() const noexcept {
  return static_cast<std::size_t>(std::count(padding.begin(), padding.end(), std::uint8_t{0}));
}

void TokenBatch::validate(std::size_t vocab) const {
  if (targets.size() != tokens() || padding.size() != tokens()) {
    throw DimensionError("token batch: targets/padding must have B x seq entries");
  }
  if (!inputs.empty() && inputs.size() != tokens()) throw DimensionError("token batch: inputs must have B x seq entries");
  if (active_tokens() == 0) throw InvalidArgument("token batch: every token is padding");
  for (std::size_t i = 0; i < tokens(); ++i) {
    if (padded(i)) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw InvalidArgument("token batch: target id " + std::to_string(targets[i]) + " outside vocabulary");
    }
  }
}

template <typename T>
LossValue<T> task_loss(std::span<const T> logits, std::size_t vocab, const TokenBatch& batch) {
  batch.validate(vocab);
  check_logits(logits.size(), vocab, batch, "task_loss");
  const double count = static_cast<double>(batch.active_tokens());
  LossValue<T> out{T(0), std::vector<T>(logits.size(), T(0))};
  std::vector<double> logp;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.tokens(); ++i) {
    if (batch.padded(i)) continue;
    log_softmax_row(logits.data() + i * vocab, vocab, T(1), logp);
    const auto target = static_cast<std::size_t>(batch.targets[i]);
    total -= logp[target];
    T* g = out.grad.data() + i * vocab;
    for (std::size_t v = 0; v < vocab; ++v) {
      const double onehot = v == target ? 1.0 : 0.0;
      g[v] = static_cast<T>((std::exp(logp[v]) - onehot) / count);
    }
  }
  out.loss = static_cast<T>(total / count);
  return out;
}

template <typename T>
LossValue<T> logit_kd_loss(std::span<const T> teacher_logits, std::span<const T> student_logits, std::size_t vocab,
                           const TokenBatch& batch, T temperature) {
  batch.validate(vocab);
  check_logits(student_logits.size(), vocab, batch, "logit_kd_loss");
  if (teacher_logits.size() != student_logits.size()) throw DimensionError("logit_kd_loss: teacher/student shapes differ");
  if (!(temperature > T(0))) throw InvalidArgument("logit_kd_loss: temperature must be positive");
  require_finite(teacher_logits, "logit_kd_loss");
  require_finite(student_logits, "logit_kd_loss");

  const double count = static_cast<double>(batch.active_tokens());
  LossValue<T> out{T(0), std::vector<T>(student_logits.size(), T(0))};
  std::vector<double> logp_t;
  std::vector<double> logp_s;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.tokens(); ++i) {
    if (batch.padded(i)) continue;
    log_softmax_row(teacher_logits.data() + i * vocab, vocab, temperature, logp_t);
    log_softmax_row(student_logits.data() + i * vocab, vocab, temperature, logp_s);
    T* g = out.grad.data() + i * vocab;
    for (std::size_t v = 0; v < vocab; ++v) {
      const double pt = std::exp(logp_t[v]);
      if (pt > 0.0) total += pt * (logp_t[v] - logp_s[v]);
      g[v] = static_cast<T>((std::exp(logp_s[v]) - pt) / (count * static_cast<double>(temperature)));
    }
  }
  // Rounding can leave a tiny negative sum for identical distributions.
  out.loss = static_cast<T>(std::max(0.0, total / count));
  return out;
}

template <typename T>
LossValue<T> squarehead_layer_loss(std::span<const T> teacher_features, std::span<const T> student_features,
                                   std::size_t d_model, const TokenBatch& batch) {
  if (d_model == 0 || student_features.size() != batch.tokens() * d_model) {
    throw DimensionError("squarehead_layer_loss: expected B x seq x d_model features");
  }
  if (teacher_features.size() != student_features.size()) {
    throw DimensionError("squarehead_layer_loss: teacher/student shapes differ");
  }
  if (batch.padding.size() != batch.tokens() || batch.active_tokens() == 0) {
    throw InvalidArgument("squarehead_layer_loss: no non-padding tokens");
  }
  const double n = static_cast<double>(batch.active_tokens() * d_model);
  double diff_sq = 0.0;
  double teacher_sq = 0.0;
  for (std::size_t i = 0; i < batch.tokens(); ++i) {
    if (batch.padded(i)) continue;
    for (std::size_t k = 0; k < d_model; ++k) {
      const double t = teacher_features[i * d_model + k];
      const double s = student_features[i * d_model + k];
      diff_sq += (t - s) * (t - s);
      teacher_sq += t * t;
    }
  }
  const double mse_teacher = teacher_sq / n;
  if (!(mse_teacher >= kSquareHeadMinDenominator)) {
    throw DegenerateTeacher("squarehead_layer_loss: teacher features are zero on non-padding tokens");
  }
  LossValue<T> out{static_cast<T>((diff_sq / n) / mse_teacher), std::vector<T>(student_features.size(), T(0))};
  const double scale = 2.0 / (n * mse_teacher);
  for (std::size_t i = 0; i < batch.tokens(); ++i) {
    if (batch.padded(i)) continue;
    for (std::size_t k = 0; k < d_model; ++k) {
      const std::size_t at = i * d_model + k;
      out.grad[at] = static_cast<T>(scale * (static_cast<double>(student_features[at]) - teacher_features[at]));
    }
  }
  return out;
}

double squarehead_total(std::span<const double> per_layer) {
  if (per_layer.empty()) throw InvalidArgument("squarehead_total: no layers");
  double total = 0.0;
  for (double v : per_layer) total += v;
  return total;
}

template <typename T>
double predictive_entropy(std::span<const T> logits, std::size_t vocab, const TokenBatch& batch) {
  if (batch.padding.size() != batch.tokens() || batch.active_tokens() == 0) {
    throw InvalidArgument("predictive_entropy: no non-padding tokens");
  }
  check_logits(logits.size(), vocab, batch, "predictive_entropy");
  std::vector<double> logp;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.tokens(); ++i) {
    if (batch.padded(i)) continue;
    log_softmax_row(logits.data() + i * vocab, vocab, T(1), logp);
    double h = 0.0;
    for (double lp : logp) {
      const double p = std::exp(lp);
      if (p > 0.0) h -= p * lp;
    }
    total += h;
  }
  return total / static_cast<double>(batch.active_tokens());
}

std::string_view to_string(LossVariant v) noexcept {
  switch (v) {
    case LossVariant::cross_entropy: return "ce";
    case LossVariant::standard_kd: return "kd";
    case LossVariant::squarehead: return "squarehead";
    case LossVariant::kd_squarehead: return "kd+squarehead";
  }
  return "?";
}

LossVariant parse_loss_variant(std::string_view s) {
  if (s == "ce" || s == "cross_entropy") return LossVariant::cross_entropy;
  if (s == "kd" || s == "standard_kd") return LossVariant::standard_kd;
  if (s == "squarehead" || s == "sq") return LossVariant::squarehead;
  if (s == "kd+squarehead") return LossVariant::kd_squarehead;
  throw InvalidArgument("unknown loss variant '" + std::string(s) + "' (ce|kd|squarehead|kd+squarehead)");
}

bool needs_teacher_logits(LossVariant v) noexcept {
  return v == LossVariant::standard_kd || v == LossVariant::kd_squarehead;
}

bool needs_teacher_features(LossVariant v) noexcept {
  return v == LossVariant::squarehead || v == LossVariant::kd_squarehead;
}

double combine(LossVariant variant, double task, std::optional<double> logit_kd, std::optional<double> feat,
               double lambda) {
  if (needs_teacher_logits(variant) && !logit_kd) throw InvalidArgument("variant needs the logit distillation term");
  if (needs_teacher_features(variant) && !feat) throw InvalidArgument("variant needs the feature distillation term");
  switch (variant) {
    case LossVariant::cross_entropy: return task;
    case LossVariant::standard_kd: return task + lambda * *logit_kd;
    case LossVariant::squarehead: return task + lambda * *feat;
    case LossVariant::kd_squarehead: return task + lambda * (*logit_kd + *feat);
  }
  return task;
}

template <typename T>
LossBreakdown<T> compute_loss(LossVariant variant, const LossInputs<T>& in, T lambda) {
  if (in.batch == nullptr) throw InvalidArgument("compute_loss: missing batch");
  const TokenBatch& batch = *in.batch;
  LossBreakdown<T> out;
  out.variant = variant;

  auto task = task_loss<T>(in.student_logits, in.vocab, batch);
  out.task = task.loss;
  out.grad_logits = std::move(task.grad);

  std::optional<double> logit_term;
  if (needs_teacher_logits(variant)) {
    if (in.teacher_logits.empty()) throw InvalidArgument("compute_loss: variant needs teacher logits");
    auto kd = logit_kd_loss<T>(in.teacher_logits, in.student_logits, in.vocab, batch, in.temperature);
    out.logit_kd = kd.loss;
    logit_term = kd.loss;
    for (std::size_t i = 0; i < kd.grad.size(); ++i) out.grad_logits[i] += lambda * kd.grad[i];
  }

  std::optional<double> feat_term;
  if (needs_teacher_features(variant)) {
    if (in.teacher_features == nullptr || in.student_features == nullptr) {
      throw InvalidArgument("compute_loss: variant needs teacher and student feature maps");
    }
    const auto& ft = *in.teacher_features;
    const auto& fs = *in.student_features;
    if (ft.layers.size() != fs.layers.size() || ft.d_model != fs.d_model) {
      throw DimensionError("compute_loss: teacher/student feature maps differ in depth or width");
    }
    std::vector<double> per_layer;
    for (std::size_t l = 0; l < fs.layers.size(); ++l) {
      auto term = squarehead_layer_loss<T>(ft.layers[l], fs.layers[l], fs.d_model, batch);
      per_layer.push_back(term.loss);
      out.feat_per_layer.push_back(term.loss);
      for (T& g : term.grad) g *= lambda;
      out.grad_features.push_back(std::move(term.grad));
    }
    out.feat_total = static_cast<T>(squarehead_total(per_layer));
    feat_term = static_cast<double>(out.feat_total);
  }

  out.total = static_cast<T>(combine(variant, out.task, logit_term, feat_term, lambda));
  return out;
}

void write_loss_csv_row(std::ostream& out, std::size_t step, const LossBreakdown<float>& b, double entropy) {
  out << step << ',' << to_string(b.variant) << ',' << b.task << ',' << b.logit_kd << ',' << b.feat_total << ','
      << b.total << ',' << entropy << '\n';
}

#define SPARSEKIT_INSTANTIATE_LOSSES(T)                                                                           \
  template LossValue<T> task_loss<T>(std::span<const T>, std::size_t, const TokenBatch&);                         \
  template LossValue<T> logit_kd_loss<T>(std::span<const T>, std::span<const T>, std::size_t, const TokenBatch&, \
                                         T);                                                                      \
  template LossValue<T> squarehead_layer_loss<T>(std::span<const T>, std::span<const T>, std::size_t,            \
                                                 const TokenBatch&);                                              \
  template double predictive_entropy<T>(std::span<const T>, std::size_t, const TokenBatch&);                      \
  template LossBreakdown<T> compute_loss<T>(LossVariant, const LossInputs<T>&, T);

SPARSEKIT_INSTANTIATE_LOSSES(float)
SPARSEKIT_INSTANTIATE_LOSSES(double)

#undef SPARSEKIT_INSTANTIATE_LOSSES

}  // namespace sparsekit
