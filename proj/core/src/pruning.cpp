#include "sparsekit/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sparsekit {

std::size_t PruneMask::kept() const noexcept {
  return static_cast<std::size_t>(std::count(keep_.begin(), keep_.end(), std::uint8_t{1}));
}

double PruneMask::density() const noexcept {
  return keep_.empty() ? 1.0 : static_cast<double>(kept()) / static_cast<double>(keep_.size());
}

void PruneMask::check_shape(std::size_t rows, std::size_t cols) const {
  if (rows != rows_ || cols != cols_) {
    throw DimensionError("mask is " + std::to_string(rows_) + "x" + std::to_string(cols_) + ", matrix is " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

DenseMatrix PruneMask::as_matrix() const {
  DenseMatrix m(rows_, cols_);
  for (std::size_t i = 0; i < keep_.size(); ++i) m.values()[i] = keep_[i] ? 1.0f : 0.0f;
  return m;
}

PruneMask PruneMask::from_matrix(const DenseMatrix& m) {
  PruneMask mask(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) mask.set(i, m.values()[i] != 0.0f);
  return mask;
}

std::size_t prune_count(double sparsity, std::size_t total) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw InvalidArgument("sparsity must lie in [0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(total) + 0.5));
  return std::min(k, total);
}

PruneResult magnitude_prune(const DenseMatrix& w, double sparsity) {
  const std::size_t total = w.size();
  const std::size_t k = prune_count(sparsity, total);
  PruneResult out{w, PruneMask(w.rows(), w.cols())};
  if (k == 0) return out;

  // The k-th smallest magnitude is the threshold. Everything strictly below
  // goes; entries equal to it go in row-major order until k is reached.
  std::vector<float> mags(total);
  std::transform(w.values().begin(), w.values().end(), mags.begin(), [](float v) { return std::fabs(v); });
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k - 1), mags.end());
  const float threshold = mags[k - 1];
  mags = {};

  std::size_t below = 0;
  for (float v : w.values()) below += std::fabs(v) < threshold ? 1 : 0;
  std::size_t ties_to_drop = k - below;

  auto values = out.weights.values();
  for (std::size_t i = 0; i < total; ++i) {
    const float mag = std::fabs(values[i]);
    bool drop = mag < threshold;
    if (!drop && mag == threshold && ties_to_drop > 0) {
      drop = true;
      --ties_to_drop;
    }
    if (drop) {
      values[i] = 0.0f;
      out.mask.set(i, false);
    }
  }
  return out;
}

PruneResult nm_project(const DenseMatrix& w, const NMPattern& pattern) {
  pattern.check();
  if (w.cols() % pattern.m != 0) {
    throw DimensionError("N:M block length " + std::to_string(pattern.m) + " does not divide " +
                         std::to_string(w.cols()) + " columns");
  }
  PruneResult out{w, PruneMask(w.rows(), w.cols())};
  std::vector<std::size_t> order(pattern.m);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    auto row = out.weights.row(r);
    for (std::size_t b = 0; b < row.size(); b += pattern.m) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      // Larger magnitude first; stable keeps the lower index ahead on ties.
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t c) { return std::fabs(row[b + a]) > std::fabs(row[b + c]); });
      for (std::size_t i = pattern.n; i < pattern.m; ++i) {
        row[b + order[i]] = 0.0f;
        out.mask.set(r * w.cols() + b + order[i], false);
      }
    }
  }
  return out;
}

DenseMatrix freeze_mask(const DenseMatrix& grad, const PruneMask& mask) {
  DenseMatrix out = grad;
  mask.apply(out);
  return out;
}

void SparsitySchedule::validate() const {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0 && levels[i] <= 1.0)) {
      throw InvalidArgument("sparsity level " + std::to_string(levels[i]) + " outside (0, 1]");
    }
    if (i > 0 && !(levels[i] > levels[i - 1])) throw InvalidArgument("sparsity levels must be strictly increasing");
  }
}

ScheduleError::ScheduleError(double level, const std::string& what)
    : Error("at sparsity level " + std::to_string(level) + ": " + what), level_(level) {}

std::vector<LevelRecord> run_schedule(std::span<const PrunableLayer> layers, const SparsitySchedule& schedule,
                                      const Pruner& pruner, const FinetuneFn& finetune) {
  schedule.validate();
  std::vector<LevelRecord> history;
  for (std::size_t li = 0; li < schedule.levels.size(); ++li) {
    const double level = schedule.levels[li];
    LevelRecord record;
    record.level = level;
    try {
      for (const auto& layer : layers) {
        auto result = pruner.prune(*layer.weights, level);
        *layer.weights = std::move(result.weights);
        *layer.mask = std::move(result.mask);
      }
      if (finetune) record.metrics = finetune(li, level, schedule.finetune_epochs_per_level);
    } catch (const ScheduleError&) {
      throw;
    } catch (const std::exception& e) {
      throw ScheduleError(level, e.what());
    }
    for (const auto& layer : layers) record.layer_sparsity.push_back(sparsity_of(*layer.weights).sparsity);
    history.push_back(std::move(record));
  }
  return history;
}

}  // namespace sparsekit
