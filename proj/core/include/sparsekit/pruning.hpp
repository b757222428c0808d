#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sparsekit/sparse_format.hpp"
#include "sparsekit/tensor.hpp"

namespace sparsekit {

// One keep bit per weight, row-major.
class PruneMask {
 public:
  PruneMask() = default;
  PruneMask(std::size_t rows, std::size_t cols, bool keep = true) : rows_(rows), cols_(cols), keep_(rows * cols, keep) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return keep_.size(); }
  bool keep(std::size_t i) const noexcept { return keep_[i] != 0; }
  bool keep(std::size_t r, std::size_t c) const noexcept { return keep_[r * cols_ + c] != 0; }
  void set(std::size_t i, bool keep) noexcept { keep_[i] = keep ? 1 : 0; }
  std::size_t kept() const noexcept;
  double density() const noexcept;

  // Zero every dropped position of `m` in place.
  template <typename T>
  void apply(BasicMatrix<T>& m) const {
    check_shape(m.rows(), m.cols());
    auto v = m.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!keep_[i]) v[i] = T(0);
    }
  }

  void check_shape(std::size_t rows, std::size_t cols) const;
  DenseMatrix as_matrix() const;  // 1.0 kept, 0.0 dropped
  static PruneMask from_matrix(const DenseMatrix& m);  // nonzero means kept

  friend bool operator==(const PruneMask&, const PruneMask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> keep_;
};

struct PruneResult {
  DenseMatrix weights;
  PruneMask mask;
};

// k = round(sparsity * total), half rounded up.
std::size_t prune_count(double sparsity, std::size_t total);

// Zeroes the k smallest-|w| entries of the layer; among equal magnitudes the
// earlier row-major index goes first. Survivors are untouched.
PruneResult magnitude_prune(const DenseMatrix& w, double sparsity);

// Keeps the n largest-|w| entries of every length-m block along each row
// (lower index wins ties).
PruneResult nm_project(const DenseMatrix& w, const NMPattern& pattern);

DenseMatrix freeze_mask(const DenseMatrix& grad, const PruneMask& mask);

class Pruner {
 public:
  virtual ~Pruner() = default;
  virtual std::string name() const = 0;
  virtual PruneResult prune(const DenseMatrix& w, double sparsity) const = 0;
};

class MagnitudePruner final : public Pruner {
 public:
  std::string name() const override { return "magnitude"; }
  PruneResult prune(const DenseMatrix& w, double sparsity) const override { return magnitude_prune(w, sparsity); }
};

struct SparsitySchedule {
  std::vector<double> levels;  // strictly increasing, each in (0, 1]
  std::size_t finetune_epochs_per_level = 1;
  // Restart the learning-rate schedule (warmup + decay) at every level.
  bool restart_lr_per_level = true;

  void validate() const;
};

// Non-owning view of one prunable weight matrix and its mask.
struct PrunableLayer {
  std::string name;
  DenseMatrix* weights = nullptr;
  PruneMask* mask = nullptr;
};

struct LevelRecord {
  double level = 0.0;
  std::vector<double> layer_sparsity;
  std::map<std::string, double> metrics;  // whatever the fine-tune step reports
};

class ScheduleError : public Error {
 public:
  ScheduleError(double level, const std::string& what);
  double level() const noexcept { return level_; }

 private:
  double level_;
};

// Called after pruning at `level_index`; fine-tunes with masks frozen and
// returns metrics to record.
using FinetuneFn = std::function<std::map<std::string, double>(std::size_t level_index, double level, std::size_t epochs)>;

// For each level in order: prune every layer to the level, then fine-tune.
// An empty schedule leaves the layers untouched.
std::vector<LevelRecord> run_schedule(std::span<const PrunableLayer> layers, const SparsitySchedule& schedule,
                                      const Pruner& pruner, const FinetuneFn& finetune);

}  // namespace sparsekit
