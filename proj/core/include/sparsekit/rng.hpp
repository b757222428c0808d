#pragma once

#include <cstdint>
#include <variant>

#include "sparsekit/tensor.hpp"

namespace sparsekit {

// xoshiro256** seeded through splitmix64. Only integer ops and explicitly
// rounded conversions are used, so a seed yields the same stream everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t next_u64() noexcept;
  // [0, 1) with 53 random bits.
  double uniform01() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }
  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) noexcept;
  // Box-Muller; the spare deviate is cached.
  double gaussian() noexcept;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

struct Uniform {
  double a = 1.0;  // values in [-a, a]
};
struct Gaussian {
  double sigma = 1.0;
};
using Distribution = std::variant<Uniform, Gaussian>;

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, const Distribution& dist);

}  // namespace sparsekit
