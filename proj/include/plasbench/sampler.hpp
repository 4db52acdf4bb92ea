#pragma once

#include <cstdint>
#include <vector>

#include "plasbench/rng.hpp"

namespace plasbench {

/// Per-example source mixing: at step n each batch slot is drawn from the
/// full set with probability p(n) = 1 − γ^(exponent_scale · n / N) and from
/// the pretraining set otherwise, uniformly and with replacement.
struct BlendingSchedule {
  double gamma = 0.8;
  double exponent_scale = 50.0;
  std::uint64_t total_steps = 1;
  std::vector<std::size_t> pretrain_indices;
  std::vector<std::size_t> full_indices;

  void validate() const;
};

/// 1 − γ^(exponent_scale·n/N). Requires 0 ≤ n ≤ N.
double blending_probability(const BlendingSchedule& schedule, std::uint64_t step_n);

/// Bernoulli(p) per slot, then a uniform index from the chosen set. When
/// `full_draws` is given it is incremented by the number of full-set slots.
std::vector<std::size_t> sample_blending_batch(const BlendingSchedule& schedule, std::size_t batch_size,
                                               std::uint64_t step_n, Rng& rng, std::size_t* full_draws = nullptr);

/// Same draw with an explicit probability (used for fixed-p checks).
std::vector<std::size_t> sample_mixed_batch(const std::vector<std::size_t>& pretrain,
                                            const std::vector<std::size_t>& full, double p_full,
                                            std::size_t batch_size, Rng& rng, std::size_t* full_draws = nullptr);

/// Shuffled passes over a subset: each epoch is a fresh permutation cut
/// into ceil(|subset|/batch) batches (the last one possibly short), so
/// every index appears exactly once per epoch.
class EpochSampler {
 public:
  EpochSampler(std::vector<std::size_t> subset, std::size_t batch_size, std::uint64_t seed);

  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  std::vector<std::size_t> next_batch();

 private:
  std::vector<std::size_t> subset_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t steps_per_epoch_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace plasbench
