#include "plasbench/sampler.hpp"

#include <cmath>

#include "plasbench/errors.hpp"

namespace plasbench {

void BlendingSchedule::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("blending: gamma must be in (0, 1)");
  if (total_steps == 0) throw ConfigError("blending: total_steps must be positive");
  if (pretrain_indices.empty() || full_indices.empty()) throw ConfigError("blending: empty source set");
}

double blending_probability(const BlendingSchedule& schedule, std::uint64_t step_n) {
  if (step_n > schedule.total_steps) {
    throw ContractError("blending_probability: step " + std::to_string(step_n) + " beyond N = " +
                        std::to_string(schedule.total_steps));
  }
  const double exponent =
      schedule.exponent_scale * static_cast<double>(step_n) / static_cast<double>(schedule.total_steps);
  return -std::expm1(exponent * std::log(schedule.gamma));
}

std::vector<std::size_t> sample_mixed_batch(const std::vector<std::size_t>& pretrain,
                                            const std::vector<std::size_t>& full, double p_full,
                                            std::size_t batch_size, Rng& rng, std::size_t* full_draws) {
  if (batch_size == 0) throw ConfigError("sample_batch: batch_size must be positive");
  if (pretrain.empty() || full.empty()) throw ConfigError("sample_batch: empty source set");
  std::vector<std::size_t> batch(batch_size);
  std::size_t from_full = 0;
  for (auto& slot : batch) {
    const bool use_full = uniform_unit(rng) < p_full;
    const auto& source = use_full ? full : pretrain;
    slot = source[uniform_index(rng, source.size())];
    from_full += use_full ? 1 : 0;
  }
  if (full_draws) *full_draws += from_full;
  return batch;
}

std::vector<std::size_t> sample_blending_batch(const BlendingSchedule& schedule, std::size_t batch_size,
                                               std::uint64_t step_n, Rng& rng, std::size_t* full_draws) {
  return sample_mixed_batch(schedule.pretrain_indices, schedule.full_indices,
                            blending_probability(schedule, step_n), batch_size, rng, full_draws);
}

EpochSampler::EpochSampler(std::vector<std::size_t> subset, std::size_t batch_size, std::uint64_t seed)
    : subset_(std::move(subset)), batch_size_(batch_size), rng_(seed) {
  if (batch_size_ == 0) throw ConfigError("sample_batch: batch_size must be positive");
  if (subset_.empty()) throw ConfigError("sample_batch: empty source set");
  steps_per_epoch_ = (subset_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> EpochSampler::next_batch() {
  if (cursor_ >= order_.size()) {
    order_ = subset_;
    shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

}  // namespace plasbench
