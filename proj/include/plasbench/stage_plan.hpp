#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plasbench/dataset.hpp"

namespace plasbench {

/// Nested training subsets D_1 ⊆ … ⊆ D_{n+1} for multi-stage training.
///
/// Construction, given n pretraining stages and a uniform ratio r:
///  1. partition the class set into n+1 cells C_1..C_{n+1};
///  2. split the examples into a uniform pool D_u with |D_u| = round(r·N)
///     and a class pool D_c holding the rest;
///  3. split D_u into n+1 near-equal cells D_{u,1}..D_{u,n+1};
///  4. D_i = D_{i−1} ∪ D_{u,i} ∪ {j ∈ D_c : label(j) ∈ C_i}, D_0 = ∅.
///
/// Cell sizes differ by at most one, larger cells first; all choices are
/// seeded. Every index set is kept sorted.
struct StagePlan {
  std::vector<std::vector<std::size_t>> stages;
  std::size_t n_pretrain_stages = 0;
  std::vector<std::vector<int>> class_partition;
  double uniform_ratio = 0;
  std::uint64_t seed = 0;
  std::size_t dataset_size = 0;
  std::vector<std::size_t> uniform_pool;
  std::vector<std::size_t> class_pool;
  std::vector<std::vector<std::size_t>> uniform_cells;
};

/// Throws ConfigError when n_stages == 0, r ∉ [0, 1], or r < 1 with fewer
/// than n_stages + 1 classes.
StagePlan build_stage_plan(const LabeledDataset& data, std::size_t n_stages, double ratio_r, std::uint64_t seed);

struct PlanCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct StagePlanReport {
  std::vector<PlanCheck> checks;
  bool passed() const;
  const PlanCheck* find(const std::string& name) const;
};

/// Checks: stage_count, class_partition, pool_split (D_u ∩ D_c = ∅,
/// D_u ∪ D_c = all), uniform_size (|D_u| = round(r·N)), uniform_cells,
/// monotone, coverage, increments (D_i \ D_{i−1} is exactly
/// D_{u,i} ∪ class-i examples of D_c). Never throws for malformed plans.
StagePlanReport verify_stage_plan(const StagePlan& plan, const LabeledDataset& data);

}  // namespace plasbench
