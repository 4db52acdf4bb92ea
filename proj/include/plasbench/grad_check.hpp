#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "plasbench/tape.hpp"
#include "plasbench/tensor.hpp"

namespace plasbench {

/// One parameter tensor taking part in a gradient check.
struct GradCheckParam {
  std::string name;
  int group = 0;
  Tensor<double>* tensor = nullptr;
};

struct GradCheckOptions {
  std::size_t coords_per_group = 32;
  std::uint64_t seed = 0x9a7c4e11ULL;
};

struct GradCheckGroupResult {
  int group = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0;
  std::string worst_param;
};

struct GradCheckReport {
  std::vector<GradCheckGroupResult> groups;
  double max_rel_error = 0;
  double rel_tol = 0;
  bool passed() const { return max_rel_error < rel_tol; }
};

/// Builds the scalar loss on a tape, registering the checked parameters via
/// Tape::parameter. Called once with gradients recorded and then twice per
/// sampled coordinate on inference tapes.
using LossBuilder = std::function<Var(Tape<double>&)>;

/// Compares reverse-mode gradients against central finite differences with
/// step h = 1e-5·max(1, |θᵢ|) on a seeded random subset of coordinates per
/// group (all coordinates when a group has fewer than coords_per_group).
/// Relative error is |g_ad − g_fd| / max(|g_fd|, 1e-8).
///
/// Throws NumericError naming the parameter when a gradient is not finite.
GradCheckReport grad_check(const std::vector<GradCheckParam>& params, const LossBuilder& build_loss,
                           double rel_tol, const GradCheckOptions& options = {});

}  // namespace plasbench
