#include "plasbench/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "plasbench/errors.hpp"
#include "plasbench/rng.hpp"

namespace plasbench {
namespace {

double evaluate(const LossBuilder& build_loss) {
  Tape<double> tape(false);
  return tape.value(build_loss(tape)).item();
}

}  // namespace

GradCheckReport grad_check(const std::vector<GradCheckParam>& params, const LossBuilder& build_loss,
                           double rel_tol, const GradCheckOptions& options) {
  for (const auto& p : params) {
    if (!p.tensor) throw ContractError("grad_check: null tensor for " + p.name);
    p.tensor->clear_grad();
    p.tensor->set_requires_grad(true);
  }
  {
    Tape<double> tape;
    Var loss = build_loss(tape);
    tape.backward(loss);
  }
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) throw ContractError("grad_check: parameter " + p.name + " received no gradient");
    for (double g : p.tensor->grad()) {
      if (!std::isfinite(g)) throw NumericError("grad_check: non-finite gradient in " + p.name);
    }
  }

  // coordinate = (param index, flat offset)
  std::map<int, std::vector<std::pair<std::size_t, std::size_t>>> by_group;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& coords = by_group[params[pi].group];
    for (std::size_t k = 0; k < params[pi].tensor->numel(); ++k) coords.emplace_back(pi, k);
  }

  GradCheckReport report;
  report.rel_tol = rel_tol;
  Rng rng(options.seed);
  for (auto& [group, coords] : by_group) {
    if (coords.empty()) continue;
    if (coords.size() > options.coords_per_group) {
      shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_group);
      std::sort(coords.begin(), coords.end());
    }
    GradCheckGroupResult result;
    result.group = group;
    result.coordinates = coords.size();
    for (auto [pi, k] : coords) {
      Tensor<double>& t = *params[pi].tensor;
      const double original = t[k];
      const double h = 1e-5 * std::max(1.0, std::abs(original));
      t[k] = original + h;
      const double up = evaluate(build_loss);
      t[k] = original - h;
      const double down = evaluate(build_loss);
      t[k] = original;
      const double fd = (up - down) / (2 * h);
      if (!std::isfinite(fd)) throw NumericError("grad_check: non-finite loss while perturbing " + params[pi].name);
      const double ad = t.grad()[k];
      const double rel = std::abs(ad - fd) / std::max(std::abs(fd), 1e-8);
      if (result.worst_param.empty() || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = params[pi].name;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, result.max_rel_error);
    report.groups.push_back(std::move(result));
  }
  return report;
}

}  // namespace plasbench
