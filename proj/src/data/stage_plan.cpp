#include "plasbench/stage_plan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "plasbench/errors.hpp"
#include "plasbench/rng.hpp"

namespace plasbench {
namespace {

// Sizes of `parts` near-equal cells over `total` items, larger cells first.
std::vector<std::size_t> cell_sizes(std::size_t total, std::size_t parts) {
  std::vector<std::size_t> sizes(parts, total / parts);
  for (std::size_t i = 0; i < total % parts; ++i) ++sizes[i];
  return sizes;
}

template <typename U>
std::vector<std::vector<U>> cut(const std::vector<U>& items, std::size_t parts) {
  std::vector<std::vector<U>> cells;
  std::size_t offset = 0;
  for (auto size : cell_sizes(items.size(), parts)) {
    std::vector<U> cell(items.begin() + static_cast<std::ptrdiff_t>(offset),
                        items.begin() + static_cast<std::ptrdiff_t>(offset + size));
    std::sort(cell.begin(), cell.end());
    cells.push_back(std::move(cell));
    offset += size;
  }
  return cells;
}

bool is_sorted_unique(const std::vector<std::size_t>& v) {
  return std::adjacent_find(v.begin(), v.end(), [](auto a, auto b) { return a >= b; }) == v.end();
}

std::vector<std::size_t> sorted_unique(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

StagePlan build_stage_plan(const LabeledDataset& data, std::size_t n_stages, double ratio_r, std::uint64_t seed) {
  if (n_stages == 0) throw ConfigError("build_stage_plan: n_stages must be at least 1");
  if (!(ratio_r >= 0.0 && ratio_r <= 1.0)) throw ConfigError("build_stage_plan: ratio r must be in [0, 1]");
  if (ratio_r < 1.0 && data.classes.size() < n_stages + 1) {
    throw ConfigError("build_stage_plan: " + std::to_string(data.classes.size()) + " classes cannot be split into " +
                      std::to_string(n_stages + 1) + " cells");
  }
  data.validate();

  const std::size_t cells = n_stages + 1;
  const std::size_t n = data.size();
  StagePlan plan;
  plan.n_pretrain_stages = n_stages;
  plan.uniform_ratio = ratio_r;
  plan.seed = seed;
  plan.dataset_size = n;

  // 1. class partition
  std::vector<int> classes = data.classes;
  Rng class_rng(derive_seed(seed, "classes"));
  shuffle(classes.begin(), classes.end(), class_rng);
  plan.class_partition = cut(classes, cells);

  // 2. uniform / class pools
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng pool_rng(derive_seed(seed, "pools"));
  shuffle(order.begin(), order.end(), pool_rng);
  const auto n_uniform = static_cast<std::size_t>(std::llround(ratio_r * static_cast<double>(n)));
  std::vector<std::size_t> uniform_order(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_uniform));
  plan.uniform_pool = uniform_order;
  std::sort(plan.uniform_pool.begin(), plan.uniform_pool.end());
  plan.class_pool.assign(order.begin() + static_cast<std::ptrdiff_t>(n_uniform), order.end());
  std::sort(plan.class_pool.begin(), plan.class_pool.end());

  // 3. uniform cells, cut from the shuffled order
  plan.uniform_cells = cut(uniform_order, cells);

  // 4. nested stages
  std::vector<int> cell_of_class;
  {
    const int top = *std::max_element(data.classes.begin(), data.classes.end());
    cell_of_class.assign(static_cast<std::size_t>(top) + 1, -1);
    for (std::size_t c = 0; c < cells; ++c) {
      for (int cls : plan.class_partition[c]) cell_of_class[static_cast<std::size_t>(cls)] = static_cast<int>(c);
    }
  }
  std::vector<bool> member(n, false);
  for (std::size_t i = 0; i < cells; ++i) {
    for (auto j : plan.uniform_cells[i]) member[j] = true;
    for (auto j : plan.class_pool) {
      if (cell_of_class[static_cast<std::size_t>(data.labels[j])] == static_cast<int>(i)) member[j] = true;
    }
    std::vector<std::size_t> stage;
    for (std::size_t j = 0; j < n; ++j) {
      if (member[j]) stage.push_back(j);
    }
    plan.stages.push_back(std::move(stage));
  }
  return plan;
}

bool StagePlanReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const PlanCheck& c) { return c.passed; });
}

const PlanCheck* StagePlanReport::find(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

StagePlanReport verify_stage_plan(const StagePlan& plan, const LabeledDataset& data) {
  StagePlanReport report;
  auto add = [&report](std::string name, bool ok, std::string detail = {}) {
    report.checks.push_back({std::move(name), ok, ok ? std::string{} : std::move(detail)});
  };
  const std::size_t n = data.size();
  const std::size_t cells = plan.n_pretrain_stages + 1;

  add("stage_count", plan.stages.size() == cells && plan.uniform_cells.size() == cells &&
                         plan.class_partition.size() == cells,
      "expected " + std::to_string(cells) + " stages, uniform cells and class cells");

  {
    std::multiset<int> seen;
    for (const auto& cell : plan.class_partition) seen.insert(cell.begin(), cell.end());
    std::multiset<int> expected(data.classes.begin(), data.classes.end());
    add("class_partition", seen == expected, "class cells are not a partition of the class set");
  }

  bool indices_valid = true;
  auto in_range = [&](const std::vector<std::size_t>& v) {
    return std::all_of(v.begin(), v.end(), [n](auto j) { return j < n; }) && is_sorted_unique(v);
  };
  indices_valid = in_range(plan.uniform_pool) && in_range(plan.class_pool);
  for (const auto& s : plan.stages) indices_valid = indices_valid && in_range(s);
  for (const auto& s : plan.uniform_cells) indices_valid = indices_valid && in_range(s);
  add("index_sets", indices_valid, "index sets must be sorted, unique and within the dataset");

  {
    std::vector<std::size_t> inter;
    std::set_intersection(plan.uniform_pool.begin(), plan.uniform_pool.end(), plan.class_pool.begin(),
                          plan.class_pool.end(), std::back_inserter(inter));
    std::vector<std::size_t> uni;
    std::set_union(plan.uniform_pool.begin(), plan.uniform_pool.end(), plan.class_pool.begin(),
                   plan.class_pool.end(), std::back_inserter(uni));
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    add("pool_split", inter.empty() && uni == all, "uniform and class pools must be disjoint and cover the data");
  }

  {
    const auto expected = static_cast<std::size_t>(std::llround(plan.uniform_ratio * static_cast<double>(n)));
    add("uniform_size", plan.uniform_pool.size() == expected,
        "|D_u| = " + std::to_string(plan.uniform_pool.size()) + ", expected " + std::to_string(expected));
  }

  {
    std::vector<std::size_t> joined;
    bool disjoint = true;
    for (const auto& cell : plan.uniform_cells) {
      for (auto j : cell) joined.push_back(j);
    }
    const std::size_t total = joined.size();
    joined = sorted_unique(std::move(joined));
    disjoint = joined.size() == total;
    add("uniform_cells", disjoint && joined == plan.uniform_pool, "uniform cells must partition D_u");
  }

  {
    bool monotone = true;
    std::string detail;
    for (std::size_t i = 1; i < plan.stages.size(); ++i) {
      if (!std::includes(plan.stages[i].begin(), plan.stages[i].end(), plan.stages[i - 1].begin(),
                         plan.stages[i - 1].end())) {
        monotone = false;
        detail = "D_" + std::to_string(i) + " is not contained in D_" + std::to_string(i + 1);
        break;
      }
    }
    add("monotone", monotone, detail);
  }

  {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    add("coverage", !plan.stages.empty() && plan.stages.back() == all,
        "final stage must equal the full index set");
  }

  {
    bool exact = plan.stages.size() == cells && plan.uniform_cells.size() == cells &&
                 plan.class_partition.size() == cells;
    std::string detail;
    for (std::size_t i = 0; exact && i < cells; ++i) {
      const std::set<int> cls(plan.class_partition[i].begin(), plan.class_partition[i].end());
      std::vector<std::size_t> expected = plan.uniform_cells[i];
      for (auto j : plan.class_pool) {
        if (j < n && cls.count(data.labels[j])) expected.push_back(j);
      }
      expected = sorted_unique(std::move(expected));
      const std::vector<std::size_t> empty;
      const auto& prev = i == 0 ? empty : plan.stages[i - 1];
      std::vector<std::size_t> increment;
      std::set_difference(plan.stages[i].begin(), plan.stages[i].end(), prev.begin(), prev.end(),
                          std::back_inserter(increment));
      if (increment != expected) {
        exact = false;
        detail = "increment of stage " + std::to_string(i + 1) + " differs from D_u cell plus its class examples";
      }
    }
    add("increments", exact, detail.empty() ? "stage structure malformed" : detail);
  }
  return report;
}

}  // namespace plasbench
