#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "plasbench/tape.hpp"
#include "plasbench/tensor.hpp"

namespace testing_support {

using plasbench::Shape;
using plasbench::Tape;
using plasbench::Tensor;
using plasbench::Var;

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(shape);
  for (double& v : t.data()) v = dist(gen);
  return t;
}

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

struct FdResult {
  double max_abs_error = 0;
  bool ok = true;
};

// Reverse-mode gradients of every tensor against central differences on
// every coordinate; ok when |ad − fd| <= atol + rtol·|fd| everywhere.
inline FdResult check_all_coordinates(std::vector<Tensor<double>*> params, const Builder& build,
                                      double atol = 1e-7, double rtol = 1e-5, double h = 1e-6) {
  for (auto* p : params) {
    p->set_requires_grad(true);
    p->clear_grad();
  }
  {
    Tape<double> tape;
    std::vector<Var> vars;
    for (auto* p : params) vars.push_back(tape.parameter(*p));
    tape.backward(build(tape, vars));
  }
  auto eval = [&] {
    Tape<double> tape(false);
    std::vector<Var> vars;
    for (auto* p : params) vars.push_back(tape.parameter(*p));
    return tape.value(build(tape, vars)).item();
  };
  FdResult result;
  for (auto* p : params) {
    const std::vector<double> ad(p->grad().begin(), p->grad().end());
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + h;
      const double up = eval();
      (*p)[i] = saved - h;
      const double down = eval();
      (*p)[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double err = std::abs(ad[i] - fd);
      result.max_abs_error = std::max(result.max_abs_error, err);
      if (err > atol + rtol * std::abs(fd)) result.ok = false;
    }
  }
  return result;
}

}  // namespace testing_support
