#include "plasbench/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plasbench/errors.hpp"

namespace plasbench {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void require_finite(std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(what) + ": non-finite value at coordinate " + std::to_string(i));
    }
  }
}

}  // namespace

NoiseEstimate gradient_noise(MinibatchGradient& source, std::size_t batch_size, std::size_t num_batches_M,
                             Rng& rng) {
  const std::size_t n = source.num_examples();
  if (num_batches_M < 2) throw ConfigError("gradient_noise: need at least 2 batches");
  if (batch_size == 0 || batch_size > n) {
    throw ConfigError("gradient_noise: batch_size " + std::to_string(batch_size) + " not in [1, " +
                      std::to_string(n) + "]");
  }

  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::vector<std::vector<double>> grads;
  grads.reserve(num_batches_M);
  for (std::size_t m = 0; m < num_batches_M; ++m) {
    // partial Fisher-Yates: first batch_size entries become the batch
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t j = i + uniform_index(rng, n - i);
      std::swap(pool[i], pool[j]);
    }
    std::vector<std::size_t> batch(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(batch_size));
    std::sort(batch.begin(), batch.end());
    grads.push_back(source.gradient(batch));
    require_finite(grads.back(), "gradient_noise");
  }

  // Mean taken relative to the first gradient so identical batches give
  // exactly zero variance.
  const std::size_t d = grads.front().size();
  const std::vector<double>& g0 = grads.front();
  std::vector<double> shift(d, 0.0);
  for (const auto& g : grads) {
    if (g.size() != d) throw ContractError("gradient_noise: gradient size changed between batches");
    for (std::size_t k = 0; k < d; ++k) shift[k] += g[k] - g0[k];
  }
  const double M = static_cast<double>(num_batches_M);
  for (double& s : shift) s /= M;

  std::vector<double> dev(num_batches_M, 0.0);
  for (std::size_t m = 0; m < num_batches_M; ++m) {
    double acc = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double r = (grads[m][k] - g0[k]) - shift[k];
      acc += r * r;
    }
    dev[m] = acc;
  }

  NoiseEstimate est;
  est.num_batches_M = num_batches_M;
  est.batch_size = batch_size;
  double mean_sq = 0;
  for (std::size_t k = 0; k < d; ++k) {
    const double gbar = g0[k] + shift[k];
    mean_sq += gbar * gbar;
  }
  est.mean_grad_norm_sq = mean_sq;
  const double tv = std::accumulate(dev.begin(), dev.end(), 0.0) / M;
  est.trace_variance = tv;
  double ss = 0;
  for (double x : dev) ss += (x - tv) * (x - tv);
  est.trace_variance_stderr = std::sqrt(ss / (M - 1.0) / M);
  est.relative_noise = tv / std::max(mean_sq, 1e-12);
  return est;
}

std::vector<double> hvp(ParameterObjective& objective, std::span<const double> v, double delta) {
  const std::size_t n = objective.dimension();
  if (v.size() != n) {
    throw DimensionError("hvp: direction has " + std::to_string(v.size()) + " entries, objective has " +
                         std::to_string(n));
  }
  if (!(delta > 0)) throw ConfigError("hvp: delta must be positive");
  const double vn = norm(v);
  if (!(vn > 0) || !std::isfinite(vn)) throw ContractError("hvp: direction must be finite and nonzero");

  const std::vector<double> theta0 = objective.parameters();
  const double eps = delta / vn;
  std::vector<double> shifted(n);

  for (std::size_t i = 0; i < n; ++i) shifted[i] = theta0[i] + eps * v[i];
  objective.set_parameters(shifted);
  std::vector<double> g_plus = objective.gradient();

  for (std::size_t i = 0; i < n; ++i) shifted[i] = theta0[i] - eps * v[i];
  objective.set_parameters(shifted);
  std::vector<double> g_minus = objective.gradient();

  objective.set_parameters(theta0);

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (g_plus[i] - g_minus[i]) / (2.0 * eps);
  require_finite(out, "hvp");
  return out;
}

SharpnessEstimate top_eigenvalue(ParameterObjective& objective, const PowerIterationOptions& options) {
  const std::size_t n = objective.dimension();
  if (n == 0) throw ContractError("top_eigenvalue: empty parameter vector");
  if (options.max_iters == 0) throw ConfigError("top_eigenvalue: max_iters must be positive");

  Rng rng(options.seed);
  std::vector<double> v(n);
  for (double& x : v) x = standard_normal(rng);
  double vn = norm(v);
  for (double& x : v) x /= vn;

  SharpnessEstimate est;
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    std::vector<double> w = hvp(objective, v, options.delta);
    const double lambda = dot(v, w);
    est.rayleigh_history.push_back(lambda);
    est.iterations_used = it + 1;
    est.top_eigenvalue = lambda;
    const double wn = norm(w);
    if (wn == 0) {
      est.converged = true;
      break;
    }
    if (it > 0) {
      const double prev = est.rayleigh_history[it - 1];
      if (std::abs(lambda - prev) <= options.tol * std::max(std::abs(lambda), 1e-12)) {
        est.converged = true;
        break;
      }
    }
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wn;
  }
  est.negative = est.top_eigenvalue < 0;
  return est;
}

// --- QuadraticObjective -------------------------------------------------------

QuadraticObjective::QuadraticObjective(std::vector<double> matrix, std::size_t n, double loss_scale)
    : a_(std::move(matrix)), n_(n), scale_(loss_scale), theta_(n, 0.0) {
  if (a_.size() != n * n) {
    throw DimensionError("QuadraticObjective: matrix has " + std::to_string(a_.size()) + " entries, expected " +
                         std::to_string(n * n));
  }
}

void QuadraticObjective::set_parameters(std::span<const double> theta) {
  if (theta.size() != n_) throw DimensionError("QuadraticObjective: parameter size mismatch");
  theta_.assign(theta.begin(), theta.end());
}

double QuadraticObjective::loss() {
  const std::vector<double> g = gradient();
  return 0.5 * dot(theta_, g);
}

std::vector<double> QuadraticObjective::gradient() {
  std::vector<double> g(n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < n_; ++j) s += a_[i * n_ + j] * theta_[j];
    g[i] = scale_ * s;
  }
  return g;
}

// --- LeastSquaresObjective ----------------------------------------------------

LeastSquaresObjective::LeastSquaresObjective(std::vector<double> design, std::vector<double> targets,
                                             std::size_t dim)
    : x_(std::move(design)), y_(std::move(targets)), d_(dim), theta_(dim, 0.0) {
  if (x_.size() != y_.size() * d_) {
    throw DimensionError("LeastSquaresObjective: design has " + std::to_string(x_.size()) + " entries, expected " +
                         std::to_string(y_.size() * d_));
  }
}

void LeastSquaresObjective::set_parameters(std::span<const double> theta) {
  if (theta.size() != d_) throw DimensionError("LeastSquaresObjective: parameter size mismatch");
  theta_.assign(theta.begin(), theta.end());
}

std::vector<double> LeastSquaresObjective::gradient(std::span<const std::size_t> batch) {
  if (batch.empty()) throw ContractError("LeastSquaresObjective: empty batch");
  std::vector<double> g(d_, 0.0);
  for (std::size_t i : batch) {
    if (i >= y_.size()) throw ContractError("LeastSquaresObjective: example index out of range");
    std::span<const double> xi(x_.data() + i * d_, d_);
    const double r = dot(xi, theta_) - y_[i];
    for (std::size_t k = 0; k < d_; ++k) g[k] += r * xi[k];
  }
  for (double& x : g) x /= static_cast<double>(batch.size());
  return g;
}

double LeastSquaresObjective::loss() {
  double s = 0;
  for (std::size_t i = 0; i < y_.size(); ++i) {
    const double r = dot(std::span<const double>(x_.data() + i * d_, d_), theta_) - y_[i];
    s += r * r;
  }
  return 0.5 * s / static_cast<double>(y_.size());
}

std::vector<double> LeastSquaresObjective::gradient() {
  std::vector<std::size_t> all(y_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return gradient(all);
}

// --- NetworkLoss --------------------------------------------------------------

template <typename T>
NetworkLoss<T>::NetworkLoss(Network<T>& net, const LabeledDataset& data, std::vector<std::size_t> view, Mode mode)
    : net_(net), data_(data), view_(std::move(view)), mode_(mode) {
  if (view_.empty()) throw ConfigError("NetworkLoss: empty view");
  for (std::size_t i : view_) {
    if (i >= data_.size()) throw ContractError("NetworkLoss: view index out of range");
  }
  all_positions_.resize(view_.size());
  std::iota(all_positions_.begin(), all_positions_.end(), std::size_t{0});
}

template <typename T>
double NetworkLoss<T>::evaluate(std::span<const std::size_t> positions, bool with_grad, std::vector<double>* grad) {
  std::vector<std::size_t> idx;
  idx.reserve(positions.size());
  for (std::size_t p : positions) {
    if (p >= view_.size()) throw ContractError("NetworkLoss: batch position out of range");
    idx.push_back(view_[p]);
  }
  const Tensor<T> x = data_.gather<T>(idx);
  const std::vector<int> labels = data_.gather_labels(idx);

  std::vector<BatchNormStats<T>> saved;
  if (mode_ == Mode::train) {
    for (std::size_t i = 0; i < net_.batch_norm_count(); ++i) saved.push_back(net_.batch_norm_stats(i));
  }

  net_.clear_grads();
  Tape<T> tape(with_grad);
  const Var logits = net_.forward(tape, x, mode_);
  const Var loss = softmax_cross_entropy(tape, logits, labels);
  const double value = static_cast<double>(tape.value(loss).item());
  if (with_grad) {
    tape.backward(loss);
    const std::vector<T> g = net_.flat_gradients();
    grad->assign(g.begin(), g.end());
    net_.clear_grads();
  }

  for (std::size_t i = 0; i < saved.size(); ++i) net_.batch_norm_stats(i) = saved[i];
  return value;
}

template <typename T>
std::vector<double> NetworkLoss<T>::gradient(std::span<const std::size_t> batch) {
  if (batch.empty()) throw ContractError("NetworkLoss: empty batch");
  std::vector<double> g;
  evaluate(batch, true, &g);
  return g;
}

template <typename T>
std::vector<double> NetworkLoss<T>::parameters() const {
  const std::vector<T> p = net_.flat_parameters();
  return {p.begin(), p.end()};
}

template <typename T>
void NetworkLoss<T>::set_parameters(std::span<const double> theta) {
  std::vector<T> p(theta.begin(), theta.end());
  net_.set_flat_parameters(p);
}

template <typename T>
double NetworkLoss<T>::loss() {
  return evaluate(all_positions_, false, nullptr);
}

template <typename T>
std::vector<double> NetworkLoss<T>::gradient() {
  return gradient(all_positions_);
}

template class NetworkLoss<float>;
template class NetworkLoss<double>;

}  // namespace plasbench
