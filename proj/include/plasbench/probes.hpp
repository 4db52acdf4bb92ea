#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plasbench/dataset.hpp"
#include "plasbench/network.hpp"
#include "plasbench/rng.hpp"

namespace plasbench {

/// Loss gradient on a minibatch of example indices in [0, num_examples()),
/// at fixed parameters.
class MinibatchGradient {
 public:
  virtual ~MinibatchGradient() = default;
  virtual std::size_t num_examples() const = 0;
  virtual std::vector<double> gradient(std::span<const std::size_t> batch) = 0;
};

/// A fixed loss viewed as a function of a flat parameter vector.
class ParameterObjective {
 public:
  virtual ~ParameterObjective() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<double> parameters() const = 0;
  virtual void set_parameters(std::span<const double> theta) = 0;
  virtual double loss() = 0;
  virtual std::vector<double> gradient() = 0;
};

/// Minibatch gradient-noise statistics. With g_b the M batch gradients and
/// ḡ their mean:
///   mean_grad_norm_sq = ‖ḡ‖²
///   trace_variance    = mean_b ‖g_b − ḡ‖²
///   relative_noise    = trace_variance / max(‖ḡ‖², 1e-12)
/// trace_variance_stderr is the standard error of the mean over batches.
struct NoiseEstimate {
  std::size_t num_batches_M = 0;
  std::size_t batch_size = 0;
  double mean_grad_norm_sq = 0;
  double trace_variance = 0;
  double trace_variance_stderr = 0;
  double relative_noise = 0;
};

/// Draws M batches, each `batch_size` distinct indices (sorted), and
/// measures the spread of their gradients. Requires M ≥ 2; ConfigError when
/// batch_size exceeds the number of examples.
NoiseEstimate gradient_noise(MinibatchGradient& source, std::size_t batch_size, std::size_t num_batches_M, Rng& rng);

/// Hv ≈ (∇L(θ + εv) − ∇L(θ − εv)) / 2ε with ε = delta/‖v‖. Parameters are
/// restored bit-exactly. NumericError on non-finite results.
std::vector<double> hvp(ParameterObjective& objective, std::span<const double> v, double delta = 1e-3);

struct SharpnessEstimate {
  double top_eigenvalue = 0;
  std::vector<double> rayleigh_history;
  std::size_t iterations_used = 0;
  bool converged = false;
  bool negative = false;
};

struct PowerIterationOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
  double delta = 1e-3;
  std::uint64_t seed = 0x5eed;
};

/// Power iteration on hvp from a seeded random unit vector. Returns the
/// eigenvalue of largest magnitude with its sign.
SharpnessEstimate top_eigenvalue(ParameterObjective& objective, const PowerIterationOptions& options = {});

// --- reference objectives ----------------------------------------------------

/// L(θ) = c·½ θᵀAθ for a dense symmetric A (row-major, n×n).
class QuadraticObjective : public ParameterObjective {
 public:
  QuadraticObjective(std::vector<double> matrix, std::size_t n, double loss_scale = 1.0);
  std::size_t dimension() const override { return n_; }
  std::vector<double> parameters() const override { return theta_; }
  void set_parameters(std::span<const double> theta) override;
  double loss() override;
  std::vector<double> gradient() override;

 private:
  std::vector<double> a_;
  std::size_t n_;
  double scale_;
  std::vector<double> theta_;
};

/// Least squares ½·mean_i (x_iᵀθ − y_i)² over a fixed design X (n×d).
class LeastSquaresObjective : public MinibatchGradient, public ParameterObjective {
 public:
  LeastSquaresObjective(std::vector<double> design, std::vector<double> targets, std::size_t dim);
  std::size_t num_examples() const override { return y_.size(); }
  std::vector<double> gradient(std::span<const std::size_t> batch) override;
  std::size_t dimension() const override { return d_; }
  std::vector<double> parameters() const override { return theta_; }
  void set_parameters(std::span<const double> theta) override;
  double loss() override;
  std::vector<double> gradient() override;

 private:
  std::vector<double> x_;
  std::vector<double> y_;
  std::size_t d_;
  std::vector<double> theta_;
};

/// Softmax cross-entropy of a network over a view of a dataset. As a
/// MinibatchGradient, batch indices address positions in the view; as a
/// ParameterObjective the whole view is the fixed probe batch.
///
/// Eval mode never touches the network; train mode normalizes by batch
/// statistics and restores running statistics after every evaluation.
/// Sharpness probes need T = double.
template <typename T>
class NetworkLoss : public MinibatchGradient, public ParameterObjective {
 public:
  NetworkLoss(Network<T>& net, const LabeledDataset& data, std::vector<std::size_t> view, Mode mode = Mode::eval);

  std::size_t num_examples() const override { return view_.size(); }
  std::vector<double> gradient(std::span<const std::size_t> batch) override;

  std::size_t dimension() const override { return net_.parameter_count(); }
  std::vector<double> parameters() const override;
  void set_parameters(std::span<const double> theta) override;
  double loss() override;
  std::vector<double> gradient() override;

 private:
  double evaluate(std::span<const std::size_t> view_positions, bool with_grad, std::vector<double>* grad);

  Network<T>& net_;
  const LabeledDataset& data_;
  std::vector<std::size_t> view_;
  std::vector<std::size_t> all_positions_;
  Mode mode_;
};

extern template class NetworkLoss<float>;
extern template class NetworkLoss<double>;

}  // namespace plasbench
