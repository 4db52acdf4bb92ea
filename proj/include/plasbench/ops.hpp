#pragma once

#include <cstddef>
#include <span>

#include "plasbench/tape.hpp"
#include "plasbench/tensor.hpp"

namespace plasbench {

enum class Mode { train, eval };

/// Per-channel running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t channels)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
  void reset() {
    for (auto& m : running_mean.data()) m = T{0};
    for (auto& v : running_var.data()) v = T{1};
  }
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// [m×k] · [k×n] → [m×n].
template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);

/// Elementwise sum of equal shapes.
template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

/// Elementwise product of equal shapes.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

/// x[N×K] + bias[K] broadcast over rows.
template <typename T>
Var add_row_bias(Tape<T>& tape, Var x, Var bias);

/// x[N×C×H×W] + bias[C] broadcast over batch and space.
template <typename T>
Var add_channel_bias(Tape<T>& tape, Var x, Var bias);

/// Cross-correlation of x[N×C×H×W] with w[F×C×kh×kw]; zero padding.
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::size_t stride, std::size_t pad);

/// Batch normalization over (N, H, W) per channel. Train mode normalizes by
/// batch statistics and folds them into `stats` with an exponential moving
/// average (unbiased variance); eval mode normalizes by `stats`.
template <typename T>
Var batch_norm(Tape<T>& tape, Var x, Var scale, Var shift, BatchNormStats<T>& stats,
               Mode mode, const BatchNormOptions& options = {});

/// max(0, x); gradient 0 at x == 0.
template <typename T>
Var relu(Tape<T>& tape, Var x);

/// [N×C×H×W] → [N×C], mean over space.
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x);

/// [N×...] → [N×prod(...)].
template <typename T>
Var flatten(Tape<T>& tape, Var x);

/// Sum of all elements → scalar.
template <typename T>
Var sum(Tape<T>& tape, Var x);

/// Mean over the batch of −log softmax(logits)[label]; labels in [0, K).
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels);

}  // namespace plasbench
