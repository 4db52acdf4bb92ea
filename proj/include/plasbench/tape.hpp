#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "plasbench/tensor.hpp"

namespace plasbench {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so node inputs always precede the node itself; backward walks the nodes
/// once in reverse.
///
/// A tape is single-use: build it during a forward pass, call backward once,
/// then drop it. Parameter leaves refer to tensors owned elsewhere (normally
/// a Network) and must outlive the tape.
template <typename T>
class Tape {
 public:
  /// Called with the node's output adjoint; pushes contributions to inputs
  /// through input_adjoint().
  using BackwardFn = std::function<void(Tape&, std::span<const T> out_adjoint)>;

  /// With record_gradients == false, parameter() leaves never need a
  /// gradient and no backward closures are kept (inference mode).
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Leaf holding a copy of `value`; never receives gradient.
  Var constant(Tensor<T> value);

  /// Leaf bound to `param`. After backward, param.grad() holds the summed
  /// contributions from every use (if param.requires_grad()).
  Var parameter(Tensor<T>& param);

  /// Records an interior node. `backward` may be empty when no input needs
  /// a gradient.
  Var record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  bool any_needs_grad(std::initializer_list<Var> vars) const;

  /// Adjoint buffer of an input node, zero-initialized on first access.
  /// Returns an empty span when the node does not need a gradient.
  std::span<T> input_adjoint(Var v);

  /// Runs the reverse sweep from a scalar loss.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of nodes whose backward rule ran during the last backward().
  std::size_t visited() const noexcept { return visited_; }

 private:
  struct Node {
    Tensor<T> owned;
    Tensor<T>* external = nullptr;
    std::vector<std::size_t> inputs;
    std::vector<T> adjoint;
    BackwardFn backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::size_t visited_ = 0;
  bool consumed_ = false;
  bool record_gradients_ = true;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace plasbench
