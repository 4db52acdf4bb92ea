#include "plasbench/tape.hpp"

#include <string>

#include "plasbench/errors.hpp"

namespace plasbench {

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::parameter(Tensor<T>& param) {
  Node node;
  node.external = &param;
  node.needs_grad = record_gradients_ && param.requires_grad();
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError("tape input refers to a later node");
    node.needs_grad = node.needs_grad || nodes_[id].needs_grad;
  }
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  const Node& node = nodes_.at(v.id);
  return node.external ? *node.external : node.owned;
}

template <typename T>
bool Tape<T>::any_needs_grad(std::initializer_list<Var> vars) const {
  for (auto v : vars) {
    if (needs_grad(v)) return true;
  }
  return false;
}

template <typename T>
std::span<T> Tape<T>::input_adjoint(Var v) {
  Node& node = nodes_.at(v.id);
  if (!node.needs_grad) return {};
  if (node.adjoint.empty()) node.adjoint.assign(value(v).numel(), T{0});
  return node.adjoint;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (consumed_) throw ContractError("backward called twice on the same tape");
  const Tensor<T>& out = value(loss);
  if (out.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(out.shape()));
  }
  consumed_ = true;
  visited_ = 0;
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].adjoint.assign(1, T{1});

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    ++visited_;
    if (!node.needs_grad) continue;
    if (node.external) {
      auto grad = node.external->ensure_grad();
      for (std::size_t k = 0; k < node.adjoint.size(); ++k) grad[k] += node.adjoint[k];
      continue;
    }
    if (node.adjoint.empty() || !node.backward) continue;
    node.backward(*this, std::span<const T>(node.adjoint));
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace plasbench
