#include "p2t/autograd.hpp"

namespace p2t {

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::parameter(Parameter<T>& p) {
  if (auto it = param_index_.find(&p); it != param_index_.end()) return {this, it->second};
  Node n;
  n.op = "parameter";
  n.value = p.value;
  n.requires_grad = true;
  n.leaf = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const auto id = nodes_.size() - 1;
  param_index_.emplace(&p, id);
  param_leaves_.push_back(id);
  return {this, id};
}

template <typename T>
Var<T> Graph<T>::record(std::string_view op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward) {
  value.check_finite(std::string(op));
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (const auto& v : inputs) {
    if (v.graph != this) throw Error(std::string(op) + ": operand belongs to a different graph");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::grad(std::size_t id) const {
  const auto& n = nodes_.at(id);
  if (n.grad.empty()) throw Error("node " + std::to_string(id) + " (" + std::string(n.op) + ") has no gradient");
  return n.grad;
}

template <typename T>
void Graph<T>::accumulate(std::size_t id, Tensor<T>&& g) {
  auto& n = nodes_[id];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape())
    throw DimensionError("gradient shape " + to_string(g.shape()) + " does not match value shape " +
                         to_string(n.value.shape()) + " at " + std::string(n.op));
  if (n.grad.empty())
    n.grad = std::move(g);
  else
    n.grad += g;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw Error("backward: loss belongs to a different graph");
  if (nodes_.at(loss.id).value.numel() != 1)
    throw DimensionError("backward needs a scalar loss, got " + to_string(nodes_[loss.id].value.shape()));
  for (auto& n : nodes_)
    if (!n.leaf) n.grad = Tensor<T>();
  auto& root = nodes_[loss.id];
  if (!root.requires_grad) return;
  accumulate(loss.id, Tensor<T>(root.value.shape(), T{1}));
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.leaf || !n.backward || n.grad.empty()) continue;
    BackwardContext<T> ctx(*this, id);
    n.backward(ctx);
  }
  for (auto& n : nodes_)
    if (n.leaf && !n.grad.empty()) n.grad.check_finite("gradient of " + (n.param ? n.param->name : std::string("input")));
}

template <typename T>
void Graph<T>::commit_parameter_grads() {
  for (auto id : param_leaves_) {
    auto& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.param->grad.empty()) n.param->grad = Tensor<T>(n.param->value.shape());
    n.param->grad += n.grad;
    n.grad = Tensor<T>();
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace p2t
