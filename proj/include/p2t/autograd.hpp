#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "p2t/tensor.hpp"

namespace p2t {

// A named trainable leaf. `grad` accumulates across backward passes until
// zero_grad() is called.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <typename T>
class Graph;

// Handle to a recorded value inside a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape(); }
  const Tensor<T>& grad() const { return graph->grad(id); }
  bool requires_grad() const { return graph->requires_grad(id); }
};

template <typename T>
class BackwardContext;

// Define-by-run tape. Nodes are appended in forward order, so ids are a
// topological order and backward is a single reverse sweep.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(BackwardContext<T>&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> input(Tensor<T> value, bool requires_grad = false);
  // One leaf per parameter per graph; repeated calls return the same node.
  Var<T> parameter(Parameter<T>& p);
  Var<T> record(std::string_view op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. Leaf
  // gradients accumulate across calls; intermediate gradients do not.
  void backward(Var<T> loss);
  // Adds parameter-leaf gradients into Parameter::grad in leaf creation order
  // and clears them from the graph.
  void commit_parameter_grads();

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor<T>& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class BackwardContext<T>;

  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool leaf = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  void accumulate(std::size_t id, Tensor<T>&& g);

  std::vector<Node> nodes_;
  std::vector<std::size_t> param_leaves_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_index_;
};

template <typename T>
class BackwardContext {
 public:
  BackwardContext(Graph<T>& g, std::size_t node) : graph_(g), node_(node) {}

  const Tensor<T>& grad_output() const { return graph_.nodes_[node_].grad; }
  const Tensor<T>& output() const { return graph_.nodes_[node_].value; }
  const Tensor<T>& input(std::size_t i) const { return graph_.nodes_[input_id(i)].value; }
  bool needs_grad(std::size_t i) const { return graph_.nodes_[input_id(i)].requires_grad; }
  void accumulate(std::size_t i, Tensor<T>&& g) { graph_.accumulate(input_id(i), std::move(g)); }

 private:
  std::size_t input_id(std::size_t i) const { return graph_.nodes_[node_].inputs.at(i); }

  Graph<T>& graph_;
  std::size_t node_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace p2t
