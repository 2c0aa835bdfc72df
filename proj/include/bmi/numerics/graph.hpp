#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bmi/numerics/tensor.hpp"

namespace bmi::numerics {

// A trainable tensor together with its accumulated gradient.
struct Parameter {
  std::uint64_t id = 0;
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

std::uint64_t next_parameter_id();

// Owns parameters at stable addresses; iteration follows insertion order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(std::string name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // Copies values from `other`; names and shapes must agree.
  void copy_values_from(const ParameterSet& other);

  // Flattened views over all parameter coordinates in iteration order.
  std::vector<double> flat_values() const;
  std::vector<double> flat_grads() const;
  void scale_grads(double factor);

 private:
  std::deque<Parameter> params_;
};

// Handle to a node inside a Graph.
struct Var {
  std::size_t index = static_cast<std::size_t>(-1);
};

using Bindings = std::map<std::string, Tensor>;

// Define-then-run computation record. Building a node only checks shapes;
// values are produced by forward() (or lazily by value()) and gradients by
// backward(), which walks nodes in exact reverse topological order.
// Single-writer: do not use one instance from several threads.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept;
  Graph& operator=(Graph&&) noexcept;

  // Leaves.
  Var input(Shape shape, std::string name);
  Var parameter(Parameter& p);
  Var constant(Tensor t);

  // Primitives.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);        // same shape, or either side a scalar
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_row(Var a, Var row);  // a[m,n] + row[1,n] repeated over rows
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var abs(Var a);
  // Reduces a rank-2 tensor. axis 0 -> [1,n], axis 1 -> [m,1]. Gradient goes
  // to the first maximal index on ties.
  Var max_over_axis(Var a, std::size_t axis);
  // Elementwise max across same-shaped tensors, ties to the earliest input.
  Var max_of(const std::vector<Var>& xs);
  Var concat(const std::vector<Var>& xs, std::size_t axis);
  Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
  Var gather_rows(Var a, std::vector<std::size_t> rows);
  Var transpose(Var a);
  Var reshape(Var a, Shape shape);
  Var log_softmax(Var logits);
  // Per-row negative log-likelihood of `targets` under softmax(logits); [m].
  Var softmax_cross_entropy(Var logits, std::vector<std::size_t> targets);
  Var mean(Var a);
  Var sum(Var a);

  void forward(const Bindings& bindings = {});
  const Tensor& value(Var v);
  const Shape& shape(Var v) const;

  void backward(Var output, const Tensor& seed);
  void backward(Var output);  // seed 1 on a scalar output
  // Gradient reaching an input or constant node in the last backward().
  const Tensor& grad(Var v) const;

  std::size_t node_count() const;
  std::vector<Parameter*> parameters() const;
  std::vector<Var> inputs() const;
  const std::string& input_name(Var v) const;

 private:
  struct Node;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::size_t evaluated_ = 0;
  bool backward_ready_ = false;

  Var push(std::unique_ptr<Node> n);
  Node& node(Var v);
  const Node& node(Var v) const;
  const Tensor& val(std::size_t i) const;
  void evaluate(std::size_t i);
  void propagate(std::size_t i);
  void ensure_evaluated(std::size_t upto);
};

}  // namespace bmi::numerics
