#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mtrz::ad {

// A learnable tensor (row-major matrix, or a vector with cols == 1) together with
// its gradient buffer of identical shape.
struct ParamBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;

  ParamBlock() = default;
  ParamBlock(std::string block_name, std::size_t r, std::size_t c)
      : name(std::move(block_name)), rows(r), cols(c), value(r * c, 0.0), grad(r * c, 0.0) {}

  std::size_t size() const { return value.size(); }
  double& at(std::size_t r, std::size_t c) { return value[(r * cols) + c]; }
  double at(std::size_t r, std::size_t c) const { return value[(r * cols) + c]; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

struct Var {
  std::uint32_t id = 0;
};

// Records a computation over vectors of doubles and replays it backwards.
// Nodes are append-only; backward() propagates adjoints to every node and adds
// parameter gradients into the ParamBlock buffers.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(std::vector<double> value);
  Var scalar(double value);

  const std::vector<double>& value(Var v) const { return nodes_[v.id].value; }
  double scalar_value(Var v) const { return nodes_[v.id].value.front(); }
  const std::vector<double>& adjoint(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // Row `row` of an embedding table.
  Var embedding(ad::ParamBlock& table, std::size_t row);
  // weight * [inputs...] + bias; weight.cols must equal the summed input width.
  Var affine(ad::ParamBlock& weight, ad::ParamBlock& bias, std::initializer_list<Var> inputs);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var sigmoid(Var a);
  Var tanh(Var a);

  // log softmax(logits / temperature)[index]; scalar.
  Var log_softmax_at(Var logits, std::size_t index, double temperature);

  // Scalar ops.
  Var exp(Var a);
  Var scale(Var a, double factor);
  Var add_scalar(Var a, double offset);
  Var minimum(Var a, Var b);
  Var clamp(Var a, double lo, double hi);
  Var sum(std::span<const Var> terms);
  Var mean(std::span<const Var> terms);
  // exp(d) - d - 1 with d = logp_ref - logp_theta.
  Var kl_estimate(Var logp_theta, double logp_ref);

  // Sum of squares over a whole parameter block.
  Var sum_squares(ad::ParamBlock& block);
  // Sum of the entries of a vector node.
  Var reduce_sum(Var a);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule.
  void backward(Var loss);

  void clear() { nodes_.clear(); }

 private:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    Backward backward;
  };

  Var push(std::vector<double> value, Backward backward);
  std::vector<double>& grad_of(std::uint32_t id) { return nodes_[id].grad; }
  const std::vector<double>& value_of(std::uint32_t id) const { return nodes_[id].value; }

  std::vector<Node> nodes_;
};

// Smooth, strictly positive for d != 0 and exactly 0 at d == 0.
double kl_value(double d);
double kl_derivative(double d);

}  // namespace mtrz::ad
