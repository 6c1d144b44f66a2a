#pragma once

// Dense f64 tensor with a recorded computation graph for reverse-mode
// differentiation. Tensors are cheap handles onto shared nodes: copying a
// Tensor aliases the same data and gradient.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace zodiac {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Receives the output's data and gradient and accumulates into the inputs.
using BackwardFn =
    std::function<void(std::span<const double> out_data, std::span<const double> out_grad)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool is_leaf() const { return inputs.empty(); }
  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Size of dimension `i`; negative indices count from the back.
  std::size_t dim(int i) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Writable storage. Only meaningful on leaves (optimizer updates, tests).
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool is_leaf() const { return node_->is_leaf(); }
  const char* op_name() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;

  /// Reverse pass from a scalar. Leaf gradients accumulate across calls.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an op result. The backward closure is attached only when gradient
/// recording is on and some input requires grad; it must not capture the
/// result itself.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   const char* op, BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   const char* op, BackwardFn backward);

/// Whether ops currently record backward closures (thread-local).
bool grad_enabled();

/// Disables graph recording for its lifetime (decoding, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Topologically ordered record of the graph reachable from a root. Every
/// node appears once and after all of its inputs.
class Tape {
 public:
  static Tape record(const Tensor& root);

  const std::vector<Node*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds the root gradient with ones and replays in reverse.
  void replay_backward() const;

 private:
  std::vector<Node*> nodes_;
};

}  // namespace zodiac
