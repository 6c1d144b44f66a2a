#include "zodiac/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "zodiac/errors.hpp"

namespace zodiac {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<double> Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " elements");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

std::size_t Tensor::dim(int i) const {
  const int r = static_cast<int>(rank());
  const int k = i < 0 ? r + i : i;
  if (k < 0 || k >= r) throw ShapeError("dim index out of range for " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(k)];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::size_t offset = 0;
  std::size_t d = 0;
  for (auto i : index) {
    if (i >= shape()[d]) throw ShapeError("index out of range for " + shape_str(shape()));
    offset = offset * shape()[d] + i;
    ++d;
  }
  return node_->data[offset];
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return from_data(shape(), node_->data, false); }

Tensor Tensor::clone(bool requires_grad) const { return from_data(shape(), node_->data, requires_grad); }

void Tensor::backward() const {
  if (!defined()) throw ContractError("backward() on undefined tensor");
  if (numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!requires_grad()) throw ContractError("backward() on a tensor that does not require grad");
  Tape::record(*this).replay_backward();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   const char* op, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   const char* op, BackwardFn backward) {
  return make_result(std::move(shape), std::move(data), std::vector<Tensor>(inputs), op,
                     std::move(backward));
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; graphs from deep stacks overflow recursion.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::replay_backward() const {
  if (nodes_.empty()) return;
  for (Node* n : nodes_) {
    if (!n->is_leaf()) n->grad.clear();
  }
  Node* root = nodes_.back();
  auto seed = root->grad_buffer();
  for (auto& g : seed) g += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || !n->backward) continue;
    if (!n->grad.empty()) n->backward(n->data, n->grad);
    // Intermediate gradients are scratch; only leaves keep theirs.
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace zodiac
