#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace datr::ad {

// Compute precision. The test/gradient-check profile is 64-bit throughout.
using Scalar = double;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the graph. Leaves are created by the user (parameters, inputs);
// interior nodes are produced by ops and carry a backward closure.
struct Node {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<NodePtr> parents;
  // Reads this->grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  void ensure_grad();
};

// Reference-counted handle to a Node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(Scalar v, bool requires_grad = false);
  // 1×n row from a span.
  static Tensor row(std::span<const Scalar> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Scalar> data() const;
  // Writable view; only valid on leaves (parameters, inputs).
  std::span<Scalar> mutable_data();
  Scalar item() const;
  Scalar at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const Scalar> grad() const;
  std::span<Scalar> mutable_grad();
  void zero_grad();

  // Fresh leaf with a copy of the values and no history.
  Tensor detach() const;
  // Deep copy preserving requires_grad, without history.
  Tensor clone() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Append-only record of the ops executed while it is the active tape on this
// thread. Nodes are recorded after their parents, so reverse recording order
// is a valid reverse topological order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(NodePtr node);
  std::size_t size() const { return nodes_.size(); }

  // Populates grad on every requires_grad leaf reachable from `loss`.
  // Interior grads are reset on each call; leaf grads accumulate, so calling
  // twice without zero_grad doubles the parameter gradients.
  void backward(const Tensor& loss);

  // Drops recorded nodes so the graph can be freed.
  void clear();

 private:
  std::vector<NodePtr> nodes_;
  Tape* previous_;
};

// Convenience: backward on the active tape.
void backward(const Tensor& loss);

}  // namespace datr::ad
