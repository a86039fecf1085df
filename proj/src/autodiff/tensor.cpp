#include "datr/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "datr/error.hpp"

namespace datr::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  for (auto v : data) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(Scalar v, bool requires_grad) { return Tensor({1}, {v}, requires_grad); }

Tensor Tensor::row(std::span<const Scalar> values) {
  return Tensor({1, values.size()}, std::vector<Scalar>(values.begin(), values.end()));
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("expected a matrix, got " + shape_to_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("expected a matrix, got " + shape_to_string(shape()));
  return node_->shape[1];
}

std::span<const Scalar> Tensor::data() const {
  shape();
  return node_->value;
}

std::span<Scalar> Tensor::mutable_data() {
  shape();
  if (!node_->is_leaf) throw ContractError("cannot write into an op result");
  return node_->value;
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->value[0];
}

Scalar Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  shape();
  if (!node_->is_leaf) throw ContractError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const Scalar> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

std::span<Scalar> Tensor::mutable_grad() {
  shape();
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

Tensor Tensor::clone() const { return Tensor(shape(), node_->value, node_->requires_grad); }

namespace {
thread_local Tape* active_tape = nullptr;
}

Tape::Tape() : previous_(active_tape) { active_tape = this; }

Tape::~Tape() { active_tape = previous_; }

Tape* Tape::current() { return active_tape; }

void Tape::record(NodePtr node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_to_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw ContractError("loss does not depend on any parameter");
  for (auto& n : nodes_) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  auto& root = *loss.node();
  root.ensure_grad();
  root.grad[0] += 1.0;
  if (root.is_leaf) return;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
}

void Tape::clear() { nodes_.clear(); }

void backward(const Tensor& loss) {
  auto* tape = Tape::current();
  if (!tape) throw ContractError("backward() called without an active tape");
  tape->backward(loss);
}

}  // namespace datr::ad
