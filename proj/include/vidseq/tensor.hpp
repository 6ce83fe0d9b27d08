#pragma once

// Dense row-major tensors with tape-style reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a shared graph node. Ops record their
// inputs and a backward closure when gradient mode is on and any input
// requires grad; backward() walks the recorded DAG once in reverse
// topological order. Every op output is checked for NaN/Inf and raises
// NonFiniteError immediately.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vidseq/error.hpp"

namespace vidseq {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Thread-local switch; inference code disables recording with NoGradGuard.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  void clear_grad() { node_->grad.clear(); }

  // Populates grads of every requires_grad leaf reachable from this scalar.
  // Leaf grads accumulate across calls; intermediate grads are reset.
  void backward() const;

  const char* op() const { return node_->op; }
  NodeT* node() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<NodeT> node_;
};

// --- ops -------------------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// a: [..., n], bias: [n]
template <typename T> Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
// Row softmax of a 2-d tensor restricted to entries with keep[i] != 0.
// Masked entries are exactly zero. Every row must keep at least one entry.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> keep);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, T eps = T(1e-5));
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids);

// Mean over unmasked rows of -log softmax(logits)[target]. An empty mask
// means every row counts.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::span<const std::uint8_t> include = {});

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// Row ops treat x as [rows, cols] with rows = dim(0).
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
// [1, n] -> [m, n]
template <typename T> Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times);
// [m, n] -> [1, n]
template <typename T> Tensor<T> mean_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add_bias(matmul(x, weight), bias);
}

}  // namespace vidseq
