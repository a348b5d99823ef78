#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gtrans/random.hpp"

namespace gtrans {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents. Receives the node itself so
  // closures never hold an owning reference to it.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies refer to the same storage, as in most
/// autodiff engines. Results of operations are never mutated afterwards; only
/// leaf parameters change, through an optimizer or explicit initialization.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor();
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  /// Leaf tensor tracked for gradients.
  static Tensor parameter(Shape shape, std::vector<Real> values);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }
  bool empty() const { return node_->data.empty(); }

  std::span<const Real> data() const { return node_->data; }
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<Real> mutable_data() { return node_->data; }
  Real operator[](std::size_t i) const { return node_->data[i]; }
  Real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size() && !empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return node_->grad; }
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every tracked leaf. `this` must be a scalar.
  void backward() const;

  /// Untracked copy of the values.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node<Real>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<Real>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<Real>> node_;
};

/// Thread-local switch that disables graph recording (evaluation passes).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise binary operations broadcast when one operand's shape is a
// trailing suffix of the other's, or when one operand holds a single value.
template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> scale(const Tensor<Real>& a, Real factor);
template <typename Real> Tensor<Real> add_scalar(const Tensor<Real>& a, Real value);

/// Matrix product over the last two axes. Supported forms:
/// [..., M, K] x [K, N], [M, K] x [..., K, N], and [..., M, K] x [..., K, N]
/// with identical leading axes.
template <typename Real> Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real> Tensor<Real> transpose(const Tensor<Real>& a, std::size_t axis0, std::size_t axis1);
template <typename Real> Tensor<Real> reshape(const Tensor<Real>& a, Shape shape);
template <typename Real> Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis);
template <typename Real> Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::size_t start, std::size_t length);

template <typename Real> Tensor<Real> sum(const Tensor<Real>& a);
template <typename Real> Tensor<Real> mean(const Tensor<Real>& a);
/// Mean over one axis; the axis is removed from the result shape.
template <typename Real> Tensor<Real> mean(const Tensor<Real>& a, std::size_t axis);

template <typename Real> Tensor<Real> relu(const Tensor<Real>& a);
template <typename Real> Tensor<Real> sigmoid(const Tensor<Real>& a);
template <typename Real> Tensor<Real> tanh(const Tensor<Real>& a);
template <typename Real> Tensor<Real> square(const Tensor<Real>& a);

/// Softmax along `axis`, computed with max subtraction.
template <typename Real> Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis);

/// Normalizes over the last axis, then applies gain and bias (both shaped [last]).
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real epsilon = Real(1e-5));

/// Inverted dropout. Identity when `training` is false or `rate` is zero.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, Rng& rng, bool training);

/// Replaces entries where `mask` is nonzero. `mask_shape` must be a trailing
/// suffix of the input shape; the mask broadcasts over the leading axes.
template <typename Real>
Tensor<Real> masked_fill(const Tensor<Real>& x, std::span<const std::uint8_t> mask, const Shape& mask_shape,
                         Real value);

/// Converts between precisions (untracked).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> values(x.data().begin(), x.data().end());
  return Tensor<To>(x.shape(), std::move(values));
}

}  // namespace gtrans
