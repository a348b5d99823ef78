#pragma once

#include <string>
#include <vector>

#include "gtrans/random.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

/// Training flag plus the random source used by dropout.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;
};

template <typename Real>
Tensor<Real> apply_dropout(const Tensor<Real>& x, double rate, const ForwardMode& mode) {
  if (!mode.training || rate == 0.0 || mode.rng == nullptr) return x;
  return dropout(x, rate, *mode.rng, true);
}

template <typename Real>
struct NamedParameter {
  std::string name;
  Tensor<Real> tensor;
};

/// Ordered parameter registry. Order is construction order and is part of
/// the checkpoint format.
template <typename Real>
using ParameterSet = std::vector<NamedParameter<Real>>;

template <typename Real>
std::size_t parameter_count(const ParameterSet<Real>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

/// Xavier/Glorot uniform initialization for a fan_in x fan_out matrix.
template <typename Real>
Tensor<Real> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

template <typename Real>
Tensor<Real> zeros_parameter(Shape shape);

template <typename Real>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng, bool with_bias = true);

  /// Applies x W (+ b) over the last axis of x.
  Tensor<Real> forward(const Tensor<Real>& x) const;
  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor<Real> weight;  // [in, out]
  Tensor<Real> bias;    // [out], empty when disabled
  bool has_bias = true;
};

template <typename Real>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  Tensor<Real> forward(const Tensor<Real>& x) const { return layer_norm(x, gain, bias); }
  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  Tensor<Real> gain;
  Tensor<Real> bias;
};

/// Position-wise two-layer network: Linear -> ReLU -> dropout -> Linear.
template <typename Real>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t width, std::size_t hidden, Rng& rng);

  Tensor<Real> forward(const Tensor<Real>& x, double dropout_rate, const ForwardMode& mode) const;
  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  Linear<Real> expand;
  Linear<Real> contract;
};

/// Single LSTM layer over [batch, time, features] input, gate order i, f, g, o.
template <typename Real>
class Lstm {
 public:
  struct Output {
    Tensor<Real> sequence;  // [B, T, H]
    Tensor<Real> hidden;    // [B, H], last step
    Tensor<Real> cell;      // [B, H], last step
  };

  Lstm() = default;
  Lstm(std::size_t input_size, std::size_t hidden_size, Rng& rng);

  Output forward(const Tensor<Real>& x) const;
  Output forward(const Tensor<Real>& x, const Tensor<Real>& h0, const Tensor<Real>& c0) const;

  /// One recurrence step; x_t is [B, in], states are [B, H].
  std::pair<Tensor<Real>, Tensor<Real>> cell_step(const Tensor<Real>& x_t, const Tensor<Real>& h,
                                                  const Tensor<Real>& c) const;

  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  std::size_t input_size() const { return input_weight.dim(0); }
  std::size_t hidden_size() const { return recurrent_weight.dim(0); }

  Tensor<Real> input_weight;      // [in, 4H]
  Tensor<Real> recurrent_weight;  // [H, 4H]
  Tensor<Real> bias;              // [4H]; forget-gate block starts at 1

 private:
  std::pair<Tensor<Real>, Tensor<Real>> gates_to_state(const Tensor<Real>& gates, const Tensor<Real>& c) const;
};

extern template class Linear<float>;
extern template class Linear<double>;
extern template class LayerNorm<float>;
extern template class LayerNorm<double>;
extern template class FeedForward<float>;
extern template class FeedForward<double>;
extern template class Lstm<float>;
extern template class Lstm<double>;

}  // namespace gtrans
