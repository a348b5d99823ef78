#include "gtrans/nn.hpp"

#include <cmath>

#include "gtrans/errors.hpp"

namespace gtrans {

template <typename Real>
Tensor<Real> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<Real> values(fan_in * fan_out);
  for (auto& v : values) v = static_cast<Real>(rng.uniform(-bound, bound));
  return Tensor<Real>::parameter({fan_in, fan_out}, std::move(values));
}

template <typename Real>
Tensor<Real> zeros_parameter(Shape shape) {
  Tensor<Real> t(std::move(shape), Real(0));
  t.set_requires_grad(true);
  return t;
}

// ---------------------------------------------------------------------------

template <typename Real>
Linear<Real>::Linear(std::size_t in_features, std::size_t out_features, Rng& rng, bool with_bias)
    : weight(xavier_uniform<Real>(in_features, out_features, rng)), has_bias(with_bias) {
  if (with_bias) bias = zeros_parameter<Real>({out_features});
}

template <typename Real>
Tensor<Real> Linear<Real>::forward(const Tensor<Real>& x) const {
  if (x.rank() == 0 || x.shape().back() != in_features()) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  auto y = matmul(x, weight);
  return has_bias ? add(y, bias) : y;
}

template <typename Real>
void Linear<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (has_bias) out.push_back({prefix + ".bias", bias});
}

// ---------------------------------------------------------------------------

template <typename Real>
LayerNorm<Real>::LayerNorm(std::size_t width) : gain({width}, Real(1)), bias({width}, Real(0)) {
  gain.set_requires_grad(true);
  bias.set_requires_grad(true);
}

template <typename Real>
void LayerNorm<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

// ---------------------------------------------------------------------------

template <typename Real>
FeedForward<Real>::FeedForward(std::size_t width, std::size_t hidden, Rng& rng)
    : expand(width, hidden, rng), contract(hidden, width, rng) {}

template <typename Real>
Tensor<Real> FeedForward<Real>::forward(const Tensor<Real>& x, double dropout_rate, const ForwardMode& mode) const {
  return contract.forward(apply_dropout(relu(expand.forward(x)), dropout_rate, mode));
}

template <typename Real>
void FeedForward<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  expand.collect(out, prefix + ".expand");
  contract.collect(out, prefix + ".contract");
}

// ---------------------------------------------------------------------------

template <typename Real>
Lstm<Real>::Lstm(std::size_t input_size, std::size_t hidden_size, Rng& rng)
    : input_weight(xavier_uniform<Real>(input_size, 4 * hidden_size, rng)),
      recurrent_weight(xavier_uniform<Real>(hidden_size, 4 * hidden_size, rng)),
      bias({4 * hidden_size}, Real(0)) {
  auto b = bias.mutable_data();
  for (std::size_t i = hidden_size; i < 2 * hidden_size; ++i) b[i] = Real(1);
  bias.set_requires_grad(true);
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> Lstm<Real>::gates_to_state(const Tensor<Real>& gates,
                                                                 const Tensor<Real>& c) const {
  const std::size_t h = hidden_size();
  auto in_gate = sigmoid(slice(gates, 1, 0, h));
  auto forget_gate = sigmoid(slice(gates, 1, h, h));
  auto candidate = tanh(slice(gates, 1, 2 * h, h));
  auto out_gate = sigmoid(slice(gates, 1, 3 * h, h));
  auto next_c = add(mul(forget_gate, c), mul(in_gate, candidate));
  auto next_h = mul(out_gate, tanh(next_c));
  return {next_h, next_c};
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> Lstm<Real>::cell_step(const Tensor<Real>& x_t, const Tensor<Real>& h,
                                                            const Tensor<Real>& c) const {
  auto gates = add(add(matmul(x_t, input_weight), matmul(h, recurrent_weight)), bias);
  return gates_to_state(gates, c);
}

template <typename Real>
typename Lstm<Real>::Output Lstm<Real>::forward(const Tensor<Real>& x) const {
  if (x.rank() != 3) throw DimensionError("lstm: expected [batch, time, features], got " + to_string(x.shape()));
  Tensor<Real> zeros({x.dim(0), hidden_size()}, Real(0));
  return forward(x, zeros, zeros);
}

template <typename Real>
typename Lstm<Real>::Output Lstm<Real>::forward(const Tensor<Real>& x, const Tensor<Real>& h0,
                                                const Tensor<Real>& c0) const {
  if (x.rank() != 3 || x.dim(2) != input_size()) {
    throw DimensionError("lstm: input " + to_string(x.shape()) + " does not match input size " +
                         std::to_string(input_size()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  const std::size_t h_size = hidden_size();
  // Input contributions for every step in one product.
  auto projected = add(matmul(x, input_weight), bias);  // [B, T, 4H]
  Tensor<Real> h = h0;
  Tensor<Real> c = c0;
  std::vector<Tensor<Real>> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    auto x_part = reshape(slice(projected, 1, t, 1), {batch, 4 * h_size});
    auto gates = add(x_part, matmul(h, recurrent_weight));
    std::tie(h, c) = gates_to_state(gates, c);
    outputs.push_back(reshape(h, {batch, 1, h_size}));
  }
  return {concat(outputs, 1), h, c};
}

template <typename Real>
void Lstm<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  out.push_back({prefix + ".input_weight", input_weight});
  out.push_back({prefix + ".recurrent_weight", recurrent_weight});
  out.push_back({prefix + ".bias", bias});
}

template Tensor<float> xavier_uniform<float>(std::size_t, std::size_t, Rng&);
template Tensor<double> xavier_uniform<double>(std::size_t, std::size_t, Rng&);
template Tensor<float> zeros_parameter<float>(Shape);
template Tensor<double> zeros_parameter<double>(Shape);
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class FeedForward<float>;
template class FeedForward<double>;
template class Lstm<float>;
template class Lstm<double>;

}  // namespace gtrans
