#include "gtrans/optim.hpp"

#include <cmath>
#include <string>

#include "gtrans/errors.hpp"

namespace gtrans {

template <typename Real>
Adam<Real>::Adam(std::vector<Tensor<Real>> parameters, AdamOptions options)
    : params_(std::move(parameters)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

template <typename Real>
void Adam<Real>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw ContractError("adam step: parameter " + std::to_string(i) + " " + to_string(params_[i].shape()) +
                          " has no gradient");
    }
  }
  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto values = params_[i].mutable_data();
    const auto grads = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] = static_cast<Real>(values[j] - options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon));
    }
  }
}

template <typename Real>
void Adam<Real>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace gtrans
