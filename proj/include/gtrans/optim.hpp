#pragma once

#include <cstdint>
#include <vector>

#include "gtrans/tensor.hpp"

namespace gtrans {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// ADAM with bias correction. Moment buffers are kept in double precision
/// regardless of the parameter type.
template <typename Real>
class Adam {
 public:
  Adam(std::vector<Tensor<Real>> parameters, AdamOptions options = {});

  /// Applies one update from the parameters' accumulated gradients.
  /// Throws ContractError if a parameter has no gradient buffer.
  void step();
  void zero_grad();

  double learning_rate() const { return options_.learning_rate; }
  void set_learning_rate(double rate) { options_.learning_rate = rate; }
  std::uint64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor<Real>> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace gtrans
