#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gtrans/data.hpp"
#include "gtrans/nn.hpp"
#include "gtrans/random.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans::testing {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

inline Tensor<double> random_parameter(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = random_tensor(std::move(shape), rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

struct GradientReport {
  double worst = 0.0;
  std::string where;
};

/// Compares backward() against central differences for every entry of every
/// tensor in `inputs`. The scalar under test is sum(f() * probe) for a fixed
/// random probe, so every output element contributes with a distinct weight.
inline GradientReport check_gradients(const std::function<Tensor<double>()>& f,
                                      std::vector<Tensor<double>> inputs, Rng& rng, double step = 1e-6) {
  const auto shape = [&] {
    NoGradGuard guard;
    return f().shape();
  }();
  const auto probe = random_tensor(shape, rng);
  auto objective = [&] { return sum(mul(f(), probe)); };
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  objective().backward();
  GradientReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k];
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      auto data = t.mutable_data();
      const double old = data[i];
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard guard;
        data[i] = old + step;
        plus = objective().item();
        data[i] = old - step;
        minus = objective().item();
        data[i] = old;
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double rel = std::abs(numeric - a) / std::max(std::abs(numeric) + std::abs(a), 1e-6);
      if (rel > report.worst) {
        report.worst = rel;
        report.where = "input " + std::to_string(k) + "[" + std::to_string(i) + "] analytic " +
                       std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return report;
}

inline std::vector<Tensor<double>> tensors_of(const ParameterSet<double>& params) {
  std::vector<Tensor<double>> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

/// Connected random graph on n nodes: a random spanning tree plus extra edges.
inline GraphSpec random_connected_graph(std::size_t n, Rng& rng, double extra = 0.3, bool weighted = false) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  auto weight = [&] { return weighted ? rng.uniform(0.1, 2.0) : 1.0; };
  for (std::size_t i = 1; i < n; ++i) {
    const auto j = static_cast<Eigen::Index>(rng.below(i));
    const auto ii = static_cast<Eigen::Index>(i);
    a(ii, j) = a(j, ii) = weight();
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto jj = static_cast<Eigen::Index>(j);
      if (a(ii, jj) == 0.0 && rng.uniform() < extra) a(ii, jj) = a(jj, ii) = weight();
    }
  }
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("n" + std::to_string(i));
  return GraphSpec(a, ids);
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  rng.shuffle(p);
  return p;
}

/// x: [B, T, N, C]; returns y with y[..., i, :] = x[..., perm[i], :].
template <typename Real>
Tensor<Real> permute_node_axis(const Tensor<Real>& x, const std::vector<std::size_t>& perm) {
  const auto& s = x.shape();
  const std::size_t n = s[s.size() - 2];
  const std::size_t c = s.back();
  const std::size_t outer = x.size() / (n * c);
  std::vector<Real> v(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < c; ++k) v[(o * n + i) * c + k] = x[(o * n + perm[i]) * c + k];
    }
  }
  return Tensor<Real>(s, std::move(v));
}

template <typename Real>
double max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

/// Small hand-built series on a path graph with the given frames.
inline FrameSeries tiny_series(std::size_t nodes, std::size_t features, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  FrameSeries s;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(nodes));
  for (std::size_t i = 0; i + 1 < nodes; ++i) {
    a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i + 1)) = 1.0;
    a(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(i)) = 1.0;
  }
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < nodes; ++i) ids.push_back("n" + std::to_string(i));
  s.graph = GraphSpec(a, ids);
  for (std::size_t c = 0; c < features; ++c) s.feature_names.push_back("f" + std::to_string(c));
  s.normalization.assign(features, FeatureRange{});
  s.values.resize(frames * nodes * features);
  for (auto& v : s.values) v = static_cast<float>(rng.uniform());
  s.labels.assign(frames, 0);
  for (std::size_t f = 0; f < frames; ++f) s.labels[f] = rng.uniform() < 0.2 ? 1 : 0;
  for (std::size_t f = 0; f < frames; ++f) s.timestamps.push_back(static_cast<std::int64_t>(f) * 60);
  return s;
}

}  // namespace gtrans::testing
