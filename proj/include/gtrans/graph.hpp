#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gtrans/nn.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

/// Undirected weighted graph over spatial nodes. Self-loops are never stored;
/// operators that need them add the identity.
class GraphSpec {
 public:
  GraphSpec() = default;
  /// Validates symmetry, non-negativity and an empty diagonal.
  GraphSpec(Eigen::MatrixXd adjacency, std::vector<std::string> node_ids);

  std::size_t size() const { return static_cast<std::size_t>(adjacency_.rows()); }
  const Eigen::MatrixXd& adjacency() const { return adjacency_; }
  const std::vector<std::string>& node_ids() const { return node_ids_; }
  std::size_t edge_count() const;

  /// Graph with nodes reordered so that new node i is old node perm[i].
  GraphSpec permuted(const std::vector<std::size_t>& perm) const;

  bool operator==(const GraphSpec& other) const;

 private:
  Eigen::MatrixXd adjacency_;
  std::vector<std::string> node_ids_;
};

/// L = I - D^-1/2 A D^-1/2. Throws DegenerateGraphError on a zero-degree node.
Eigen::MatrixXd laplacian(const GraphSpec& g);

/// P = D~^-1/2 (A + I) D~^-1/2, the renormalized convolution operator.
/// Throws DegenerateGraphError when a multi-node graph has an isolated node.
Eigen::MatrixXd propagation_matrix(const GraphSpec& g);

/// R = D~^-1 (A + I), rows sum to one.
Eigen::MatrixXd neighbor_average_matrix(const GraphSpec& g);

/// x_i' = (1 - gamma) x_i + gamma * sum_j (A~_ij / D~_ii) x_j on n x c features.
Eigen::MatrixXd smooth(const Eigen::MatrixXd& x, const GraphSpec& g, double gamma);
/// x_i' = (1 + gamma) x_i - gamma * sum_j (A~_ij / D~_ii) x_j.
Eigen::MatrixXd sharpen(const Eigen::MatrixXd& x, const GraphSpec& g, double gamma);

enum class GraphMode { smoothing, sharpening };

/// Node-mixing matrix used inside learned layers:
/// smoothing (1 - gamma) I + gamma P, sharpening (1 + gamma) I - gamma P.
template <typename Real>
Tensor<Real> mixing_operator(const GraphSpec& g, GraphMode mode, double gamma);

/// One graph convolution: act(S X W + b) applied to every [N, F] slice.
template <typename Real>
class GraphConv {
 public:
  GraphConv() = default;
  GraphConv(std::size_t in_features, std::size_t out_features, GraphMode mode, double gamma, bool activation,
            Rng& rng);

  /// x: [..., N, F_in] with `mixing` [N, N] -> [..., N, F_out].
  Tensor<Real> forward(const Tensor<Real>& x, const Tensor<Real>& mixing) const;
  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  Linear<Real> linear;
  GraphMode mode = GraphMode::smoothing;
  double gamma = 0.5;
  bool activation = true;
};

/// Two smoothing layers C -> 2D -> D, ReLU between, applied per time step.
template <typename Real>
class GraphEncoder {
 public:
  GraphEncoder() = default;
  GraphEncoder(std::size_t features, std::size_t embed_dim, double gamma, Rng& rng);

  /// x: [B, T, N, C] -> [B, T, N, D].
  Tensor<Real> forward(const Tensor<Real>& x, const GraphSpec& g) const;
  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  GraphConv<Real> first;
  GraphConv<Real> second;
};

/// Mirror of GraphEncoder with sharpening layers D -> 2D -> C.
template <typename Real>
class GraphDecoder {
 public:
  GraphDecoder() = default;
  GraphDecoder(std::size_t embed_dim, std::size_t features, double gamma, Rng& rng);

  /// e: [B, T, N, D] -> [B, T, N, C].
  Tensor<Real> forward(const Tensor<Real>& e, const GraphSpec& g) const;
  void collect(ParameterSet<Real>& out, const std::string& prefix) const;

  GraphConv<Real> first;
  GraphConv<Real> second;
};

extern template class GraphConv<float>;
extern template class GraphConv<double>;
extern template class GraphEncoder<float>;
extern template class GraphEncoder<double>;
extern template class GraphDecoder<float>;
extern template class GraphDecoder<double>;

}  // namespace gtrans
