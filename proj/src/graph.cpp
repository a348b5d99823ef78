#include "gtrans/graph.hpp"

#include <cmath>

#include "gtrans/errors.hpp"

namespace gtrans {

GraphSpec::GraphSpec(Eigen::MatrixXd adjacency, std::vector<std::string> node_ids)
    : adjacency_(std::move(adjacency)), node_ids_(std::move(node_ids)) {
  const auto n = adjacency_.rows();
  if (adjacency_.cols() != n) {
    throw DimensionError("adjacency must be square, got " + std::to_string(n) + "x" +
                         std::to_string(adjacency_.cols()));
  }
  if (node_ids_.size() != static_cast<std::size_t>(n)) {
    throw DimensionError("graph has " + std::to_string(n) + " nodes but " + std::to_string(node_ids_.size()) +
                         " node ids");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (adjacency_(i, i) != 0.0) throw ContractError("adjacency diagonal must be zero (node " + node_ids_[i] + ")");
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = adjacency_(i, j);
      if (!std::isfinite(w) || w < 0.0) throw ContractError("adjacency weights must be finite and non-negative");
      if (w != adjacency_(j, i)) throw ContractError("adjacency must be symmetric");
    }
  }
}

bool GraphSpec::operator==(const GraphSpec& other) const {
  return node_ids_ == other.node_ids_ && adjacency_.rows() == other.adjacency_.rows() &&
         adjacency_.cols() == other.adjacency_.cols() && adjacency_ == other.adjacency_;
}

std::size_t GraphSpec::edge_count() const {
  std::size_t edges = 0;
  for (Eigen::Index i = 0; i < adjacency_.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < adjacency_.cols(); ++j) edges += adjacency_(i, j) != 0.0;
  }
  return edges;
}

GraphSpec GraphSpec::permuted(const std::vector<std::size_t>& perm) const {
  const std::size_t n = size();
  if (perm.size() != n) throw DimensionError("permutation length does not match node count");
  Eigen::MatrixXd a(n, n);
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = node_ids_.at(perm[i]);
    for (std::size_t j = 0; j < n; ++j) a(i, j) = adjacency_(perm[i], perm[j]);
  }
  return GraphSpec(std::move(a), std::move(ids));
}

Eigen::MatrixXd laplacian(const GraphSpec& g) {
  const Eigen::VectorXd degree = g.adjacency().rowwise().sum();
  for (Eigen::Index i = 0; i < degree.size(); ++i) {
    if (degree(i) <= 0.0) throw DegenerateGraphError("node " + g.node_ids()[i] + " has zero degree");
  }
  const Eigen::VectorXd inv_sqrt = degree.cwiseSqrt().cwiseInverse();
  const auto n = g.adjacency().rows();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n) - inv_sqrt.asDiagonal() * g.adjacency() * inv_sqrt.asDiagonal();
  // Exact symmetry regardless of rounding order.
  return 0.5 * (lap + lap.transpose());
}

namespace {

void require_no_isolated_nodes(const GraphSpec& g) {
  if (g.size() < 2) return;
  const Eigen::VectorXd degree = g.adjacency().rowwise().sum();
  for (Eigen::Index i = 0; i < degree.size(); ++i) {
    if (degree(i) <= 0.0) throw DegenerateGraphError("node " + g.node_ids()[i] + " is isolated");
  }
}

Eigen::MatrixXd with_self_loops(const GraphSpec& g) {
  const auto n = g.adjacency().rows();
  return g.adjacency() + Eigen::MatrixXd::Identity(n, n);
}

}  // namespace

Eigen::MatrixXd propagation_matrix(const GraphSpec& g) {
  require_no_isolated_nodes(g);
  const Eigen::MatrixXd looped = with_self_loops(g);
  const Eigen::VectorXd inv_sqrt = looped.rowwise().sum().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd p = inv_sqrt.asDiagonal() * looped * inv_sqrt.asDiagonal();
  return 0.5 * (p + p.transpose());
}

Eigen::MatrixXd neighbor_average_matrix(const GraphSpec& g) {
  const Eigen::MatrixXd looped = with_self_loops(g);
  const Eigen::VectorXd inv_degree = looped.rowwise().sum().cwiseInverse();
  return inv_degree.asDiagonal() * looped;
}

namespace {

void check_features(const Eigen::MatrixXd& x, const GraphSpec& g, double gamma) {
  if (static_cast<std::size_t>(x.rows()) != g.size()) {
    throw DimensionError("features have " + std::to_string(x.rows()) + " rows for a graph of " +
                         std::to_string(g.size()) + " nodes");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractError("gamma must lie in [0, 1]");
  if (!x.allFinite()) throw ContractError("features must be finite");
}

}  // namespace

Eigen::MatrixXd smooth(const Eigen::MatrixXd& x, const GraphSpec& g, double gamma) {
  check_features(x, g, gamma);
  return (1.0 - gamma) * x + gamma * (neighbor_average_matrix(g) * x);
}

Eigen::MatrixXd sharpen(const Eigen::MatrixXd& x, const GraphSpec& g, double gamma) {
  check_features(x, g, gamma);
  return (1.0 + gamma) * x - gamma * (neighbor_average_matrix(g) * x);
}

template <typename Real>
Tensor<Real> mixing_operator(const GraphSpec& g, GraphMode mode, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractError("gamma must lie in [0, 1]");
  const Eigen::MatrixXd p = propagation_matrix(g);
  const auto n = p.rows();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd s = mode == GraphMode::smoothing ? Eigen::MatrixXd((1.0 - gamma) * eye + gamma * p)
                                                         : Eigen::MatrixXd((1.0 + gamma) * eye - gamma * p);
  std::vector<Real> values(static_cast<std::size_t>(n * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) values[static_cast<std::size_t>(i * n + j)] = static_cast<Real>(s(i, j));
  }
  return Tensor<Real>({static_cast<std::size_t>(n), static_cast<std::size_t>(n)}, std::move(values));
}

// ---------------------------------------------------------------------------

template <typename Real>
GraphConv<Real>::GraphConv(std::size_t in_features, std::size_t out_features, GraphMode mode, double gamma,
                           bool activation, Rng& rng)
    : linear(in_features, out_features, rng), mode(mode), gamma(gamma), activation(activation) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractError("gamma must lie in [0, 1]");
}

template <typename Real>
Tensor<Real> GraphConv<Real>::forward(const Tensor<Real>& x, const Tensor<Real>& mixing) const {
  if (x.rank() < 2 || x.dim(x.rank() - 2) != mixing.dim(0)) {
    throw DimensionError("graph conv: input " + to_string(x.shape()) + " does not match a graph of " +
                         std::to_string(mixing.dim(0)) + " nodes");
  }
  auto y = linear.forward(matmul(mixing, x));
  return activation ? relu(y) : y;
}

template <typename Real>
void GraphConv<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  linear.collect(out, prefix);
}

namespace {

void check_graph_input(const Shape& shape, std::size_t features, const GraphSpec& g, const char* who) {
  if (shape.size() != 4 || shape[2] != g.size() || shape[3] != features) {
    throw DimensionError(std::string(who) + ": expected [B, T, " + std::to_string(g.size()) + ", " +
                         std::to_string(features) + "], got " + to_string(shape));
  }
}

}  // namespace

template <typename Real>
GraphEncoder<Real>::GraphEncoder(std::size_t features, std::size_t embed_dim, double gamma, Rng& rng)
    : first(features, 2 * embed_dim, GraphMode::smoothing, gamma, true, rng),
      second(2 * embed_dim, embed_dim, GraphMode::smoothing, gamma, false, rng) {}

template <typename Real>
Tensor<Real> GraphEncoder<Real>::forward(const Tensor<Real>& x, const GraphSpec& g) const {
  check_graph_input(x.shape(), first.linear.in_features(), g, "graph encoder");
  const auto mixing = mixing_operator<Real>(g, GraphMode::smoothing, first.gamma);
  const auto mixing2 = second.gamma == first.gamma ? mixing : mixing_operator<Real>(g, GraphMode::smoothing, second.gamma);
  return second.forward(first.forward(x, mixing), mixing2);
}

template <typename Real>
void GraphEncoder<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  first.collect(out, prefix + ".0");
  second.collect(out, prefix + ".1");
}

template <typename Real>
GraphDecoder<Real>::GraphDecoder(std::size_t embed_dim, std::size_t features, double gamma, Rng& rng)
    : first(embed_dim, 2 * embed_dim, GraphMode::sharpening, gamma, true, rng),
      second(2 * embed_dim, features, GraphMode::sharpening, gamma, false, rng) {}

template <typename Real>
Tensor<Real> GraphDecoder<Real>::forward(const Tensor<Real>& e, const GraphSpec& g) const {
  check_graph_input(e.shape(), first.linear.in_features(), g, "graph decoder");
  const auto mixing = mixing_operator<Real>(g, GraphMode::sharpening, first.gamma);
  const auto mixing2 =
      second.gamma == first.gamma ? mixing : mixing_operator<Real>(g, GraphMode::sharpening, second.gamma);
  return second.forward(first.forward(e, mixing), mixing2);
}

template <typename Real>
void GraphDecoder<Real>::collect(ParameterSet<Real>& out, const std::string& prefix) const {
  first.collect(out, prefix + ".0");
  second.collect(out, prefix + ".1");
}

template Tensor<float> mixing_operator<float>(const GraphSpec&, GraphMode, double);
template Tensor<double> mixing_operator<double>(const GraphSpec&, GraphMode, double);
template class GraphConv<float>;
template class GraphConv<double>;
template class GraphEncoder<float>;
template class GraphEncoder<double>;
template class GraphDecoder<float>;
template class GraphDecoder<double>;

}  // namespace gtrans
