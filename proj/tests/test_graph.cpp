#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "gtrans/errors.hpp"
#include "gtrans/graph.hpp"
#include "support.hpp"

using namespace gtrans;

namespace {

GraphSpec edge_graph() {
  Eigen::MatrixXd a(2, 2);
  a << 0, 1, 1, 0;
  return GraphSpec(a, {"a", "b"});
}

Eigen::MatrixXd random_features(std::size_t n, std::size_t c, Rng& rng) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-2.0, 2.0);
  return x;
}

}  // namespace

TEST_CASE("graph spec validation") {
  Eigen::MatrixXd asym(2, 2);
  asym << 0, 1, 0, 0;
  CHECK_THROWS_AS(GraphSpec(asym, {"a", "b"}), ContractError);
  Eigen::MatrixXd loop(2, 2);
  loop << 1, 1, 1, 0;
  CHECK_THROWS_AS(GraphSpec(loop, {"a", "b"}), ContractError);
  Eigen::MatrixXd neg(2, 2);
  neg << 0, -1, -1, 0;
  CHECK_THROWS_AS(GraphSpec(neg, {"a", "b"}), ContractError);
  CHECK_THROWS_AS(GraphSpec(Eigen::MatrixXd::Zero(2, 3), {"a", "b"}), DimensionError);
  CHECK_THROWS_AS(GraphSpec(Eigen::MatrixXd::Zero(2, 2), {"a"}), DimensionError);
  CHECK(edge_graph().edge_count() == 1);
}

TEST_CASE("laplacian of a single edge") {
  const auto l = laplacian(edge_graph());
  CHECK(l(0, 0) == doctest::Approx(1.0));
  CHECK(l(0, 1) == doctest::Approx(-1.0));
  CHECK(l(1, 0) == doctest::Approx(-1.0));
  CHECK(l(1, 1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(laplacian(GraphSpec(Eigen::MatrixXd::Zero(3, 3), {"a", "b", "c"})), DegenerateGraphError);
}

TEST_CASE("laplacian is symmetric with spectrum in [0, 2]") {
  Rng rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    const auto g = testing::random_connected_graph(n, rng, rng.uniform(), trial % 2 == 1);
    const auto l = laplacian(g);
    CHECK((l - l.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(l);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8);
    CHECK(eig.eigenvalues().maxCoeff() <= 2.0 + 1e-8);
    // A connected graph has exactly one zero eigenvalue.
    CHECK(eig.eigenvalues()(0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(eig.eigenvalues()(1) > 1e-9);
  }
}

TEST_CASE("propagation matrix examples") {
  const auto p = propagation_matrix(edge_graph());
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(0, 1) == doctest::Approx(0.5));
  CHECK(p(1, 1) == doctest::Approx(0.5));
  const auto single = propagation_matrix(GraphSpec(Eigen::MatrixXd::Zero(1, 1), {"x"}));
  CHECK(single(0, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(propagation_matrix(GraphSpec(Eigen::MatrixXd::Zero(2, 2), {"a", "b"})), DegenerateGraphError);
  Rng rng(2);
  const auto g = testing::random_connected_graph(5, rng, 0.4, true);
  const auto q = propagation_matrix(g);
  CHECK((q - q.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
  const auto r = neighbor_average_matrix(g);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(r.row(i).sum() == doctest::Approx(1.0));
}

TEST_CASE("smoothing and sharpening worked examples") {
  Eigen::MatrixXd x(2, 1);
  x << 0, 2;
  const auto s = smooth(x, edge_graph(), 1.0);
  CHECK(s(0, 0) == doctest::Approx(1.0));
  CHECK(s(1, 0) == doctest::Approx(1.0));
  const auto h = sharpen(x, edge_graph(), 1.0);
  CHECK(h(0, 0) == doctest::Approx(-1.0));
  CHECK(h(1, 0) == doctest::Approx(3.0));
  CHECK(smooth(x, edge_graph(), 0.0) == x);
  CHECK(sharpen(x, edge_graph(), 0.0) == x);
  CHECK_THROWS_AS(smooth(x, edge_graph(), 1.5), ContractError);
}

TEST_CASE("smoothing preserves constants") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = testing::random_connected_graph(2 + rng.below(6), rng, 0.4, true);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(g.size()), 3, 0.7);
    CHECK((smooth(x, g, rng.uniform()) - x).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("smoothing plus sharpening is twice the input") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    const auto g = n == 1 ? GraphSpec(Eigen::MatrixXd::Zero(1, 1), {"x"})
                          : testing::random_connected_graph(n, rng, rng.uniform(), trial % 2 == 0);
    const double gamma = rng.uniform();
    const auto x = random_features(n, 1 + rng.below(4), rng);
    CHECK((smooth(x, g, gamma) + sharpen(x, g, gamma) - 2.0 * x).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("mixing operators are the convex and extrapolated blends of the propagation matrix") {
  Rng rng(7);
  const auto g = testing::random_connected_graph(4, rng);
  const auto p = propagation_matrix(g);
  const auto sm = mixing_operator<double>(g, GraphMode::smoothing, 0.3);
  const auto sh = mixing_operator<double>(g, GraphMode::sharpening, 0.3);
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double id = i == j ? 1.0 : 0.0;
      const auto k = static_cast<std::size_t>(i * 4 + j);
      CHECK(sm[k] == doctest::Approx(0.7 * id + 0.3 * p(i, j)).epsilon(1e-14));
      CHECK(sh[k] == doctest::Approx(1.3 * id - 0.3 * p(i, j)).epsilon(1e-14));
      CHECK(sm[k] + sh[k] == doctest::Approx(2.0 * id).epsilon(1e-14));
    }
  }
}

TEST_CASE("graph conv on a two-node graph matches matrix arithmetic") {
  Rng rng(8);
  GraphConv<double> conv(2, 1, GraphMode::smoothing, 0.5, false, rng);
  conv.linear.weight.mutable_data()[0] = 2.0;
  conv.linear.weight.mutable_data()[1] = -1.0;
  conv.linear.bias.mutable_data()[0] = 0.25;
  const Tensor<double> x({2, 2}, {1.0, 3.0, 5.0, 7.0});
  const auto y = conv.forward(x, mixing_operator<double>(edge_graph(), GraphMode::smoothing, 0.5));
  // S = 0.5 I + 0.5 [[.5,.5],[.5,.5]] = [[.75,.25],[.25,.75]]; S x = [[2,4],[4,6]]; (S x) W + b.
  CHECK(y[0] == doctest::Approx(2 * 2 - 4 + 0.25));
  CHECK(y[1] == doctest::Approx(2 * 4 - 6 + 0.25));

  GraphConv<double> plain(2, 2, GraphMode::smoothing, 0.0, false, rng);
  auto w = plain.linear.weight.mutable_data();
  w[0] = 1; w[1] = 0; w[2] = 0; w[3] = 1;
  plain.linear.bias.mutable_data()[0] = 0;
  plain.linear.bias.mutable_data()[1] = 0;
  const auto same = plain.forward(x, mixing_operator<double>(edge_graph(), GraphMode::smoothing, 0.0));
  CHECK(testing::max_abs_diff(same, x) == 0.0);
}

TEST_CASE("graph layers pass finite-difference checks") {
  Rng rng(9);
  const auto g = testing::random_connected_graph(4, rng, 0.5, true);
  for (auto mode : {GraphMode::smoothing, GraphMode::sharpening}) {
    GraphConv<double> conv(3, 2, mode, 0.4, true, rng);
    ParameterSet<double> params;
    conv.collect(params, "conv");
    auto x = testing::random_parameter({2, 4, 3}, rng);
    const auto s = mixing_operator<double>(g, mode, 0.4);
    auto inputs = testing::tensors_of(params);
    inputs.push_back(x);
    const auto r = testing::check_gradients([&] { return conv.forward(x, s); }, inputs, rng);
    CAPTURE(r.where);
    CHECK(r.worst <= 1e-4);
  }
  GraphEncoder<double> enc(3, 2, 0.5, rng);
  GraphDecoder<double> dec(2, 3, 0.5, rng);
  ParameterSet<double> params;
  enc.collect(params, "enc");
  dec.collect(params, "dec");
  auto x = testing::random_parameter({1, 2, 4, 3}, rng);
  auto inputs = testing::tensors_of(params);
  inputs.push_back(x);
  const auto r = testing::check_gradients([&] { return dec.forward(enc.forward(x, g), g); }, inputs, rng);
  CAPTURE(r.where);
  CHECK(r.worst <= 1e-4);
}

TEST_CASE("graph encoder and decoder commute with node permutations") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.below(6);
    const auto g = testing::random_connected_graph(n, rng, 0.4, true);
    GraphEncoder<double> enc(3, 2, rng.uniform(), rng);
    GraphDecoder<double> dec(2, 3, rng.uniform(), rng);
    const auto x = testing::random_tensor({2, 3, n, 3}, rng);
    const auto perm = testing::random_permutation(n, rng);
    const auto gp = g.permuted(perm);
    const auto e = enc.forward(x, g);
    const auto ep = enc.forward(testing::permute_node_axis(x, perm), gp);
    CHECK(e.shape() == Shape{2, 3, n, 2});
    CHECK(testing::max_abs_diff(ep, testing::permute_node_axis(e, perm)) <= 1e-12);
    const auto y = dec.forward(e, g);
    CHECK(y.shape() == Shape{2, 3, n, 3});
    CHECK(testing::max_abs_diff(dec.forward(ep, gp), testing::permute_node_axis(y, perm)) <= 1e-12);
  }
}

TEST_CASE("linear decoder with pseudo-inverse weights undoes a linear encoder") {
  // With gamma = 0 both mixing operators are the identity, so the composition
  // reduces to x W1 W2 W3 W4. W3 = (W1 W2)^+ W1 and W4 = W1^+ make the product
  // the identity when W1 has full row rank and W1 W2 is invertible.
  Rng rng(13);
  const std::size_t n = 3, c = 2, d = 2;
  GraphConv<double> e1(c, 2 * d, GraphMode::smoothing, 0.0, false, rng);
  GraphConv<double> e2(2 * d, d, GraphMode::smoothing, 0.0, false, rng);
  GraphConv<double> d1(d, 2 * d, GraphMode::sharpening, 0.0, false, rng);
  GraphConv<double> d2(2 * d, c, GraphMode::sharpening, 0.0, false, rng);
  auto to_eigen = [](const Tensor<double>& t) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = t[static_cast<std::size_t>(i * m.cols() + j)];
    }
    return m;
  };
  auto assign = [](Tensor<double>& t, const Eigen::MatrixXd& m) {
    auto v = t.mutable_data();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) v[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    }
  };
  for (auto* layer : {&e1, &e2, &d1, &d2}) {
    for (auto& b : layer->linear.bias.mutable_data()) b = 0.0;
  }
  const Eigen::MatrixXd w1 = to_eigen(e1.linear.weight);
  const Eigen::MatrixXd w2 = to_eigen(e2.linear.weight);
  const Eigen::MatrixXd m = w1 * w2;
  assign(d1.linear.weight, m.completeOrthogonalDecomposition().pseudoInverse() * w1);
  assign(d2.linear.weight, w1.completeOrthogonalDecomposition().pseudoInverse());
  const auto g = testing::random_connected_graph(n, rng);
  const auto s = mixing_operator<double>(g, GraphMode::smoothing, 0.0);
  const auto h = mixing_operator<double>(g, GraphMode::sharpening, 0.0);
  const auto x = testing::random_tensor({n, c}, rng);
  const auto y = d2.forward(d1.forward(e2.forward(e1.forward(x, s), s), h), h);
  CHECK(testing::max_abs_diff(y, x) <= 1e-9);
}

TEST_CASE("permuted graph relabels nodes consistently") {
  Rng rng(14);
  const auto g = testing::random_connected_graph(5, rng, 0.5, true);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  const auto gp = g.permuted(perm);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(gp.node_ids()[i] == g.node_ids()[perm[i]]);
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(gp.adjacency()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) ==
            g.adjacency()(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(perm[j])));
    }
  }
  CHECK_THROWS_AS(g.permuted({0, 1}), DimensionError);
}
