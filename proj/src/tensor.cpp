#include "gtrans/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "gtrans/errors.hpp"

namespace gtrans {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

thread_local bool t_grad_enabled = true;

template <typename Real>
void check_finite(const std::vector<Real>& values, const char* op) {
  for (Real v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

// Builds an operation result and, when any input is tracked and recording is
// on, links it into the graph.
template <typename Real>
Tensor<Real> make_result(const char* op, Shape shape, std::vector<Real> data,
                         std::initializer_list<const Tensor<Real>*> inputs,
                         std::function<void(detail::Node<Real>&)> backward) {
  check_finite(data, op);
  auto node = std::make_shared<detail::Node<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool tracked = false;
  if (t_grad_enabled) {
    for (const auto* in : inputs) tracked = tracked || in->requires_grad();
  }
  if (tracked) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->parents.push_back(in->node());
    node->backward = std::move(backward);
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> make_result_multi(const char* op, Shape shape, std::vector<Real> data,
                               const std::vector<Tensor<Real>>& inputs,
                               std::function<void(detail::Node<Real>&)> backward) {
  check_finite(data, op);
  auto node = std::make_shared<detail::Node<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool tracked = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  }
  if (tracked) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<Real>(std::move(node));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Result shape of a broadcasting elementwise op.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  const std::size_t na = element_count(a);
  const std::size_t nb = element_count(b);
  if (nb == 1 && na >= 1) return a;
  if (na == 1) return b;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
}

struct AxisSplit {
  std::size_t outer;
  std::size_t length;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c (+)= op(a) * op(b); a is m x k after op, b is k x n after op. Storage is
// row-major with the untransposed leading dimensions.
template <typename Real>
void gemm(const Real* a, bool trans_a, const Real* b, bool trans_b, Real* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  using ConstMap = Eigen::Map<const RowMatrix<Real>>;
  Eigen::Map<RowMatrix<Real>> out(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const auto em = static_cast<Eigen::Index>(m);
  const auto ek = static_cast<Eigen::Index>(k);
  const auto en = static_cast<Eigen::Index>(n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      out.noalias() += lhs * rhs;
    } else {
      out.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) {
    run(ConstMap(a, em, ek), ConstMap(b, ek, en));
  } else if (trans_a && !trans_b) {
    run(ConstMap(a, ek, em).transpose(), ConstMap(b, ek, en));
  } else if (!trans_a && trans_b) {
    run(ConstMap(a, em, ek), ConstMap(b, en, ek).transpose());
  } else {
    run(ConstMap(a, ek, em).transpose(), ConstMap(b, en, ek).transpose());
  }
}

enum class BinaryKind { add, sub, mul };

template <typename Real>
Tensor<Real> binary(const Tensor<Real>& a, const Tensor<Real>& b, BinaryKind kind, const char* op) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  const std::size_t n = element_count(out_shape);
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real x = ad[na == n ? i : i % na];
    const Real y = bd[nb == n ? i : i % nb];
    switch (kind) {
      case BinaryKind::add: out[i] = x + y; break;
      case BinaryKind::sub: out[i] = x - y; break;
      case BinaryKind::mul: out[i] = x * y; break;
    }
  }
  return make_result<Real>(op, std::move(out_shape), std::move(out), {&a, &b},
                           [kind, na, nb](detail::Node<Real>& self) {
                             auto& pa = self.parents[0];
                             auto& pb = self.parents[1];
                             const std::size_t n = self.data.size();
                             if (pa->requires_grad) {
                               pa->ensure_grad();
                               for (std::size_t i = 0; i < n; ++i) {
                                 const Real g = self.grad[i];
                                 const std::size_t j = na == n ? i : i % na;
                                 if (kind == BinaryKind::mul) {
                                   pa->grad[j] += g * pb->data[nb == n ? i : i % nb];
                                 } else {
                                   pa->grad[j] += g;
                                 }
                               }
                             }
                             if (pb->requires_grad) {
                               pb->ensure_grad();
                               for (std::size_t i = 0; i < n; ++i) {
                                 const Real g = self.grad[i];
                                 const std::size_t j = nb == n ? i : i % nb;
                                 switch (kind) {
                                   case BinaryKind::add: pb->grad[j] += g; break;
                                   case BinaryKind::sub: pb->grad[j] -= g; break;
                                   case BinaryKind::mul: pb->grad[j] += g * pa->data[na == n ? i : i % na]; break;
                                 }
                               }
                             }
                           });
}

template <typename Real, typename Forward, typename Derivative>
Tensor<Real> unary(const Tensor<Real>& a, const char* op, Forward f, Derivative df) {
  const auto ad = a.data();
  std::vector<Real> out(ad.size());
  std::transform(ad.begin(), ad.end(), out.begin(), f);
  // df(x, y) gives dy/dx from the input and output values.
  return make_result<Real>(op, a.shape(), std::move(out), {&a}, [df](detail::Node<Real>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) p->grad[i] += self.grad[i] * df(p->data[i], self.data[i]);
  });
}

// Copies `src` (with `shape`) into axis-permuted order.
template <typename Real>
std::vector<Real> permute_copy(std::span<const Real> src, const Shape& shape, const std::vector<std::size_t>& perm,
                               Shape& out_shape) {
  const std::size_t r = shape.size();
  out_shape.assign(r, 0);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = shape[perm[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * shape[i];
  std::vector<std::size_t> stride_for_out(r);
  for (std::size_t i = 0; i < r; ++i) stride_for_out[i] = in_strides[perm[i]];
  std::vector<Real> out(src.size());
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t o = 0; o < out.size(); ++o) {
    out[o] = src[offset];
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      offset += stride_for_out[d];
      if (idx[d] < out_shape[d]) break;
      offset -= stride_for_out[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor

template <typename Real>
Tensor<Real>::Tensor() : node_(std::make_shared<detail::Node<Real>>()) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill) : node_(std::make_shared<detail::Node<Real>>()) {
  node_->data.assign(element_count(shape), fill);
  node_->shape = std::move(shape);
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values) : node_(std::make_shared<detail::Node<Real>>()) {
  if (element_count(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " needs " + std::to_string(element_count(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename Real>
Tensor<Real> Tensor<Real>::parameter(Shape shape, std::vector<Real> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return node_->shape[axis];
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  return Tensor(shape(), node_->data);
}

template <typename Real>
void Tensor<Real>::backward() const {
  if (size() != 1) throw ContractError("backward() needs a scalar loss, got shape " + to_string(shape()));
  if (!requires_grad()) throw ContractError("backward() on a tensor that does not depend on tracked values");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node<Real>*> order;
  std::unordered_set<detail::Node<Real>*> visited;
  std::vector<std::pair<detail::Node<Real>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node<Real>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Interior gradients restart from zero on every call; leaves accumulate.
  for (auto* n : order) {
    if (n->backward) n->grad.assign(n->data.size(), Real(0));
  }
  node_->grad.assign(1, Real(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------
// Operations

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(a, b, BinaryKind::add, "add");
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(a, b, BinaryKind::sub, "sub");
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary(a, b, BinaryKind::mul, "mul");
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  return unary(a, "scale", [factor](Real x) { return x * factor; }, [factor](Real, Real) { return factor; });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real value) {
  return unary(a, "add_scalar", [value](Real x) { return x + value; }, [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fail = [&]() -> DimensionError {
    return DimensionError("matmul: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw fail();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  if (sb[sb.size() - 2] != k) throw fail();

  enum class Form { flat_left, broadcast_left, batched } form;
  std::size_t batch = 1;
  Shape out_shape;
  if (sb.size() == 2) {
    form = Form::flat_left;
    batch = a.size() / (m * k);
    out_shape = sa;
    out_shape.back() = n;
  } else if (sa.size() == 2) {
    form = Form::broadcast_left;
    batch = b.size() / (k * n);
    out_shape = sb;
    out_shape[out_shape.size() - 2] = m;
  } else {
    if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) throw fail();
    form = Form::batched;
    batch = a.size() / (m * k);
    out_shape = sa;
    out_shape.back() = n;
  }

  std::vector<Real> out(element_count(out_shape));
  const Real* ad = a.data().data();
  const Real* bd = b.data().data();
  if (form == Form::flat_left) {
    gemm(ad, false, bd, false, out.data(), batch * m, k, n, false);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const Real* ai = form == Form::broadcast_left ? ad : ad + i * m * k;
      gemm(ai, false, bd + i * k * n, false, out.data() + i * m * n, m, k, n, false);
    }
  }

  return make_result<Real>("matmul", std::move(out_shape), std::move(out), {&a, &b},
                           [form, batch, m, k, n](detail::Node<Real>& self) {
                             auto& pa = self.parents[0];
                             auto& pb = self.parents[1];
                             const Real* g = self.grad.data();
                             if (form == Form::flat_left) {
                               if (pa->requires_grad) {
                                 pa->ensure_grad();
                                 gemm(g, false, pb->data.data(), true, pa->grad.data(), batch * m, n, k, true);
                               }
                               if (pb->requires_grad) {
                                 pb->ensure_grad();
                                 gemm(pa->data.data(), true, g, false, pb->grad.data(), k, batch * m, n, true);
                               }
                               return;
                             }
                             if (pa->requires_grad) pa->ensure_grad();
                             if (pb->requires_grad) pb->ensure_grad();
                             for (std::size_t i = 0; i < batch; ++i) {
                               const std::size_t a_off = form == Form::broadcast_left ? 0 : i * m * k;
                               const Real* gi = g + i * m * n;
                               if (pa->requires_grad) {
                                 gemm(gi, false, pb->data.data() + i * k * n, true, pa->grad.data() + a_off, m, n, k,
                                      true);
                               }
                               if (pb->requires_grad) {
                                 gemm(pa->data.data() + a_off, true, gi, false, pb->grad.data() + i * k * n, k, m, n,
                                      true);
                               }
                             }
                           });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a, std::size_t axis0, std::size_t axis1) {
  const std::size_t r = a.rank();
  if (axis0 >= r || axis1 >= r) {
    throw DimensionError("transpose: axes " + std::to_string(axis0) + "," + std::to_string(axis1) +
                         " out of range for " + to_string(a.shape()));
  }
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[axis0], perm[axis1]);
  Shape out_shape;
  auto out = permute_copy(a.data(), a.shape(), perm, out_shape);
  return make_result<Real>("transpose", out_shape, std::move(out), {&a},
                           [perm, out_shape](detail::Node<Real>& self) {
                             auto& p = self.parents[0];
                             p->ensure_grad();
                             Shape back_shape;
                             // A swap is its own inverse.
                             auto back = permute_copy<Real>(self.grad, out_shape, perm, back_shape);
                             for (std::size_t i = 0; i < back.size(); ++i) p->grad[i] += back[i];
                           });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (element_count(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<Real> out(a.data().begin(), a.data().end());
  return make_result<Real>("reshape", std::move(shape), std::move(out), {&a}, [](detail::Node<Real>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const AxisSplit base = split_axis(first, axis, "concat");
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + to_string(s) + " does not match " + to_string(first));
    lengths.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<Real> out(element_count(out_shape));
  const std::size_t inner = base.inner;
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto d = parts[pi].data();
    const std::size_t chunk = lengths[pi] * inner;
    for (std::size_t o = 0; o < base.outer; ++o) {
      std::copy_n(d.begin() + o * chunk, chunk, out.begin() + o * total * inner + offset * inner);
    }
    offset += lengths[pi];
  }
  return make_result_multi<Real>("concat", std::move(out_shape), std::move(out), parts,
                                 [lengths, total, inner, outer = base.outer](detail::Node<Real>& self) {
                                   std::size_t offset = 0;
                                   for (std::size_t pi = 0; pi < lengths.size(); ++pi) {
                                     auto& p = self.parents[pi];
                                     const std::size_t chunk = lengths[pi] * inner;
                                     if (p->requires_grad) {
                                       p->ensure_grad();
                                       for (std::size_t o = 0; o < outer; ++o) {
                                         const Real* src = self.grad.data() + o * total * inner + offset * inner;
                                         Real* dst = p->grad.data() + o * chunk;
                                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                                       }
                                     }
                                     offset += lengths[pi];
                                   }
                                 });
}

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(a.shape(), axis, "slice");
  if (start + length > s.length) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis " + std::to_string(axis) + " of " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<Real> out(element_count(out_shape));
  const auto d = a.data();
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(d.begin() + (o * s.length + start) * s.inner, chunk, out.begin() + o * chunk);
  }
  return make_result<Real>("slice", std::move(out_shape), std::move(out), {&a},
                           [s, start, chunk](detail::Node<Real>& self) {
                             auto& p = self.parents[0];
                             p->ensure_grad();
                             for (std::size_t o = 0; o < s.outer; ++o) {
                               Real* dst = p->grad.data() + (o * s.length + start) * s.inner;
                               const Real* src = self.grad.data() + o * chunk;
                               for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                             }
                           });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  return make_result<Real>("sum", Shape{}, std::vector<Real>{total}, {&a}, [](detail::Node<Real>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (auto& g : p->grad) g += self.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  if (a.empty()) throw ContractError("mean of an empty tensor");
  return scale(sum(a), Real(1) / static_cast<Real>(a.size()));
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "mean");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<Real> out(s.outer * s.inner, Real(0));
  const auto d = a.data();
  const Real inv = Real(1) / static_cast<Real>(s.length);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.length; ++l) {
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += d[(o * s.length + l) * s.inner + i];
    }
  }
  for (auto& v : out) v *= inv;
  return make_result<Real>("mean", std::move(out_shape), std::move(out), {&a}, [s, inv](detail::Node<Real>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t l = 0; l < s.length; ++l) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          p->grad[(o * s.length + l) * s.inner + i] += self.grad[o * s.inner + i] * inv;
        }
      }
    }
  });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  return unary(
      a, "relu", [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  return unary(
      a, "sigmoid",
      [](Real x) {
        if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
        const Real e = std::exp(x);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& a) {
  return unary(
      a, "tanh", [](Real x) { return std::tanh(x); }, [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& a) {
  return unary(
      a, "square", [](Real x) { return x * x; }, [](Real x, Real) { return Real(2) * x; });
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "softmax");
  const auto d = a.data();
  std::vector<Real> out(d.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.length * s.inner + i;
      Real peak = d[base];
      for (std::size_t l = 1; l < s.length; ++l) peak = std::max(peak, d[base + l * s.inner]);
      Real total = 0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const Real e = std::exp(d[base + l * s.inner] - peak);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.length; ++l) out[base + l * s.inner] /= total;
    }
  }
  return make_result<Real>("softmax", a.shape(), std::move(out), {&a}, [s](detail::Node<Real>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.length * s.inner + i;
        Real dot = 0;
        for (std::size_t l = 0; l < s.length; ++l) {
          dot += self.grad[base + l * s.inner] * self.data[base + l * s.inner];
        }
        for (std::size_t l = 0; l < s.length; ++l) {
          const std::size_t j = base + l * s.inner;
          p->grad[j] += self.data[j] * (self.grad[j] - dot);
        }
      }
    }
  });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias, Real epsilon) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t width = x.shape().back();
  if (gain.size() != width || bias.size() != width) {
    throw DimensionError("layer_norm: input " + to_string(x.shape()) + " with gain " + to_string(gain.shape()) +
                         " and bias " + to_string(bias.shape()));
  }
  const std::size_t rows = x.size() / width;
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<Real> normalized(x.size());
  std::vector<Real> inv_std(rows);
  std::vector<Real> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xd.data() + r * width;
    Real mu = 0;
    for (std::size_t i = 0; i < width; ++i) mu += row[i];
    mu /= static_cast<Real>(width);
    Real var = 0;
    for (std::size_t i = 0; i < width; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<Real>(width);
    const Real is = Real(1) / std::sqrt(var + epsilon);
    inv_std[r] = is;
    for (std::size_t i = 0; i < width; ++i) {
      const Real h = (row[i] - mu) * is;
      normalized[r * width + i] = h;
      out[r * width + i] = h * gd[i] + bd[i];
    }
  }
  return make_result<Real>(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [normalized = std::move(normalized), inv_std = std::move(inv_std), width, rows](detail::Node<Real>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        std::vector<Real> dh(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* g = self.grad.data() + r * width;
          const Real* h = normalized.data() + r * width;
          Real mean_dh = 0;
          Real mean_dh_h = 0;
          for (std::size_t i = 0; i < width; ++i) {
            if (pg->requires_grad) pg->grad[i] += g[i] * h[i];
            if (pb->requires_grad) pb->grad[i] += g[i];
            dh[i] = g[i] * pg->data[i];
            mean_dh += dh[i];
            mean_dh_h += dh[i] * h[i];
          }
          if (!px->requires_grad) continue;
          mean_dh /= static_cast<Real>(width);
          mean_dh_h /= static_cast<Real>(width);
          for (std::size_t i = 0; i < width; ++i) {
            px->grad[r * width + i] += inv_std[r] * (dh[i] - mean_dh - h[i] * mean_dh_h);
          }
        }
      });
}

template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const Real keep_scale = Real(1.0 / (1.0 - rate));
  std::vector<Real> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < rate ? Real(0) : keep_scale;
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return make_result<Real>("dropout", x.shape(), std::move(out), {&x},
                           [mask = std::move(mask)](detail::Node<Real>& self) {
                             auto& p = self.parents[0];
                             p->ensure_grad();
                             for (std::size_t i = 0; i < mask.size(); ++i) p->grad[i] += self.grad[i] * mask[i];
                           });
}

template <typename Real>
Tensor<Real> masked_fill(const Tensor<Real>& x, std::span<const std::uint8_t> mask, const Shape& mask_shape,
                         Real value) {
  if (!is_suffix(mask_shape, x.shape()) || element_count(mask_shape) != mask.size()) {
    throw DimensionError("masked_fill: mask " + to_string(mask_shape) + " does not fit input " +
                         to_string(x.shape()));
  }
  const std::size_t period = mask.size();
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (keep[i % period]) out[i] = value;
  }
  return make_result<Real>("masked_fill", x.shape(), std::move(out), {&x},
                           [keep = std::move(keep), period](detail::Node<Real>& self) {
                             auto& p = self.parents[0];
                             p->ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i) {
                               if (!keep[i % period]) p->grad[i] += self.grad[i];
                             }
                           });
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define GTRANS_INSTANTIATE(Real)                                                                               \
  template class Tensor<Real>;                                                                                 \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                                         \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                                         \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                                         \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                                      \
  template Tensor<Real> add_scalar(const Tensor<Real>&, Real);                                                 \
  template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                                      \
  template Tensor<Real> transpose(const Tensor<Real>&, std::size_t, std::size_t);                              \
  template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                                   \
  template Tensor<Real> concat(const std::vector<Tensor<Real>>&, std::size_t);                                 \
  template Tensor<Real> slice(const Tensor<Real>&, std::size_t, std::size_t, std::size_t);                     \
  template Tensor<Real> sum(const Tensor<Real>&);                                                              \
  template Tensor<Real> mean(const Tensor<Real>&);                                                             \
  template Tensor<Real> mean(const Tensor<Real>&, std::size_t);                                                \
  template Tensor<Real> relu(const Tensor<Real>&);                                                             \
  template Tensor<Real> sigmoid(const Tensor<Real>&);                                                          \
  template Tensor<Real> tanh(const Tensor<Real>&);                                                             \
  template Tensor<Real> square(const Tensor<Real>&);                                                           \
  template Tensor<Real> softmax(const Tensor<Real>&, std::size_t);                                             \
  template Tensor<Real> layer_norm(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Real);        \
  template Tensor<Real> dropout(const Tensor<Real>&, double, Rng&, bool);                                      \
  template Tensor<Real> masked_fill(const Tensor<Real>&, std::span<const std::uint8_t>, const Shape&, Real);

GTRANS_INSTANTIATE(float)
GTRANS_INSTANTIATE(double)

#undef GTRANS_INSTANTIATE

}  // namespace gtrans
