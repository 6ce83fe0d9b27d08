#include "vidseq/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace vidseq {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMat<T>> as_mat(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return {v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename T>
Eigen::Map<RowMat<T>> as_mut_mat(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return {v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> a(values.data(), static_cast<Eigen::Index>(values.size()));
  if (!a.allFinite()) throw NonFiniteError(std::string("non-finite value produced by ") + op);
}

// Builds an op output. Parents and the backward closure are kept only when
// recording is on and some input needs a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::vector<NodePtr<T>> inputs, std::function<void(detail::Node<T>&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->leaf = false;
  bool needs = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
std::size_t rows_of(const Tensor<T>& x) {
  if (x.rank() == 0) return 1;
  return x.dim(0);
}

template <typename T>
std::size_t cols_of(const Tensor<T>& x) {
  const std::size_t r = rows_of(x);
  return r == 0 ? 0 : x.numel() / r;
}

template <typename T>
void require_rank2(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(x.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

// --- Tensor ----------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(vidseq::numel(shape), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (data.size() != vidseq::numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  }
  check_finite(data, "from_data");
  auto node = std::make_shared<NodeT>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> data(vidseq::numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw RankError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw RankError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw IndexError("index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw RankError("backward() requires a scalar root, got shape " + shape_str(shape()));
  }
  // Post-order DFS gives a topological order (parents before children).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (NodeT* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), T(0));
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// --- ops -------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  as_mut_mat(out, m, n).noalias() = as_mat(a.node()->value, m, k) * as_mat(b.node()->value, k, n);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result<T>({m, n}, std::move(out), "matmul", {an, bn},
                        [m, k, n](detail::Node<T>& self) {
                          auto& A = *self.parents[0];
                          auto& B = *self.parents[1];
                          auto dC = as_mat(self.grad, m, n);
                          if (A.requires_grad) {
                            as_mut_mat(A.ensure_grad(), m, k).noalias() +=
                                dC * as_mat(B.value, k, n).transpose();
                          }
                          if (B.requires_grad) {
                            as_mut_mat(B.ensure_grad(), k, n).noalias() +=
                                as_mat(A.value, m, k).transpose() * dC;
                          }
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  as_mut_mat(out, n, m) = as_mat(a.node()->value, m, n).transpose();
  return make_result<T>({n, m}, std::move(out), "transpose", {a.node_ptr()},
                        [m, n](detail::Node<T>& self) {
                          auto& A = *self.parents[0];
                          as_mut_mat(A.ensure_grad(), m, n) += as_mat(self.grad, n, m).transpose();
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>(a.shape(), std::move(out), "add", {a.node_ptr(), b.node_ptr()},
                        [](detail::Node<T>& self) {
                          for (auto& p : self.parents) {
                            if (!p->requires_grad) continue;
                            auto& g = p->ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>(a.shape(), std::move(out), "sub", {a.node_ptr(), b.node_ptr()},
                        [](detail::Node<T>& self) {
                          auto& A = *self.parents[0];
                          auto& B = *self.parents[1];
                          if (A.requires_grad) {
                            auto& g = A.ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (B.requires_grad) {
                            auto& g = B.ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>(a.shape(), std::move(out), "mul", {a.node_ptr(), b.node_ptr()},
                        [](detail::Node<T>& self) {
                          auto& A = *self.parents[0];
                          auto& B = *self.parents[1];
                          if (A.requires_grad) {
                            auto& g = A.ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
                          }
                          if (B.requires_grad) {
                            auto& g = B.ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
                          }
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_result<T>(a.shape(), std::move(out), "scale", {a.node_ptr()},
                        [factor](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
                        });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  if (bias.rank() != 1 || a.rank() == 0 || a.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
  }
  const std::size_t n = bias.dim(0);
  const std::size_t rows = a.numel() / n;
  std::vector<T> out(a.node()->value);
  const auto& bv = bias.node()->value;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  return make_result<T>(a.shape(), std::move(out), "add_bias", {a.node_ptr(), bias.node_ptr()},
                        [rows, n](detail::Node<T>& self) {
                          auto& A = *self.parents[0];
                          auto& B = *self.parents[1];
                          if (A.requires_grad) {
                            auto& g = A.ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (B.requires_grad) {
                            auto& g = B.ensure_grad();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0.0;
  for (const T v : a.data()) acc += v;
  return make_result<T>({}, {static_cast<T>(acc)}, "sum", {a.node_ptr()},
                        [](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (auto& v : g) v += self.grad[0];
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  const std::size_t n = x.dim(axis);
  if (n == 0) throw DimensionError("softmax over empty axis");
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t outer = x.numel() / (n * inner);
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result<T>(x.shape(), std::move(out), "softmax", {x.node_ptr()},
                        [outer, inner, n](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          const auto& y = self.value;
                          const auto& dy = self.grad;
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * n * inner + in;
                              T dot = 0;
                              for (std::size_t j = 0; j < n; ++j) dot += dy[base + j * inner] * y[base + j * inner];
                              for (std::size_t j = 0; j < n; ++j) {
                                const std::size_t idx = base + j * inner;
                                g[idx] += y[idx] * (dy[idx] - dot);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> keep) {
  require_rank2(x, "masked_softmax");
  if (keep.size() != x.numel()) throw DimensionError("masked_softmax: mask size mismatch");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size(), T(0));
  std::vector<std::uint8_t> mask(keep.begin(), keep.end());
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t base = r * n;
    bool any = false;
    T mx = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[base + j]) continue;
      mx = any ? std::max(mx, xv[base + j]) : xv[base + j];
      any = true;
    }
    if (!any) throw DimensionError("masked_softmax: row with every entry masked");
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[base + j]) continue;
      out[base + j] = std::exp(xv[base + j] - mx);
      total += out[base + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[base + j] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), "masked_softmax", {x.node_ptr()},
                        [m, n](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          const auto& y = self.value;
                          const auto& dy = self.grad;
                          for (std::size_t r = 0; r < m; ++r) {
                            const std::size_t base = r * n;
                            T dot = 0;
                            for (std::size_t j = 0; j < n; ++j) dot += dy[base + j] * y[base + j];
                            for (std::size_t j = 0; j < n; ++j) g[base + j] += y[base + j] * (dy[base + j] - dot);
                          }
                        });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm on scalar");
  const std::size_t n = x.shape().back();
  if (n < 2) throw DimensionError("layer_norm: feature axis needs at least 2 elements");
  const bool affine = gamma.defined();
  if (affine && (gamma.numel() != n || !beta.defined() || beta.numel() != n)) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(n) + " elements");
  }
  const std::size_t rows = x.numel() / n;
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * n + j] = h;
      out[r * n + j] = affine ? h * gamma.data()[j] + beta.data()[j] : h;
    }
  }
  std::vector<std::shared_ptr<detail::Node<T>>> inputs{x.node_ptr()};
  if (affine) {
    inputs.push_back(gamma.node_ptr());
    inputs.push_back(beta.node_ptr());
  }
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", std::move(inputs),
      [rows, n, affine, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        auto& X = *self.parents[0];
        const T* gam = affine ? self.parents[1]->value.data() : nullptr;
        std::vector<T> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = self.grad.data() + r * n;
          const T* h = xhat.data() + r * n;
          if (affine) {
            auto& G = *self.parents[1];
            auto& B = *self.parents[2];
            if (G.requires_grad) {
              auto& gg = G.ensure_grad();
              for (std::size_t j = 0; j < n; ++j) gg[j] += dy[j] * h[j];
            }
            if (B.requires_grad) {
              auto& gb = B.ensure_grad();
              for (std::size_t j = 0; j < n; ++j) gb[j] += dy[j];
            }
          }
          if (!X.requires_grad) continue;
          T s1 = 0, s2 = 0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = affine ? dy[j] * gam[j] : dy[j];
            s1 += dxhat[j];
            s2 += dxhat[j] * h[j];
          }
          auto& gx = X.ensure_grad();
          const T inv_n = T(1) / static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            gx[r * n + j] += inv_std[r] * (dxhat[j] - inv_n * s1 - h[j] * inv_n * s2);
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps) {
  return layer_norm(x, Tensor<T>(), Tensor<T>(), eps);
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  return make_result<T>(x.shape(), std::move(out), "gelu", {x.node_ptr()},
                        [inv_sqrt2](detail::Node<T>& self) {
                          auto& X = *self.parents[0];
                          auto& g = X.ensure_grad();
                          const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T v = X.value[i];
                            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                            const T pdf = std::exp(T(-0.5) * v * v) * inv_sqrt_2pi;
                            g[i] += self.grad[i] * (cdf + v * pdf);
                          }
                        });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_rank2(table, "embedding_lookup");
  const std::size_t rows = table.dim(0), width = table.dim(1);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * width);
  const auto& tv = table.node()->value;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows) {
      throw IndexError("embedding id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(idx[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  const std::size_t n = idx.size();
  return make_result<T>({n, width}, std::move(out), "embedding_lookup", {table.node_ptr()},
                        [width, idx = std::move(idx)](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < idx.size(); ++i)
                            for (std::size_t j = 0; j < width; ++j)
                              g[static_cast<std::size_t>(idx[i]) * width + j] += self.grad[i * width + j];
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::span<const std::uint8_t> include) {
  require_rank2(logits, "cross_entropy");
  const std::size_t L = logits.dim(0), V = logits.dim(1);
  if (targets.size() != L) throw DimensionError("cross_entropy: one target per row required");
  if (!include.empty() && include.size() != L) throw DimensionError("cross_entropy: mask length mismatch");
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> use(L, 1);
  if (!include.empty()) std::copy(include.begin(), include.end(), use.begin());
  std::size_t count = 0;
  for (std::size_t r = 0; r < L; ++r) {
    if (!use[r]) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= V) {
      throw IndexError("cross_entropy: target id " + std::to_string(tgt[r]) + " outside vocabulary");
    }
    ++count;
  }
  if (count == 0) throw EmptyLossError("cross_entropy: every position is masked");
  const auto& lv = logits.node()->value;
  std::vector<T> probs(L * V, T(0));
  double total = 0.0;
  for (std::size_t r = 0; r < L; ++r) {
    if (!use[r]) continue;
    const T* row = lv.data() + r * V;
    const T mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double log_z = std::log(z) + static_cast<double>(mx);
    total += log_z - static_cast<double>(row[tgt[r]]);
    for (std::size_t j = 0; j < V; ++j) probs[r * V + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - log_z));
  }
  const T inv_count = T(1) / static_cast<T>(count);
  return make_result<T>({}, {static_cast<T>(total / static_cast<double>(count))}, "cross_entropy",
                        {logits.node_ptr()},
                        [L, V, inv_count, tgt = std::move(tgt), use = std::move(use),
                         probs = std::move(probs)](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          const T up = self.grad[0] * inv_count;
                          for (std::size_t r = 0; r < L; ++r) {
                            if (!use[r]) continue;
                            for (std::size_t j = 0; j < V; ++j) g[r * V + j] += up * probs[r * V + j];
                            g[r * V + static_cast<std::size_t>(tgt[r])] -= up;
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (vidseq::numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result<T>(std::move(shape), std::vector<T>(x.node()->value), "reshape", {x.node_ptr()},
                        [](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) throw IndexError("slice_rows out of range");
  const std::size_t width = cols_of(x);
  Shape shape = x.shape();
  shape[0] = end - begin;
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * width),
                     xv.begin() + static_cast<std::ptrdiff_t>(end * width));
  return make_result<T>(std::move(shape), std::move(out), "slice_rows", {x.node_ptr()},
                        [begin, width](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * width + i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin > end || end > n) throw IndexError("slice_cols out of range");
  const std::size_t w = end - begin;
  std::vector<T> out(m * w);
  const auto& xv = x.node()->value;
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * n + begin), w,
                out.begin() + static_cast<std::ptrdiff_t>(r * w));
  return make_result<T>({m, w}, std::move(out), "slice_cols", {x.node_ptr()},
                        [m, n, w, begin](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t r = 0; r < m; ++r)
                            for (std::size_t j = 0; j < w; ++j) g[r * n + begin + j] += self.grad[r * w + j];
                        });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t width = cols_of(parts[0]);
  Shape shape = parts[0].shape();
  if (shape.empty()) throw DimensionError("concat_rows of scalars");
  std::size_t rows = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> inputs;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    if (p.rank() != shape.size() || tail != Shape(shape.begin() + 1, shape.end())) {
      throw DimensionError("concat_rows: trailing extents differ");
    }
    offsets.push_back(rows * width);
    rows += p.dim(0);
    inputs.push_back(p.node_ptr());
  }
  shape[0] = rows;
  std::vector<T> out;
  out.reserve(rows * width);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result<T>(std::move(shape), std::move(out), "concat_rows", std::move(inputs),
                        [offsets = std::move(offsets)](detail::Node<T>& self) {
                          for (std::size_t k = 0; k < self.parents.size(); ++k) {
                            auto& P = *self.parents[k];
                            if (!P.requires_grad) continue;
                            auto& g = P.ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
                          }
                        });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t m = parts[0].dim(0);
  std::size_t n = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> inputs;
  std::vector<std::size_t> offsets, widths;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(n);
    widths.push_back(p.dim(1));
    n += p.dim(1);
    inputs.push_back(p.node_ptr());
  }
  std::vector<T> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].node()->value;
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * n + offsets[k]));
  }
  return make_result<T>({m, n}, std::move(out), "concat_cols", std::move(inputs),
                        [m, n, offsets = std::move(offsets), widths = std::move(widths)](detail::Node<T>& self) {
                          for (std::size_t k = 0; k < self.parents.size(); ++k) {
                            auto& P = *self.parents[k];
                            if (!P.requires_grad) continue;
                            auto& g = P.ensure_grad();
                            for (std::size_t r = 0; r < m; ++r)
                              for (std::size_t j = 0; j < widths[k]; ++j)
                                g[r * widths[k] + j] += self.grad[r * n + offsets[k] + j];
                          }
                        });
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times) {
  require_rank2(x, "repeat_rows");
  if (x.dim(0) != 1) throw DimensionError("repeat_rows expects a single row");
  const std::size_t n = x.dim(1);
  std::vector<T> out;
  out.reserve(times * n);
  for (std::size_t r = 0; r < times; ++r) out.insert(out.end(), x.data().begin(), x.data().end());
  return make_result<T>({times, n}, std::move(out), "repeat_rows", {x.node_ptr()},
                        [times, n](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t r = 0; r < times; ++r)
                            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
                        });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_rank2(x, "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (m == 0) throw DimensionError("mean_rows of empty tensor");
  std::vector<T> out(n, T(0));
  const auto& xv = x.node()->value;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv[r * n + j];
  const T inv = T(1) / static_cast<T>(m);
  for (auto& v : out) v *= inv;
  return make_result<T>({1, n}, std::move(out), "mean_rows", {x.node_ptr()},
                        [m, n, inv](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t r = 0; r < m; ++r)
                            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[j] * inv;
                        });
}

#define VIDSEQ_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> transpose(const Tensor<T>&);                                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> masked_softmax(const Tensor<T>&, std::span<const std::uint8_t>);           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> layer_norm(const Tensor<T>&, T);                                           \
  template Tensor<T> gelu(const Tensor<T>&);                                                    \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const std::int32_t>);         \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>,             \
                                   std::span<const std::uint8_t>);                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                   \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                   \
  template Tensor<T> repeat_rows(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> mean_rows(const Tensor<T>&);

VIDSEQ_INSTANTIATE(float)
VIDSEQ_INSTANTIATE(double)

#undef VIDSEQ_INSTANTIATE

}  // namespace vidseq
