#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "diffguide/tensor.hpp"

namespace diffguide {

// Reverse-mode autodiff over Tensor. Each Var wraps a graph node holding
// the value, an accumulated gradient, and a closure that scatters the
// node's gradient into its parents.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // empty for leaves

  explicit Node(Tensor v, bool rg) : value(std::move(v)), requires_grad(rg) {
    if (requires_grad) grad = Tensor(value.shape);
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor v, bool requires_grad = false)
      : node_(std::make_shared<Node>(std::move(v), requires_grad)) {}

  static Var leaf(Tensor v) { return Var(std::move(v), true); }
  static Var constant(Tensor v) { return Var(std::move(v), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::shared_ptr<Node> node() const { return node_; }

  void zero_grad() {
    if (node_->requires_grad)
      std::fill(node_->grad.data.begin(), node_->grad.data.end(), 0.0);
  }

  double scalar() const {
    if (node_->value.numel() != 1) throw std::logic_error("scalar(): not a scalar");
    return node_->value.data[0];
  }

  // Backward from a scalar output with seed gradient 1.
  void backward() const {
    if (node_->value.numel() != 1)
      throw std::logic_error("backward(): output must be scalar");
    // topo order via DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      Node* n = stack.back().first;
      size_t i = stack.back().second;
      if (i < n->parents.size()) {
        ++stack.back().second;
        Node* p = n->parents[i].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    if (node_->grad.data.empty()) node_->grad = Tensor(node_->value.shape);
    node_->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backprop) n->backprop(*n);
    }
  }

  static Var make(Tensor value, std::vector<Var> parents,
                  std::function<void(Node&)> backprop) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.node()->requires_grad;
    Var out(std::move(value), rg);
    if (rg) {
      for (auto& p : parents) out.node_->parents.push_back(p.node());
      out.node_->backprop = std::move(backprop);
    }
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

inline void accumulate(const std::shared_ptr<Node>& n, const Tensor& g) {
  if (!n->requires_grad) return;
  if (n->grad.data.empty()) n->grad = Tensor(n->value.shape);
  n->grad += g;
}

namespace ops {

inline Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("add: shape mismatch");
  Tensor out = a.value();
  out += b.value();
  auto an = a.node(), bn = b.node();
  return Var::make(std::move(out), {a, b}, [an, bn](Node& n) {
    accumulate(an, n.grad);
    accumulate(bn, n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("sub: shape mismatch");
  Tensor out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
  auto an = a.node(), bn = b.node();
  return Var::make(std::move(out), {a, b}, [an, bn](Node& n) {
    accumulate(an, n.grad);
    Tensor neg = n.grad;
    neg *= -1.0;
    accumulate(bn, neg);
  });
}

inline Var mul(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("mul: shape mismatch");
  Tensor out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
  auto an = a.node(), bn = b.node();
  return Var::make(std::move(out), {a, b}, [an, bn](Node& n) {
    if (an->requires_grad) {
      Tensor ga = n.grad;
      for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= bn->value.data[i];
      accumulate(an, ga);
    }
    if (bn->requires_grad) {
      Tensor gb = n.grad;
      for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] *= an->value.data[i];
      accumulate(bn, gb);
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an, s](Node& n) {
    Tensor g = n.grad;
    g *= s;
    accumulate(an, g);
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v += s;
  auto an = a.node();
  return Var::make(std::move(out), {a},
                   [an](Node& n) { accumulate(an, n.grad); });
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::max(0.0, v);
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an](Node& n) {
    Tensor g = n.grad;
    for (size_t i = 0; i < g.data.size(); ++i)
      if (n.value.data[i] <= 0.0) g.data[i] = 0.0;
    accumulate(an, g);
  });
}

inline Var square(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = v * v;
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an](Node& n) {
    Tensor g = n.grad;
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= 2.0 * an->value.data[i];
    accumulate(an, g);
  });
}

// |x| with subgradient 0 at 0
inline Var abs(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::fabs(v);
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an](Node& n) {
    Tensor g = n.grad;
    for (size_t i = 0; i < g.data.size(); ++i) {
      double x = an->value.data[i];
      g.data[i] *= (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    }
    accumulate(an, g);
  });
}

inline Var sum(const Var& a) {
  Tensor out({1});
  out.data[0] = a.value().sum();
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an](Node& n) {
    Tensor g(an->value.shape);
    std::fill(g.data.begin(), g.data.end(), n.grad.data[0]);
    accumulate(an, g);
  });
}

inline Var mean(const Var& a) {
  int64_t cnt = a.value().numel();
  if (cnt == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(cnt));
}

// A[m,k] * B[k,n]
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.ndim() != 2 || B.ndim() != 2 || A.dim(1) != B.dim(0))
    throw std::invalid_argument("matmul: bad shapes " + shape_str(A.shape) +
                                " x " + shape_str(B.shape));
  int m = A.dim(0), k = A.dim(1), n = B.dim(1);
  using M = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                           Eigen::RowMajor>>;
  using Mw = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                      Eigen::RowMajor>>;
  Tensor out({m, n});
  Mw(out.data.data(), m, n) = M(A.data.data(), m, k) * M(B.data.data(), k, n);
  auto an = a.node(), bn = b.node();
  return Var::make(std::move(out), {a, b}, [an, bn, m, k, n](Node& nd) {
    M G(nd.grad.data.data(), m, n);
    if (an->requires_grad) {
      Tensor ga({m, k});
      Mw(ga.data.data(), m, k) = G * M(bn->value.data.data(), k, n).transpose();
      accumulate(an, ga);
    }
    if (bn->requires_grad) {
      Tensor gb({k, n});
      Mw(gb.data.data(), k, n) = M(an->value.data.data(), m, k).transpose() * G;
      accumulate(bn, gb);
    }
  });
}

// broadcast-add a row vector b[n] to each row of a[m,n]
inline Var add_rowvec(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.ndim() != 2 || B.ndim() != 1 || A.dim(1) != B.dim(0))
    throw std::invalid_argument("add_rowvec: bad shapes");
  int m = A.dim(0), n = A.dim(1);
  Tensor out = A;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(i) * n + j] += B.data[j];
  auto an = a.node(), bn = b.node();
  return Var::make(std::move(out), {a, b}, [an, bn, m, n](Node& nd) {
    accumulate(an, nd.grad);
    if (bn->requires_grad) {
      Tensor gb({n});
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gb.data[j] += nd.grad.data[static_cast<size_t>(i) * n + j];
      accumulate(bn, gb);
    }
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an](Node& n) {
    Tensor g = n.grad;
    for (size_t i = 0; i < g.data.size(); ++i) {
      double s = n.value.data[i];
      g.data[i] *= s * (1.0 - s);
    }
    accumulate(an, g);
  });
}

// row-wise softmax of a [N, C] tensor
inline Var softmax_rows(const Var& a) {
  const Tensor& A = a.value();
  if (A.ndim() != 2) throw std::invalid_argument("softmax_rows: need 2-D");
  int N = A.dim(0), C = A.dim(1);
  Tensor out = A;
  for (int i = 0; i < N; ++i) {
    double* row = out.data.data() + static_cast<size_t>(i) * C;
    double mx = *std::max_element(row, row + C);
    double s = 0;
    for (int j = 0; j < C; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (int j = 0; j < C; ++j) row[j] /= s;
  }
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an, N, C](Node& n) {
    Tensor g(an->value.shape);
    for (int i = 0; i < N; ++i) {
      const double* y = n.value.data.data() + static_cast<size_t>(i) * C;
      const double* gy = n.grad.data.data() + static_cast<size_t>(i) * C;
      double dot = 0;
      for (int j = 0; j < C; ++j) dot += gy[j] * y[j];
      double* gx = g.data.data() + static_cast<size_t>(i) * C;
      for (int j = 0; j < C; ++j) gx[j] = y[j] * (gy[j] - dot);
    }
    accumulate(an, g);
  });
}

inline Var log_softmax_rows(const Var& a) {
  const Tensor& A = a.value();
  if (A.ndim() != 2) throw std::invalid_argument("log_softmax_rows: need 2-D");
  int N = A.dim(0), C = A.dim(1);
  Tensor out = A;
  for (int i = 0; i < N; ++i) {
    double* row = out.data.data() + static_cast<size_t>(i) * C;
    double mx = *std::max_element(row, row + C);
    double s = 0;
    for (int j = 0; j < C; ++j) s += std::exp(row[j] - mx);
    double lse = mx + std::log(s);
    for (int j = 0; j < C; ++j) row[j] -= lse;
  }
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an, N, C](Node& n) {
    Tensor g(an->value.shape);
    for (int i = 0; i < N; ++i) {
      const double* ly = n.value.data.data() + static_cast<size_t>(i) * C;
      const double* gy = n.grad.data.data() + static_cast<size_t>(i) * C;
      double gsum = 0;
      for (int j = 0; j < C; ++j) gsum += gy[j];
      double* gx = g.data.data() + static_cast<size_t>(i) * C;
      for (int j = 0; j < C; ++j) gx[j] = gy[j] - std::exp(ly[j]) * gsum;
    }
    accumulate(an, g);
  });
}

// select rows of a [N, C] tensor; indices may repeat
inline Var select_rows(const Var& a, const std::vector<int>& idx) {
  const Tensor& A = a.value();
  if (A.ndim() != 2) throw std::invalid_argument("select_rows: need 2-D");
  int C = A.dim(1);
  Tensor out({static_cast<int>(idx.size()), C});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(A.data.data() + static_cast<size_t>(idx[i]) * C, C,
                out.data.data() + i * C);
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an, idx, C](Node& n) {
    Tensor g(an->value.shape);
    for (size_t i = 0; i < idx.size(); ++i) {
      double* dst = g.data.data() + static_cast<size_t>(idx[i]) * C;
      const double* src = n.grad.data.data() + i * C;
      for (int j = 0; j < C; ++j) dst[j] += src[j];
    }
    accumulate(an, g);
  });
}

inline Var reshape(const Var& a, std::vector<int> shape) {
  if (Tensor::numel_of(shape) != a.value().numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(shape, a.value().data);
  auto an = a.node();
  return Var::make(std::move(out), {a}, [an](Node& n) {
    Tensor g(an->value.shape, n.grad.data);
    accumulate(an, g);
  });
}

inline Var detach(const Var& a) { return Var::constant(a.value()); }

// stop-gradient mean of squared values: helper for L2 losses
inline Var mean_square(const Var& a) { return mean(square(a)); }

}  // namespace ops

// Central finite-difference gradient of f at leaf x (for tests and the
// acceptance suite). f must rebuild its graph from the leaf each call.
template <typename F>
Tensor finite_difference(F&& f, Var& x, double h = 1e-5) {
  Tensor g(x.value().shape);
  for (size_t i = 0; i < x.value().data.size(); ++i) {
    double orig = x.value().data[i];
    x.value().data[i] = orig + h;
    double fp = f();
    x.value().data[i] = orig - h;
    double fm = f();
    x.value().data[i] = orig;
    g.data[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline double max_relative_error(const Tensor& a, const Tensor& b,
                                 double floor = 1e-8) {
  double worst = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double denom = std::max({std::fabs(a.data[i]), std::fabs(b.data[i]), floor});
    worst = std::max(worst, std::fabs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}

}  // namespace diffguide
