#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hsci/tensor.hpp"

namespace hsci {

/// A named learnable tensor with its accumulated gradient.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros(value.shape())) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
};

/// Append-only record of forward operations. Nodes are stored in creation
/// order, so inputs always precede outputs and a reverse sweep is a valid
/// topological order.
template <class T>
class Tape {
 public:
  // Arguments: tape, upstream gradient, this node's forward value.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) {
    nodes_.push_back(Node{std::move(v), {}, {}, nullptr, false});
    return {this, nodes_.size() - 1};
  }

  /// Registers a parameter as a leaf. Registering the same Param twice on
  /// one tape returns the same node, so shared weights accumulate.
  Var<T> param(Param<T>& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
    nodes_.push_back(Node{p.value, {}, {}, &p, recording_});
    param_ids_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> v, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool rg = false;
    if (recording_) {
      for (const auto& in : inputs) rg = rg || nodes_[in.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(v), {}, rg ? std::move(fn) : BackwardFn{}, nullptr, rg});
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds g into the gradient buffer of node id (no-op for constants).
  void accumulate(std::size_t id, const Tensor<T>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    T* dst = n.grad.data();
    const T* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  }

  /// Direct access to a gradient buffer, allocating zeros on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }

  /// Reverse sweep from a scalar loss. Parameter gradients are added into
  /// Param::grad.
  void backward(Var<T> loss) {
    if (loss.value().size() != 1) {
      throw ValueError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Tensor<T>(loss.shape(), T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param) {
        auto& pg = n.param->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      } else if (n.backward) {
        n.backward(*this, n.grad, n.value);
      }
      n.grad = Tensor<T>();
    }
  }

  /// When disabled, new nodes never require gradients (inference mode).
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Param<T>* param;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Param<T>*, std::size_t> param_ids_;
  bool recording_ = true;
};

namespace ad {

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) {
      Tensor<T> ng = g;
      for (auto& v : ng.values()) v = -v;
      t.accumulate(ib, ng);
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    if (t.requires_grad(ia)) {
      Tensor<T> ga = g;
      const auto& bv = t.value(ib);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Tensor<T> gb = g;
      const auto& av = t.value(ia);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
      t.accumulate(ib, gb);
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.tape->record(std::move(out), {a}, [ia = a.id, s](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> ga = g;
    for (auto& v : ga.values()) v *= s;
    t.accumulate(ia, ga);
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  return a.tape->record(std::move(out), {a}, [ia = a.id](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    t.accumulate(ia, g.reshaped(t.value(ia).shape()));
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return a.tape->record(Tensor<T>({1}, s), {a}, [ia = a.id](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    t.accumulate(ia, Tensor<T>(t.value(ia).shape(), g[0]));
  });
}

/// Euclidean norm of all elements. The gradient at exactly zero is taken as 0.
template <class T>
Var<T> l2_norm(Var<T> a) {
  const T n = std::sqrt(sum_squares(a.value()));
  return a.tape->record(Tensor<T>({1}, n), {a}, [ia = a.id, n](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> ga = t.value(ia);
    const T f = n > T(0) ? g[0] / n : T(0);
    for (auto& v : ga.values()) v *= f;
    t.accumulate(ia, ga);
  });
}

/// Picks element i of a tensor as a shape-[1] scalar.
template <class T>
Var<T> element(Var<T> a, std::size_t i) {
  if (i >= a.value().size()) throw DimensionError("element: index out of range");
  return a.tape->record(Tensor<T>({1}, a.value()[i]), {a}, [ia = a.id, i](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& buf = t.grad_buffer(ia);
    if (t.requires_grad(ia)) buf[i] += g[0];
  });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  kernel::gemm(false, false, m, n, k, av.data(), bv.data(), out.data(), false);
  return a.tape->record(std::move(out), {a, b},
                        [ia = a.id, ib = b.id, m, n, k](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                          if (t.requires_grad(ia)) {
                            Tensor<T> ga({m, k});
                            kernel::gemm(false, true, m, k, n, g.data(), t.value(ib).data(), ga.data(), false);
                            t.accumulate(ia, ga);
                          }
                          if (t.requires_grad(ib)) {
                            Tensor<T> gb({k, n});
                            kernel::gemm(true, false, k, n, m, t.value(ia).data(), g.data(), gb.data(), false);
                            t.accumulate(ib, gb);
                          }
                        });
}

/// Batched product over leading axis: [B,M,K] x [B,K,N] -> [B,M,N], with
/// optional transposition of the per-batch operands.
template <class T>
Var<T> bmm(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t batch = av.dim(0);
  const std::size_t m = trans_a ? av.dim(2) : av.dim(1);
  const std::size_t k = trans_a ? av.dim(1) : av.dim(2);
  const std::size_t kb = trans_b ? bv.dim(2) : bv.dim(1);
  const std::size_t n = trans_b ? bv.dim(1) : bv.dim(2);
  if (k != kb) {
    throw DimensionError("bmm: inner dimensions differ for " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  Tensor<T> out({batch, m, n});
  for (std::size_t bi = 0; bi < batch; ++bi) {
    kernel::gemm(trans_a, trans_b, m, n, k, av.data() + bi * m * k, bv.data() + bi * k * n,
                 out.data() + bi * m * n, false);
  }
  return a.tape->record(
      std::move(out), {a, b},
      [ia = a.id, ib = b.id, batch, m, n, k, trans_a, trans_b](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const T* A = t.value(ia).data();
        const T* B = t.value(ib).data();
        if (t.requires_grad(ia)) {
          Tensor<T> ga(t.value(ia).shape());
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const T* G = g.data() + bi * m * n;
            if (!trans_a) {
              kernel::gemm(false, !trans_b, m, k, n, G, B + bi * k * n, ga.data() + bi * m * k, false);
            } else {
              kernel::gemm(trans_b, true, k, m, n, B + bi * k * n, G, ga.data() + bi * m * k, false);
            }
          }
          t.accumulate(ia, ga);
        }
        if (t.requires_grad(ib)) {
          Tensor<T> gb(t.value(ib).shape());
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const T* G = g.data() + bi * m * n;
            if (!trans_b) {
              kernel::gemm(!trans_a, false, k, n, m, A + bi * m * k, G, gb.data() + bi * k * n, false);
            } else {
              kernel::gemm(true, trans_a, n, k, m, G, A + bi * m * k, gb.data() + bi * k * n, false);
            }
          }
          t.accumulate(ib, gb);
        }
      });
}

/// Elementwise map with derivative expressed through input x and output y.
template <class T, class F, class D>
Var<T> unary(Var<T> a, F f, D dfdx) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = f(v);
  return a.tape->record(std::move(out), {a}, [ia = a.id, dfdx](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> ga = g;
    const auto& x = t.value(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= dfdx(x[i]);
    t.accumulate(ia, ga);
  });
}

namespace detail {
template <class T>
inline constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)
template <class T>
inline constexpr T kGeluA = T(0.044715);
}  // namespace detail

/// Scalar GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
template <class T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::tanh(detail::kGeluC<T> * (x + detail::kGeluA<T> * x * x * x)));
}

template <class T>
T gelu_derivative(T x) {
  const T u = detail::kGeluC<T> * (x + detail::kGeluA<T> * x * x * x);
  const T th = std::tanh(u);
  const T du = detail::kGeluC<T> * (T(1) + T(3) * detail::kGeluA<T> * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <class T>
Var<T> gelu(Var<T> a) {
  return unary(a, [](T x) { return gelu_value(x); }, [](T x) { return gelu_derivative(x); });
}

template <class T>
T sigmoid_value(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return unary(a, [](T x) { return sigmoid_value(x); },
               [](T x) {
                 const T s = sigmoid_value(x);
                 return s * (T(1) - s);
               });
}

template <class T>
Var<T> softplus(Var<T> a) {
  return unary(a, [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
               [](T x) { return sigmoid_value(x); });
}

/// Softmax along one axis, with max subtraction.
template <class T>
Tensor<T> softmax_value(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor<T> y(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= z;
    }
  }
  return y;
}

template <class T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  Tensor<T> y = softmax_value(a.value(), axis);
  const auto& s = y.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  return a.tape->record(std::move(y), {a},
                        [ia = a.id, outer, inner, n](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
                          Tensor<T> ga(y.shape());
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * n * inner + in;
                              T d = 0;
                              for (std::size_t j = 0; j < n; ++j) d += g[base + j * inner] * y[base + j * inner];
                              for (std::size_t j = 0; j < n; ++j) {
                                const std::size_t q = base + j * inner;
                                ga[q] = y[q] * (g[q] - d);
                              }
                            }
                          }
                          t.accumulate(ia, ga);
                        });
}

}  // namespace ad
}  // namespace hsci
