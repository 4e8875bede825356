#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "hsci/autodiff.hpp"

namespace hsci {

/// Cosine annealing from lr0 at t = 0 down to 0 at t = total.
inline double cosine_lr(double t, double total, double lr0) {
  if (total <= 0) return lr0;
  return lr0 * (1.0 + std::cos(std::numbers::pi * t / total)) / 2.0;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are created lazily, zeroed,
/// and matched to parameters by position.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Param<T>*>& params, double lr) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Tensor<T>::zeros(p->value.shape()));
        v_.push_back(Tensor<T>::zeros(p->value.shape()));
      }
    }
    if (m_.size() != params.size()) throw ValueError("adam: parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = double(p.grad[i]);
        const double mi = cfg_.beta1 * double(m[i]) + (1.0 - cfg_.beta1) * g;
        const double vi = cfg_.beta2 * double(v[i]) + (1.0 - cfg_.beta2) * g * g;
        m[i] = T(mi);
        v[i] = T(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        p.value[i] -= T(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Glorot-uniform initialization in (-a, a), a = sqrt(6 / (fan_in + fan_out)).
template <class T>
Tensor<T> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = T(u(rng));
  return t;
}

}  // namespace hsci
