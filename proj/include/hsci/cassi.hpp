#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "hsci/autodiff.hpp"

namespace hsci {

/// Coded aperture plus dispersion; fully determines the CASSI operator Phi.
template <class T>
struct SensingConfig {
  Tensor<T> mask;  // H x W transmittances in [0, 1]
  std::size_t dispersion_step = 2;
  std::size_t bands = 28;
  T noise_sigma = T(0);

  std::size_t height() const { return mask.dim(0); }
  std::size_t width() const { return mask.dim(1); }
  std::size_t measurement_width() const { return width() + dispersion_step * (bands - 1); }
  Shape cube_shape() const { return {height(), width(), bands}; }
  Shape measurement_shape() const { return {height(), measurement_width()}; }

  void validate() const {
    if (mask.rank() != 2) throw DimensionError("sensing config: mask must be H x W, got " + shape_str(mask.shape()));
    if (bands == 0) throw ValueError("sensing config: band count must be >= 1");
    if (noise_sigma < T(0)) throw ValueError("sensing config: noise sigma must be >= 0");
    for (T v : mask.values()) {
      if (!(v >= T(0) && v <= T(1))) throw ValueError("sensing config: mask values must lie in [0, 1]");
    }
  }
};

template <class T>
SensingConfig<T> make_sensing(Tensor<T> mask, std::size_t bands, std::size_t step = 2, T sigma = T(0)) {
  SensingConfig<T> cfg{std::move(mask), step, bands, sigma};
  cfg.validate();
  return cfg;
}

/// Seeded random mask. Binary masks draw {0,1} with probability 1/2.
template <class T>
Tensor<T> random_mask(std::size_t h, std::size_t w, std::uint64_t seed, bool binary = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<T> m({h, w});
  for (auto& v : m.values()) v = binary ? T(u(rng) < 0.5 ? 0 : 1) : T(u(rng));
  return m;
}

namespace detail {
template <class T>
void check_cube(const Tensor<T>& x, const SensingConfig<T>& cfg, const char* what) {
  if (x.shape() != cfg.cube_shape()) {
    throw DimensionError(std::string(what) + ": cube shape " + shape_str(x.shape()) + " does not match sensing config " +
                         shape_str(cfg.cube_shape()));
  }
}
template <class T>
void check_measurement(const Tensor<T>& y, const SensingConfig<T>& cfg, const char* what) {
  if (y.shape() != cfg.measurement_shape()) {
    throw DimensionError(std::string(what) + ": measurement shape " + shape_str(y.shape()) +
                         " does not match sensing config " + shape_str(cfg.measurement_shape()));
  }
}
}  // namespace detail

/// y[i, j + d c] = sum_c mask[i, j] x[i, j, c]
template <class T>
Tensor<T> phi_forward(const Tensor<T>& x, const SensingConfig<T>& cfg) {
  detail::check_cube(x, cfg, "phi_forward");
  const std::size_t h = cfg.height(), w = cfg.width(), c = cfg.bands, d = cfg.dispersion_step;
  const std::size_t wm = cfg.measurement_width();
  Tensor<T> y({h, wm});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const T m = cfg.mask.at(i, j);
      const T* xp = x.data() + (i * w + j) * c;
      T* yr = y.data() + i * wm + j;
      for (std::size_t b = 0; b < c; ++b) yr[d * b] += m * xp[b];
    }
  return y;
}

/// Exact transpose of phi_forward: x[i, j, c] = mask[i, j] y[i, j + d c].
template <class T>
Tensor<T> phi_adjoint(const Tensor<T>& y, const SensingConfig<T>& cfg) {
  detail::check_measurement(y, cfg, "phi_adjoint");
  const std::size_t h = cfg.height(), w = cfg.width(), c = cfg.bands, d = cfg.dispersion_step;
  const std::size_t wm = cfg.measurement_width();
  Tensor<T> x(cfg.cube_shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const T m = cfg.mask.at(i, j);
      T* xp = x.data() + (i * w + j) * c;
      const T* yr = y.data() + i * wm + j;
      for (std::size_t b = 0; b < c; ++b) xp[b] = m * yr[d * b];
    }
  return x;
}

/// Diagonal of Phi Phi^T laid out as a measurement: sum_c mask[i, j - d c]^2.
template <class T>
Tensor<T> phi_phit_diag(const SensingConfig<T>& cfg) {
  const std::size_t h = cfg.height(), w = cfg.width(), c = cfg.bands, d = cfg.dispersion_step;
  const std::size_t wm = cfg.measurement_width();
  Tensor<T> out({h, wm});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const T m = cfg.mask.at(i, j);
      for (std::size_t b = 0; b < c; ++b) out[i * wm + j + d * b] += m * m;
    }
  return out;
}

/// Noisy measurement phi_forward(x) + N(0, sigma^2), reproducible per seed.
template <class T>
Tensor<T> simulate(const Tensor<T>& x, const SensingConfig<T>& cfg, std::uint64_t seed) {
  if (cfg.noise_sigma < T(0)) throw ValueError("simulate: noise sigma must be >= 0");
  Tensor<T> y = phi_forward(x, cfg);
  if (cfg.noise_sigma > T(0)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, double(cfg.noise_sigma));
    for (auto& v : y.values()) v += T(n(rng));
  }
  return y;
}

/// Replicates y into C bands and undoes the dispersion offset of each band:
/// band c is y[:, d c : d c + W].
template <class T>
Tensor<T> shift_back(const Tensor<T>& y, const SensingConfig<T>& cfg) {
  detail::check_measurement(y, cfg, "shift_back");
  const std::size_t h = cfg.height(), w = cfg.width(), c = cfg.bands, d = cfg.dispersion_step;
  const std::size_t wm = cfg.measurement_width();
  Tensor<T> x(cfg.cube_shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t b = 0; b < c; ++b) x.at(i, j, b) = y[i * wm + j + d * b];
  return x;
}

/// Places band c of an H x W x C cube at column offset d c inside an
/// H x (W + d (C-1)) x C cube (zeros elsewhere).
template <class T>
Tensor<T> shift(const Tensor<T>& x, std::size_t step) {
  if (x.rank() != 3) throw DimensionError("shift: expected H x W x C cube");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t wm = w + step * (c - 1);
  Tensor<T> out({h, wm, c});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t b = 0; b < c; ++b) out.at(i, j + step * b, b) = x.at(i, j, b);
  return out;
}

namespace ad {

template <class T>
Var<T> phi_forward(Var<T> x, const SensingConfig<T>& cfg) {
  return x.tape->record(hsci::phi_forward(x.value(), cfg), {x},
                        [ix = x.id, &cfg](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                          t.accumulate(ix, hsci::phi_adjoint(g, cfg));
                        });
}

template <class T>
Var<T> phi_adjoint(Var<T> y, const SensingConfig<T>& cfg) {
  return y.tape->record(hsci::phi_adjoint(y.value(), cfg), {y},
                        [iy = y.id, &cfg](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                          t.accumulate(iy, hsci::phi_forward(g, cfg));
                        });
}

/// r ./ (alpha + diag) with a learnable scalar alpha (shape [1]).
template <class T>
Var<T> divide_shifted(Var<T> r, Var<T> alpha, const Tensor<T>& diag) {
  require_same_shape(r.value(), diag, "divide_shifted");
  if (alpha.value().size() != 1) throw DimensionError("divide_shifted: alpha must be scalar");
  const T a = alpha.value()[0];
  if (!(a > T(0))) throw ValueError("data step: alpha must be > 0");
  Tensor<T> out = r.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= (a + diag[i]);
  return r.tape->record(std::move(out), {r, alpha},
                        [ir = r.id, ia = alpha.id, diag, a](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& out) {
                          if (t.requires_grad(ir)) {
                            Tensor<T> gr = g;
                            for (std::size_t i = 0; i < gr.size(); ++i) gr[i] /= (a + diag[i]);
                            t.accumulate(ir, gr);
                          }
                          if (t.requires_grad(ia)) {
                            T acc = 0;
                            for (std::size_t i = 0; i < g.size(); ++i) acc -= g[i] * out[i] / (a + diag[i]);
                            t.accumulate(ia, Tensor<T>({1}, acc));
                          }
                        });
}

}  // namespace ad
}  // namespace hsci
