#pragma once

#include <cmath>
#include <limits>
#include <ostream>

#include "hsci/cassi.hpp"

namespace hsci {

struct GapTvConfig {
  std::size_t iterations = 100;
  double tv_weight = 0.07;
  std::size_t tv_inner_iters = 5;

  void validate() const {
    if (iterations == 0 || tv_inner_iters == 0 || !(tv_weight > 0)) {
      throw ValueError("gap-tv: iterations, tv weight and inner iterations must be positive");
    }
  }
};

/// Approximate argmin_u 0.5 ||u - f||^2 + lambda (sum |dx u| + sum |dy u|)
/// by projected gradient on the dual (|p| <= 1 elementwise, step 1/8).
/// Forward differences with Neumann boundary.
template <class T>
Tensor<T> tv_denoise(const Tensor<T>& band, double lambda, std::size_t iters) {
  if (band.rank() != 2) throw DimensionError("tv_denoise: expected an H x W band");
  if (!(lambda > 0)) throw ValueError("tv_denoise: lambda must be > 0");
  const std::size_t h = band.dim(0), w = band.dim(1);
  std::vector<double> px(h * w, 0.0), py(h * w, 0.0), u(h * w);
  auto reconstruct = [&] {
    // u = f + lambda * div(p), div the negative adjoint of the forward difference
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t q = i * w + j;
        double div = 0;
        div += (j + 1 < w ? px[q] : 0.0) - (j > 0 ? px[q - 1] : 0.0);
        div += (i + 1 < h ? py[q] : 0.0) - (i > 0 ? py[q - w] : 0.0);
        u[q] = double(band[q]) + lambda * div;
      }
  };
  const double step = 1.0 / (8.0 * lambda);
  for (std::size_t it = 0; it < iters; ++it) {
    reconstruct();
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t q = i * w + j;
        const double gx = j + 1 < w ? u[q + 1] - u[q] : 0.0;
        const double gy = i + 1 < h ? u[q + w] - u[q] : 0.0;
        px[q] = std::clamp(px[q] + step * gx, -1.0, 1.0);
        py[q] = std::clamp(py[q] + step * gy, -1.0, 1.0);
      }
  }
  reconstruct();
  Tensor<T> out({h, w});
  for (std::size_t q = 0; q < h * w; ++q) out[q] = T(u[q]);
  return out;
}

struct GapTvResult {
  std::size_t iterations_run = 0;
  bool diverged = false;
};

/// Generalized alternating projection with band-wise TV denoising:
/// x = z + Phi^T((y - Phi z) ./ max(diag, 1e-6)), z = TV(x).
/// Stops early and returns the best iterate if the residual grows 10x over
/// its running minimum.
template <class T>
Tensor<T> gap_tv(const Tensor<T>& y, const SensingConfig<T>& cfg, const GapTvConfig& g,
                 GapTvResult* info = nullptr, std::ostream* warn = nullptr) {
  g.validate();
  Tensor<T> diag = phi_phit_diag(cfg);
  for (auto& v : diag.values()) v = std::max(v, T(1e-6));
  auto residual = [&](const Tensor<T>& z) {
    const Tensor<T> pz = phi_forward(z, cfg);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (double(y[i]) - double(pz[i])) * (double(y[i]) - double(pz[i]));
    return std::sqrt(s);
  };
  Tensor<T> z(cfg.cube_shape());
  Tensor<T> best = z;
  double best_res = residual(z);
  const std::size_t h = cfg.height(), w = cfg.width(), c = cfg.bands;
  GapTvResult res;
  for (std::size_t it = 0; it < g.iterations; ++it) {
    const Tensor<T> pz = phi_forward(z, cfg);
    Tensor<T> r = y;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = (r[i] - pz[i]) / diag[i];
    Tensor<T> x = phi_adjoint(r, cfg);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += z[i];
    for (std::size_t b = 0; b < c; ++b) {
      Tensor<T> band({h, w});
      for (std::size_t p = 0; p < h * w; ++p) band[p] = x[p * c + b];
      const Tensor<T> d = tv_denoise(band, g.tv_weight, g.tv_inner_iters);
      for (std::size_t p = 0; p < h * w; ++p) z[p * c + b] = d[p];
    }
    res.iterations_run = it + 1;
    const double rr = residual(z);
    if (rr <= best_res) {
      best_res = rr;
      best = z;
    } else if (rr > 10.0 * best_res && best_res > 0) {
      res.diverged = true;
      if (warn) *warn << "gap-tv: residual diverged at iteration " << it + 1 << ", returning best iterate\n";
      break;
    }
  }
  if (info) *info = res;
  return res.diverged ? best : z;
}

}  // namespace hsci
