#pragma once

#include <cmath>
#include <map>
#include <numbers>

#include "hsci/autodiff.hpp"

namespace hsci {

/// Band-wise 2D DCT-II coefficients of an H x W x C cube.
template <class T>
struct Spectrogram {
  Tensor<T> coeffs;

  std::size_t height() const { return coeffs.dim(0); }
  std::size_t width() const { return coeffs.dim(1); }
  std::size_t bands() const { return coeffs.dim(2); }
};

/// Orthonormal DCT-II basis, row u holds frequency u sampled at i = 0..n-1.
template <class T>
const Tensor<T>& dct_basis(std::size_t n) {
  thread_local std::map<std::size_t, Tensor<T>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Tensor<T> d({n, n});
  const double s0 = std::sqrt(1.0 / double(n));
  const double s1 = std::sqrt(2.0 / double(n));
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = std::cos(std::numbers::pi * double(2 * i + 1) * double(u) / double(2 * n));
      d.at(u, i) = T((u == 0 ? s0 : s1) * v);
    }
  }
  return cache.emplace(n, std::move(d)).first->second;
}

namespace detail {

// Applies D_H (or its transpose) along rows and D_W along columns of every
// band of an H x W x C tensor.
template <class T>
Tensor<T> dct2_apply(const Tensor<T>& x, bool inverse) {
  if (x.rank() != 3) throw DimensionError("dct2: expected an H x W x C cube, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const auto& dh = dct_basis<T>(h);
  const auto& dw = dct_basis<T>(w);
  Tensor<T> tmp(x.shape());
  kernel::gemm(inverse, false, h, w * c, h, dh.data(), x.data(), tmp.data(), false);
  Tensor<T> out(x.shape());
  for (std::size_t u = 0; u < h; ++u) {
    kernel::gemm(inverse, false, w, c, w, dw.data(), tmp.data() + u * w * c, out.data() + u * w * c, false);
  }
  return out;
}

}  // namespace detail

/// Forward orthonormal 2D DCT-II of each band. Coefficient (0,0) of a band is
/// mean(band) * sqrt(H*W).
template <class T>
Spectrogram<T> dct2_forward(const Tensor<T>& cube) {
  if (!cube.all_finite()) throw ValueError("dct2_forward: input contains non-finite values");
  return {detail::dct2_apply(cube, false)};
}

/// Inverse (DCT-III) transform; exact inverse of dct2_forward.
template <class T>
Tensor<T> dct2_inverse(const Spectrogram<T>& f) {
  return detail::dct2_apply(f.coeffs, true);
}

/// Reference O(H^2 W^2) evaluation of the orthonormal 2D DCT-II on one
/// H x W band stored row-major. Kept for cross-checks and tools.
template <class T>
Tensor<T> dct2_naive(const Tensor<T>& band) {
  const std::size_t h = band.dim(0), w = band.dim(1);
  Tensor<T> out({h, w});
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      double s = 0;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          s += double(band.at(i, j)) * std::cos(std::numbers::pi * double(2 * i + 1) * double(u) / double(2 * h)) *
               std::cos(std::numbers::pi * double(2 * j + 1) * double(v) / double(2 * w));
      const double au = u == 0 ? std::sqrt(1.0 / double(h)) : std::sqrt(2.0 / double(h));
      const double av = v == 0 ? std::sqrt(1.0 / double(w)) : std::sqrt(2.0 / double(w));
      out.at(u, v) = T(au * av * s);
    }
  }
  return out;
}

namespace ad {

// Orthonormality makes the adjoint of each transform its inverse.
template <class T>
Var<T> dct2(Var<T> x) {
  return x.tape->record(hsci::detail::dct2_apply(x.value(), false), {x},
                        [ix = x.id](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                          t.accumulate(ix, hsci::detail::dct2_apply(g, true));
                        });
}

template <class T>
Var<T> idct2(Var<T> x) {
  return x.tape->record(hsci::detail::dct2_apply(x.value(), true), {x},
                        [ix = x.id](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                          t.accumulate(ix, hsci::detail::dct2_apply(g, false));
                        });
}

}  // namespace ad
}  // namespace hsci
