#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "hsci/dct.hpp"

namespace hsci {

enum class SceneKind { rank1_smooth, piecewise_constant, cosine_modes, noise };

inline SceneKind parse_scene_kind(const std::string& s) {
  if (s == "rank1-smooth") return SceneKind::rank1_smooth;
  if (s == "piecewise-constant") return SceneKind::piecewise_constant;
  if (s == "cosine-modes") return SceneKind::cosine_modes;
  if (s == "noise") return SceneKind::noise;
  throw ValueError("unknown scene kind '" + s + "' (rank1-smooth | piecewise-constant | cosine-modes | noise)");
}

/// Synthetic stand-in for a hyperspectral scene. rho in [0, 1] controls
/// inter-band correlation (1 = bands fully determined by a shared pattern).
struct SceneSpec {
  SceneKind kind = SceneKind::rank1_smooth;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t bands = 28;
  std::uint64_t seed = 0;
  double rho = 0.9;
};

namespace detail {

inline void normalize_unit(Tensor<double>& x) {
  double lo = x[0], hi = x[0];
  for (double v : x.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  for (auto& v : x.values()) v = (v - lo) / span;
}

// Smooth positive spectral response in [0.2, 1].
inline double spectral_curve(double t, double phase, double freq) {
  return 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * freq * t + phase);
}

// Random field with DCT amplitude decaying as (1 + u + v)^-decay.
inline Tensor<double> power_law_field(std::size_t h, std::size_t w, double decay, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<double> coeffs({h, w, 1});
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) coeffs.at(u, v, 0) = n(rng) / std::pow(1.0 + double(u + v), decay);
  return dct2_inverse(Spectrogram<double>{coeffs});
}

}  // namespace detail

/// Deterministic synthetic cube with values in [0, 1].
template <class T = float>
Tensor<T> gen_scene(const SceneSpec& s) {
  if (s.height == 0 || s.width == 0 || s.bands == 0) throw ValueError("gen_scene: dimensions must be >= 1");
  if (s.rho < 0 || s.rho > 1) throw ValueError("gen_scene: rho must lie in [0, 1]");
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t h = s.height, w = s.width, c = s.bands;
  Tensor<double> x({h, w, c});
  switch (s.kind) {
    case SceneKind::rank1_smooth: {
      Tensor<double> base = detail::power_law_field(h, w, 1.5, rng);
      detail::normalize_unit(base);
      const double phase = unif(rng) * 2 * std::numbers::pi;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t b = 0; b < c; ++b) {
            const double gain = detail::spectral_curve(double(b) / double(c), phase, 0.7);
            x.at(i, j, b) = gain * base.at(i, j, 0) + (1.0 - s.rho) * 0.5 * gauss(rng);
          }
      detail::normalize_unit(x);
      break;
    }
    case SceneKind::piecewise_constant: {
      struct Region {
        std::size_t top, left, bottom, right;
        double phase, freq, level;
      };
      auto spectrum = [&] { return Region{0, 0, 0, 0, unif(rng) * 6.28, 0.3 + unif(rng), 0.3 + 0.6 * unif(rng)}; };
      Region bg = spectrum();
      bg.bottom = h;
      bg.right = w;
      std::vector<Region> regions{bg};
      const std::size_t count = 6;
      for (std::size_t r = 0; r < count; ++r) {
        Region g = spectrum();
        g.top = std::size_t(unif(rng) * double(h) * 0.75);
        g.left = std::size_t(unif(rng) * double(w) * 0.75);
        g.bottom = std::min(h, g.top + std::max<std::size_t>(2, std::size_t((0.15 + 0.35 * unif(rng)) * double(h))));
        g.right = std::min(w, g.left + std::max<std::size_t>(2, std::size_t((0.15 + 0.35 * unif(rng)) * double(w))));
        regions.push_back(g);
      }
      for (const auto& g : regions)
        for (std::size_t i = g.top; i < g.bottom; ++i)
          for (std::size_t j = g.left; j < g.right; ++j)
            for (std::size_t b = 0; b < c; ++b)
              x.at(i, j, b) = g.level * detail::spectral_curve(double(b) / double(c), g.phase, g.freq);
      if (s.rho < 1) {
        for (auto& v : x.values()) v = std::clamp(v + (1.0 - s.rho) * 0.05 * gauss(rng), 0.0, 1.0);
      }
      break;
    }
    case SceneKind::cosine_modes: {
      const std::size_t modes = 4;
      for (std::size_t m = 0; m < modes; ++m) {
        const std::size_t u = std::size_t(unif(rng) * double(std::min<std::size_t>(h, 8)));
        const std::size_t v = std::size_t(unif(rng) * double(std::min<std::size_t>(w, 8)));
        const double phase = unif(rng) * 6.28;
        for (std::size_t b = 0; b < c; ++b) {
          const double amp = detail::spectral_curve(double(b) / double(c), phase, 0.5);
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
              x.at(i, j, b) += amp * std::cos(std::numbers::pi * double(2 * i + 1) * double(u) / double(2 * h)) *
                               std::cos(std::numbers::pi * double(2 * j + 1) * double(v) / double(2 * w));
        }
      }
      for (auto& v : x.values()) v += (1.0 - s.rho) * 0.1 * gauss(rng);
      detail::normalize_unit(x);
      break;
    }
    case SceneKind::noise: {
      Tensor<double> shared({h, w});
      for (auto& v : shared.values()) v = unif(rng);
      for (std::size_t p = 0; p < h * w; ++p)
        for (std::size_t b = 0; b < c; ++b) x[p * c + b] = s.rho * shared[p] + (1.0 - s.rho) * unif(rng);
      break;
    }
  }
  return x.cast<T>();
}

}  // namespace hsci
