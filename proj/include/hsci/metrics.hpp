#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hsci/cmdt.hpp"
#include "hsci/dct.hpp"

namespace hsci {

/// Per-band values plus their mean.
struct BandScores {
  std::vector<double> band;
  double mean = 0;
};

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / MSE) per band; identical bands report kPsnrCap.
template <class T>
BandScores psnr(const Tensor<T>& pred, const Tensor<T>& ref, double peak = 1.0) {
  require_same_shape(pred, ref, "psnr");
  if (pred.rank() != 3) throw DimensionError("psnr: expected H x W x C cubes");
  const std::size_t hw = pred.dim(0) * pred.dim(1), c = pred.dim(2);
  BandScores s;
  for (std::size_t b = 0; b < c; ++b) {
    double se = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      const double d = double(pred[p * c + b]) - double(ref[p * c + b]);
      se += d * d;
    }
    const double mse = se / double(hw);
    s.band.push_back(mse == 0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse)));
  }
  for (double v : s.band) s.mean += v;
  s.mean /= double(c);
  return s;
}

namespace detail {
inline std::vector<double> gaussian_window(std::size_t n, double sigma) {
  std::vector<double> g(n * n);
  const double c = double(n - 1) / 2.0;
  double z = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double v = std::exp(-((double(i) - c) * (double(i) - c) + (double(j) - c) * (double(j) - c)) /
                                (2 * sigma * sigma));
      g[i * n + j] = v;
      z += v;
    }
  for (auto& v : g) v /= z;
  return g;
}
}  // namespace detail

/// Single-scale SSIM per band: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, statistics over the fully-covered (valid) window positions.
template <class T>
BandScores ssim(const Tensor<T>& pred, const Tensor<T>& ref, double peak = 1.0) {
  require_same_shape(pred, ref, "ssim");
  if (pred.rank() != 3) throw DimensionError("ssim: expected H x W x C cubes");
  constexpr std::size_t win = 11;
  const std::size_t h = pred.dim(0), w = pred.dim(1), c = pred.dim(2);
  if (h < win || w < win) throw DimensionError("ssim: bands smaller than the 11x11 window");
  const auto g = detail::gaussian_window(win, 1.5);
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  BandScores s;
  for (std::size_t b = 0; b < c; ++b) {
    double acc = 0;
    for (std::size_t i = 0; i + win <= h; ++i)
      for (std::size_t j = 0; j + win <= w; ++j) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (std::size_t a = 0; a < win; ++a)
          for (std::size_t e = 0; e < win; ++e) {
            const double gw = g[a * win + e];
            const double x = pred.at(i + a, j + e, b), y = ref.at(i + a, j + e, b);
            mx += gw * x;
            my += gw * y;
            xx += gw * x * x;
            yy += gw * y * y;
            xy += gw * x * y;
          }
        const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    s.band.push_back(acc / double((h - win + 1) * (w - win + 1)));
  }
  for (double v : s.band) s.mean += v;
  s.mean /= double(c);
  return s;
}

/// Frequency-domain gap: 100 * mean over bands and coefficients of
/// |DCT(pred) - DCT(ref)|. A DCT-magnitude stand-in, not comparable to
/// published FDG tables.
template <class T>
double fdg(const Tensor<T>& pred, const Tensor<T>& ref) {
  require_same_shape(pred, ref, "fdg");
  const auto a = dct2_forward(pred).coeffs;
  const auto b = dct2_forward(ref).coeffs;
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
  return 100.0 * s / double(a.size());
}

struct MetricReport {
  BandScores psnr;
  BandScores ssim;
  double fdg = 0;
};

template <class T>
MetricReport evaluate(const Tensor<T>& pred, const Tensor<T>& ref) {
  return {hsci::psnr(pred, ref), hsci::ssim(pred, ref), hsci::fdg(pred, ref)};
}

// ---------------------------------------------------------------------------
// Analytic parameter and FLOP accounting. Counts mirror the layer layout in
// cmdt.hpp exactly; tests compare them with enumerated parameters and with
// instrumented multiply-accumulate totals.

namespace count {

inline std::size_t saf_params(std::size_t c, std::size_t heads, bool with_out_conv = true) {
  const std::size_t d = c / heads;
  return 3 * c * c + heads * d * d + (with_out_conv ? c * c + c : 0);
}

inline std::size_t sif_params(std::size_t c) { return 3 * (c * c + c) + 9 * c + c; }

inline std::size_t space_params(std::size_t c, std::size_t heads, std::size_t k) {
  return 3 * c * c + heads * k * k * k * k + c * c + c;
}

inline std::size_t block_params(std::size_t c, std::size_t h, std::size_t w, const CmdtConfig& cfg) {
  const std::size_t hid = c * cfg.ffn_mult;
  return 2 * c + space_params(c, cfg.heads, cfg.window) + saf_params(c, cfg.heads) + sif_params(c) + h * w +
         (c * c + c) + 2 * c + (c * hid + hid) + (9 * hid + hid) + (hid * c + c);
}

inline std::size_t prior_params(const CmdtConfig& cfg) {
  const std::size_t c = cfg.bands, w = cfg.embed_width(), h = cfg.height, wd = cfg.width;
  return (9 * (c + 1) * w + w) + block_params(w, h, wd, cfg) + (16 * w * 2 * w + 2 * w) +
         block_params(2 * w, h / 2, wd / 2, cfg) + (4 * 2 * w * w + w) + (2 * w * w + w) +
         block_params(w, h, wd, cfg) + (9 * w * c + c);
}

inline std::size_t ipe_params(const CmdtConfig& cfg, std::size_t stages) {
  const std::size_t hid = cfg.ipe_hidden;
  return 9 * 2 * cfg.bands * hid + hid + hid * 2 * stages + 2 * stages;
}

}  // namespace count

/// Learnable parameter count of a K-stage network.
inline std::size_t count_params(const CmdtConfig& cfg, std::size_t stages, bool share) {
  return count::ipe_params(cfg, stages) + (share ? 1 : stages) * count::prior_params(cfg);
}

namespace count {

// Multiply-accumulates of one CMDT block at h x w with c channels.
inline std::uint64_t block_macs(std::size_t c, std::size_t h, std::size_t w, const CmdtConfig& cfg) {
  const std::uint64_t hw = std::uint64_t(h) * w, k2 = cfg.window * cfg.window, d = c / cfg.heads;
  const std::uint64_t hid = c * cfg.ffn_mult;
  const std::uint64_t space = 3 * hw * c * c + 2 * hw * k2 * c + hw * c * c;
  const std::uint64_t dct = 2 * hw * c * (h + w);
  const std::uint64_t saf = 3 * hw * c * c + 2 * hw * c * d + hw * c * c;
  const std::uint64_t sif = 3 * hw * c * c + 9 * hw * c;
  const std::uint64_t proj = hw * c * c;
  const std::uint64_t ffn = 2 * hw * c * hid + 9 * hw * hid;
  return space + dct + saf + sif + proj + ffn;
}

inline std::uint64_t prior_macs(const CmdtConfig& cfg, std::size_t h, std::size_t w) {
  const std::uint64_t hw = std::uint64_t(h) * w, c = cfg.bands, e = cfg.embed_width();
  return 9 * hw * (c + 1) * e + block_macs(e, h, w, cfg) + (hw / 4) * 16 * e * 2 * e +
         block_macs(2 * e, h / 2, w / 2, cfg) + hw * 2 * e * e + hw * 2 * e * e + block_macs(e, h, w, cfg) +
         9 * hw * e * c;
}

inline std::uint64_t ipe_macs(const CmdtConfig& cfg, std::size_t stages, std::size_t h, std::size_t w) {
  return std::uint64_t(h) * w * 9 * 2 * cfg.bands * cfg.ipe_hidden + cfg.ipe_hidden * 2 * stages;
}

}  // namespace count

/// Forward FLOPs (2 per multiply-accumulate of dense products, convolutions
/// and DCTs) for reconstructing an h x w cube.
inline double count_flops(const CmdtConfig& cfg, std::size_t stages, std::size_t h, std::size_t w) {
  return 2.0 * double(count::ipe_macs(cfg, stages, h, w) + stages * count::prior_macs(cfg, h, w));
}

}  // namespace hsci
