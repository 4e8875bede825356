#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsci/dct.hpp"

namespace hsci {

/// Pearson correlation, clamped to [-1, 1]. Returns nullopt when either
/// vector is constant (correlation undefined).
template <class T>
std::optional<double> try_pearson(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw DimensionError("pearson: vectors must have equal length >= 2");
  }
  auto constant = [](auto v) { return std::all_of(v.begin(), v.end(), [&](T e) { return e == v[0]; }); };
  if (constant(a) || constant(b)) return std::nullopt;
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += double(a[i]);
    mb += double(b[i]);
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = double(a[i]) - ma, db = double(b[i]) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

template <class T>
double pearson(std::span<const T> a, std::span<const T> b) {
  auto r = try_pearson(a, b);
  if (!r) throw ValueError("pearson: correlation undefined for a constant vector");
  return *r;
}

/// Spectral correlation maps in space and frequency domains. Undefined
/// entries (constant bands) are NaN and excluded from the averages.
struct CorrelationReport {
  Tensor<double> space_map;  // C x C
  Tensor<double> freq_map;   // C x C
  double space_avg = 0;
  double freq_avg = 0;
  std::size_t space_missing = 0;
  std::size_t freq_missing = 0;
};

namespace detail {

template <class T>
std::vector<std::vector<double>> band_vectors(const Tensor<T>& x) {
  const std::size_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
  std::vector<std::vector<double>> v(c, std::vector<double>(hw));
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t b = 0; b < c; ++b) v[b][p] = double(x[p * c + b]);
  return v;
}

inline Tensor<double> correlation_matrix(const std::vector<std::vector<double>>& v, double& avg,
                                         std::size_t& missing) {
  const std::size_t c = v.size();
  Tensor<double> m({c, c});
  double sum = 0;
  std::size_t n = 0;
  missing = 0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i; j < c; ++j) {
      const auto r = try_pearson<double>(v[i], v[j]);
      const double val = r ? *r : std::numeric_limits<double>::quiet_NaN();
      m.at(i, j) = m.at(j, i) = val;
      const std::size_t mult = i == j ? 1 : 2;
      if (r) {
        sum += mult * val;
        n += mult;
      } else {
        missing += mult;
      }
    }
  avg = n ? sum / double(n) : std::numeric_limits<double>::quiet_NaN();
  return m;
}

}  // namespace detail

/// Pearson map between vectorized bands of x (space) and of its per-band
/// DCT (frequency); averages over all C^2 entries.
template <class T>
CorrelationReport correlation_maps(const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(2) < 2) throw DimensionError("correlation_maps: need an H x W x C cube with C >= 2");
  if (x.dim(0) * x.dim(1) < 2) throw DimensionError("correlation_maps: need at least two pixels");
  CorrelationReport r;
  r.space_map = detail::correlation_matrix(detail::band_vectors(x), r.space_avg, r.space_missing);
  r.freq_map = detail::correlation_matrix(detail::band_vectors(dct2_forward(x).coeffs), r.freq_avg, r.freq_missing);
  return r;
}

struct TokenCorrelationCurve {
  std::size_t token_size = 0;
  std::vector<std::size_t> u, v;  // top-left DCT coordinate of each token
  std::vector<double> mean_corr;  // ordered low -> high frequency
};

/// Frequency tokens of size K x K ordered by ascending u + v of their
/// top-left coefficient (ties by u). For each token: mean pairwise Pearson
/// between its C spectral slices (each K^2 long). Pairs with undefined
/// correlation are skipped; a token with no defined pair reports NaN.
template <class T>
TokenCorrelationCurve token_correlation(const Tensor<T>& x, std::size_t k) {
  if (x.rank() != 3 || x.dim(2) < 2) throw DimensionError("token_correlation: need C >= 2");
  if (k == 0 || x.dim(0) % k != 0 || x.dim(1) % k != 0) {
    throw DimensionError("token_correlation: token size " + std::to_string(k) + " must divide " +
                         shape_str(x.shape()));
  }
  if (k * k < 2) throw DimensionError("token_correlation: tokens need at least two coefficients");
  const Tensor<T> f = dct2_forward(x).coeffs;
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  struct Tok {
    std::size_t u, v;
  };
  std::vector<Tok> toks;
  for (std::size_t u = 0; u < h; u += k)
    for (std::size_t v = 0; v < w; v += k) toks.push_back({u, v});
  std::stable_sort(toks.begin(), toks.end(), [](const Tok& a, const Tok& b) {
    return a.u + a.v != b.u + b.v ? a.u + a.v < b.u + b.v : a.u < b.u;
  });
  TokenCorrelationCurve curve;
  curve.token_size = k;
  for (const auto& t : toks) {
    std::vector<std::vector<double>> slices(c, std::vector<double>(k * k));
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) slices[ch][a * k + b] = double(f.at(t.u + a, t.v + b, ch));
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = i + 1; j < c; ++j) {
        if (auto r = try_pearson<double>(slices[i], slices[j])) {
          sum += *r;
          ++n;
        }
      }
    curve.u.push_back(t.u);
    curve.v.push_back(t.v);
    curve.mean_corr.push_back(n ? sum / double(n) : std::numeric_limits<double>::quiet_NaN());
  }
  return curve;
}

/// Fixed-range histogram over [lo, hi]; the top edge falls in the last bin.
struct Histogram {
  double lo = -1, hi = 1;
  std::vector<std::size_t> counts;

  Histogram(std::size_t bins = 50, double lo_ = -1, double hi_ = 1) : lo(lo_), hi(hi_), counts(bins, 0) {}

  std::size_t bin_of(double v) const {
    const double t = (v - lo) / (hi - lo) * double(counts.size());
    if (t <= 0) return 0;
    return std::min(counts.size() - 1, std::size_t(t));
  }
  void add(double v) {
    if (std::isfinite(v)) ++counts[bin_of(v)];
  }
  double bin_lo(std::size_t i) const { return lo + (hi - lo) * double(i) / double(counts.size()); }
  double bin_hi(std::size_t i) const { return lo + (hi - lo) * double(i + 1) / double(counts.size()); }
};

/// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> a, std::span<const double> b) {
  auto ranks = [](std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
      const double avg = (double(i) + double(j)) / 2.0 + 1.0;
      for (std::size_t q = i; q <= j; ++q) r[idx[q]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  return pearson<double>(ra, rb);
}

}  // namespace hsci
