#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "hsci/autodiff.hpp"

// Differentiable layers over H x W x C feature maps.
namespace hsci::ad {

enum class Padding { same, valid };

struct ConvSpec {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;
};

namespace detail {

struct ConvGeom {
  std::size_t h, w, cin, kh, kw, cin_g, cout, cout_g, oh, ow, stride, pad, groups;
};

template <class T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& k, const ConvSpec& s) {
  if (x.rank() != 3 || k.rank() != 4) {
    throw DimensionError("conv2d: expected x[H,W,C] and k[kh,kw,Cin/g,Cout], got " + shape_str(x.shape()) +
                         " and " + shape_str(k.shape()));
  }
  ConvGeom g{};
  g.h = x.dim(0);
  g.w = x.dim(1);
  g.cin = x.dim(2);
  g.kh = k.dim(0);
  g.kw = k.dim(1);
  g.cin_g = k.dim(2);
  g.cout = k.dim(3);
  g.stride = s.stride;
  g.pad = s.pad;
  g.groups = s.groups;
  if (s.groups == 0 || g.cin % s.groups != 0 || g.cout % s.groups != 0 || g.cin / s.groups != g.cin_g) {
    throw DimensionError("conv2d: channel/group mismatch, input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(k.shape()) + ", groups " + std::to_string(s.groups));
  }
  g.cout_g = g.cout / s.groups;
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw || s.stride == 0) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

}  // namespace detail

/// Plain cross-correlation (no flip) over H x W x C input.
template <class T>
Tensor<T> conv2d_value(const Tensor<T>& x, const Tensor<T>& k, const ConvSpec& s) {
  const auto g = detail::conv_geometry(x, k, s);
  Tensor<T> out({g.oh, g.ow, g.cout});
  MacCounter::add(std::uint64_t(g.oh) * g.ow * g.kh * g.kw * g.cin_g * g.cout);
  const T* xd = x.data();
  const T* kd = k.data();
  T* od = out.data();
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      T* op = od + (oy * g.ow + ox) * g.cout;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
        if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
          if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
          const T* xp = xd + (std::size_t(iy) * g.w + std::size_t(ix)) * g.cin;
          const T* kp = kd + (ky * g.kw + kx) * g.cin_g * g.cout;
          if (g.cin_g == 1 && g.cout_g == 1) {
            for (std::size_t ch = 0; ch < g.cout; ++ch) op[ch] += xp[ch] * kp[ch];
            continue;
          }
          for (std::size_t gr = 0; gr < g.groups; ++gr) {
            for (std::size_t icl = 0; icl < g.cin_g; ++icl) {
              const T xv = xp[gr * g.cin_g + icl];
              const T* wr = kp + icl * g.cout + gr * g.cout_g;
              T* o = op + gr * g.cout_g;
              for (std::size_t oc = 0; oc < g.cout_g; ++oc) o[oc] += xv * wr[oc];
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> k, ConvSpec s) {
  Tensor<T> out = conv2d_value(x.value(), k.value(), s);
  return x.tape->record(std::move(out), {x, k}, [ix = x.id, ik = k.id, s](Tape<T>& t, const Tensor<T>& gout, const Tensor<T>&) {
    const auto& xv = t.value(ix);
    const auto& kv = t.value(ik);
    const auto g = detail::conv_geometry(xv, kv, s);
    const bool need_x = t.requires_grad(ix), need_k = t.requires_grad(ik);
    Tensor<T> gx = need_x ? Tensor<T>(xv.shape()) : Tensor<T>();
    Tensor<T> gk = need_k ? Tensor<T>(kv.shape()) : Tensor<T>();
    // kernel reordered to [kh, kw, cout, cin_g] so the input gradient is an axpy over cin_g
    std::vector<T> kt;
    if (need_x) {
      kt.resize(kv.size());
      for (std::size_t tap = 0; tap < g.kh * g.kw; ++tap)
        for (std::size_t icl = 0; icl < g.cin_g; ++icl)
          for (std::size_t oc = 0; oc < g.cout; ++oc)
            kt[(tap * g.cout + oc) * g.cin_g + icl] = kv[(tap * g.cin_g + icl) * g.cout + oc];
    }
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const T* gp = gout.data() + (oy * g.ow + ox) * g.cout;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
          if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t ixx = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
            if (ixx < 0 || ixx >= std::ptrdiff_t(g.w)) continue;
            const std::size_t xoff = (std::size_t(iy) * g.w + std::size_t(ixx)) * g.cin;
            const std::size_t koff = (ky * g.kw + kx) * g.cin_g * g.cout;
            if (g.cin_g == 1 && g.cout_g == 1) {
              if (need_x) {
                T* gxp = gx.data() + xoff;
                const T* kp = kv.data() + koff;
                for (std::size_t ch = 0; ch < g.cout; ++ch) gxp[ch] += gp[ch] * kp[ch];
              }
              if (need_k) {
                T* gw = gk.data() + koff;
                const T* xp = xv.data() + xoff;
                for (std::size_t ch = 0; ch < g.cout; ++ch) gw[ch] += xp[ch] * gp[ch];
              }
              continue;
            }
            for (std::size_t gr = 0; gr < g.groups; ++gr) {
              const T* go = gp + gr * g.cout_g;
              if (need_x) {
                T* gxp = gx.data() + xoff + gr * g.cin_g;
                const T* kr = kt.data() + ((ky * g.kw + kx) * g.cout + gr * g.cout_g) * g.cin_g;
                for (std::size_t oc = 0; oc < g.cout_g; ++oc) {
                  const T gv = go[oc];
                  const T* row = kr + oc * g.cin_g;
                  for (std::size_t icl = 0; icl < g.cin_g; ++icl) gxp[icl] += gv * row[icl];
                }
              }
              for (std::size_t icl = 0; icl < g.cin_g; ++icl) {
                const std::size_t wo = koff + icl * g.cout + gr * g.cout_g;
                if (need_k) {
                  const T xvv = xv[xoff + gr * g.cin_g + icl];
                  T* gw = gk.data() + wo;
                  for (std::size_t oc = 0; oc < g.cout_g; ++oc) gw[oc] += xvv * go[oc];
                }
              }
            }
          }
        }
      }
    }
    if (need_x) t.accumulate(ix, gx);
    if (need_k) t.accumulate(ik, gk);
  });
}

/// Stride-1 convolution with same (odd kernel) or valid padding.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> k, std::size_t groups, Padding padding) {
  const std::size_t kh = k.dim(0), kw = k.dim(1);
  if (padding == Padding::same && (kh % 2 == 0 || kw % 2 == 0 || kh != kw)) {
    throw DimensionError("conv2d: same padding requires a square odd kernel");
  }
  return conv2d(x, k, ConvSpec{1, padding == Padding::same ? kh / 2 : 0, groups});
}

/// Transposed convolution with a 2x2 kernel and stride 2 (exact 2x upsampling).
/// k has shape [2,2,Cin,Cout].
template <class T>
Var<T> conv_transpose2x2(Var<T> x, Var<T> k) {
  const auto& xv = x.value();
  const auto& kv = k.value();
  if (xv.rank() != 3 || kv.rank() != 4 || kv.dim(0) != 2 || kv.dim(1) != 2 || kv.dim(2) != xv.dim(2)) {
    throw DimensionError("conv_transpose2x2: bad shapes " + shape_str(xv.shape()) + ", " + shape_str(kv.shape()));
  }
  const std::size_t h = xv.dim(0), w = xv.dim(1), cin = xv.dim(2), cout = kv.dim(3);
  Tensor<T> out({2 * h, 2 * w, cout});
  MacCounter::add(std::uint64_t(4) * h * w * cin * cout);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) {
          T* op = out.data() + ((2 * i + a) * 2 * w + (2 * j + b)) * cout;
          const T* xp = xv.data() + (i * w + j) * cin;
          const T* kp = kv.data() + (a * 2 + b) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T v = xp[ci];
            for (std::size_t co = 0; co < cout; ++co) op[co] += v * kp[ci * cout + co];
          }
        }
  return x.tape->record(std::move(out), {x, k}, [ix = x.id, ik = k.id, h, w, cin, cout](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    const auto& xv = t.value(ix);
    const auto& kv = t.value(ik);
    const bool need_x = t.requires_grad(ix), need_k = t.requires_grad(ik);
    Tensor<T> gx = need_x ? Tensor<T>(xv.shape()) : Tensor<T>();
    Tensor<T> gk = need_k ? Tensor<T>(kv.shape()) : Tensor<T>();
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            const T* gp = g.data() + ((2 * i + a) * 2 * w + (2 * j + b)) * cout;
            const std::size_t xo = (i * w + j) * cin;
            const std::size_t ko = (a * 2 + b) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              if (need_x) {
                T acc = 0;
                for (std::size_t co = 0; co < cout; ++co) acc += gp[co] * kv[ko + ci * cout + co];
                gx[xo + ci] += acc;
              }
              if (need_k) {
                const T v = xv[xo + ci];
                for (std::size_t co = 0; co < cout; ++co) gk[ko + ci * cout + co] += v * gp[co];
              }
            }
          }
    if (need_x) t.accumulate(ix, gx);
    if (need_k) t.accumulate(ik, gk);
  });
}

/// Adds a per-channel bias b[C] to x[..., C].
template <class T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  const std::size_t c = b.value().size();
  if (x.shape().back() != c) {
    throw DimensionError("add_bias: channel count " + std::to_string(x.shape().back()) + " vs bias " +
                         std::to_string(c));
  }
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i % c];
  return x.tape->record(std::move(out), {x, b}, [ix = x.id, ib = b.id, c](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) {
      Tensor<T> gb(t.value(ib).shape());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
      t.accumulate(ib, gb);
    }
  });
}

/// Layer normalization over the last (channel) axis with affine scale/shift.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const std::size_t c = xv.shape().back();
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(c) + " entries");
  }
  const std::size_t rows = xv.size() / c;
  Tensor<T> xhat(xv.shape());
  std::vector<T> inv_std(rows);
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = xv.data() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += p[j];
    mu /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (p[j] - mu) * (p[j] - mu);
    var /= T(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T xh = (p[j] - mu) * is;
      xhat[r * c + j] = xh;
      out[r * c + j] = gamma.value()[j] * xh + beta.value()[j];
    }
  }
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [ix = x.id, ig = gamma.id, ib = beta.id, c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const auto& gam = t.value(ig);
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          Tensor<T> gg(gam.shape()), gb(gam.shape());
          for (std::size_t i = 0; i < g.size(); ++i) {
            gg[i % c] += g[i] * xhat[i];
            gb[i % c] += g[i];
          }
          t.accumulate(ig, gg);
          t.accumulate(ib, gb);
        }
        if (t.requires_grad(ix)) {
          Tensor<T> gx(t.value(ix).shape());
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gam[j];
              m1 += d;
              m2 += d * xhat[r * c + j];
            }
            m1 /= T(c);
            m2 /= T(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gam[j];
              gx[r * c + j] = inv_std[r] * (d - m1 - xhat[r * c + j] * m2);
            }
          }
          t.accumulate(ix, gx);
        }
      });
}

namespace detail {
// Index map from H x W x C into [n, K*K, C] token layout.
inline std::size_t token_offset(std::size_t i, std::size_t j, std::size_t w, std::size_t k, std::size_t c) {
  const std::size_t tok = (i / k) * (w / k) + (j / k);
  const std::size_t pos = (i % k) * k + (j % k);
  return (tok * k * k + pos) * c;
}
}  // namespace detail

/// Splits x[H,W,C] into non-overlapping K x K windows: [HW/K^2, K^2, C].
/// Windows are numbered row-major, positions within a window row-major.
template <class T>
Var<T> to_tokens(Var<T> x, std::size_t k) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || k == 0 || xv.dim(0) % k != 0 || xv.dim(1) % k != 0) {
    throw DimensionError("to_tokens: window " + std::to_string(k) + " must divide spatial dims of " +
                         shape_str(xv.shape()));
  }
  const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  Tensor<T> out({h * w / (k * k), k * k, c});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const T* src = xv.data() + (i * w + j) * c;
      std::copy(src, src + c, out.data() + detail::token_offset(i, j, w, k, c));
    }
  return x.tape->record(std::move(out), {x}, [ix = x.id, h, w, c, k](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> gx({h, w, c});
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const T* src = g.data() + detail::token_offset(i, j, w, k, c);
        std::copy(src, src + c, gx.data() + (i * w + j) * c);
      }
    t.accumulate(ix, gx);
  });
}

/// Inverse of to_tokens.
template <class T>
Var<T> from_tokens(Var<T> x, std::size_t h, std::size_t w, std::size_t k) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || xv.dim(1) != k * k || xv.dim(0) * k * k != h * w) {
    throw DimensionError("from_tokens: shape " + shape_str(xv.shape()) + " inconsistent with " +
                         std::to_string(h) + "x" + std::to_string(w) + " window " + std::to_string(k));
  }
  const std::size_t c = xv.dim(2);
  Tensor<T> out({h, w, c});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const T* src = xv.data() + detail::token_offset(i, j, w, k, c);
      std::copy(src, src + c, out.data() + (i * w + j) * c);
    }
  return x.tape->record(std::move(out), {x}, [ix = x.id, h, w, c, k](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> gx(t.value(ix).shape());
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const T* src = g.data() + (i * w + j) * c;
        std::copy(src, src + c, gx.data() + detail::token_offset(i, j, w, k, c));
      }
    t.accumulate(ix, gx);
  });
}

/// [B, N, C] -> [B*heads, N, C/heads], head-major within each batch entry.
template <class T>
Var<T> split_heads(Var<T> x, std::size_t heads) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || heads == 0 || xv.dim(2) % heads != 0) {
    throw DimensionError("split_heads: " + std::to_string(heads) + " heads do not divide " + shape_str(xv.shape()));
  }
  const std::size_t b = xv.dim(0), n = xv.dim(1), c = xv.dim(2), d = c / heads;
  Tensor<T> out({b * heads, n, d});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t hh = 0; hh < heads; ++hh)
        for (std::size_t j = 0; j < d; ++j)
          out[((bi * heads + hh) * n + r) * d + j] = xv[(bi * n + r) * c + hh * d + j];
  return x.tape->record(std::move(out), {x}, [ix = x.id, b, n, c, d, heads](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> gx({b, n, c});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t hh = 0; hh < heads; ++hh)
          for (std::size_t j = 0; j < d; ++j)
            gx[(bi * n + r) * c + hh * d + j] = g[((bi * heads + hh) * n + r) * d + j];
    t.accumulate(ix, gx);
  });
}

/// Inverse of split_heads.
template <class T>
Var<T> merge_heads(Var<T> x, std::size_t heads) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || heads == 0 || xv.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: bad shape " + shape_str(xv.shape()));
  }
  const std::size_t b = xv.dim(0) / heads, n = xv.dim(1), d = xv.dim(2), c = d * heads;
  Tensor<T> out({b, n, c});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t hh = 0; hh < heads; ++hh)
        for (std::size_t j = 0; j < d; ++j)
          out[(bi * n + r) * c + hh * d + j] = xv[((bi * heads + hh) * n + r) * d + j];
  return x.tape->record(std::move(out), {x}, [ix = x.id, b, n, c, d, heads](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> gx({b * heads, n, d});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t hh = 0; hh < heads; ++hh)
          for (std::size_t j = 0; j < d; ++j)
            gx[((bi * heads + hh) * n + r) * d + j] = g[(bi * n + r) * c + hh * d + j];
    t.accumulate(ix, gx);
  });
}

/// Adds a per-head bias p[heads, R, S] to every batch entry of x[B*heads, R, S].
template <class T>
Var<T> add_head_bias(Var<T> x, Var<T> p) {
  const auto& xv = x.value();
  const auto& pv = p.value();
  if (xv.rank() != 3 || pv.rank() != 3 || xv.dim(1) != pv.dim(1) || xv.dim(2) != pv.dim(2) ||
      xv.dim(0) % pv.dim(0) != 0) {
    throw DimensionError("add_head_bias: bias " + shape_str(pv.shape()) + " incompatible with " +
                         shape_str(xv.shape()));
  }
  const std::size_t blk = pv.size();
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pv[i % blk];
  return x.tape->record(std::move(out), {x, p}, [ix = x.id, ip = p.id, blk](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    t.accumulate(ix, g);
    if (t.requires_grad(ip)) {
      Tensor<T> gp(t.value(ip).shape());
      for (std::size_t i = 0; i < g.size(); ++i) gp[i % blk] += g[i];
      t.accumulate(ip, gp);
    }
  });
}

/// Channel concatenation of two H x W feature maps.
template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1)) {
    throw DimensionError("concat_channels: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t hw = av.dim(0) * av.dim(1), ca = av.dim(2), cb = bv.dim(2);
  Tensor<T> out({av.dim(0), av.dim(1), ca + cb});
  for (std::size_t p = 0; p < hw; ++p) {
    std::copy(av.data() + p * ca, av.data() + (p + 1) * ca, out.data() + p * (ca + cb));
    std::copy(bv.data() + p * cb, bv.data() + (p + 1) * cb, out.data() + p * (ca + cb) + ca);
  }
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id, hw, ca, cb](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    if (t.requires_grad(ia)) {
      Tensor<T> ga(t.value(ia).shape());
      for (std::size_t p = 0; p < hw; ++p)
        std::copy(g.data() + p * (ca + cb), g.data() + p * (ca + cb) + ca, ga.data() + p * ca);
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Tensor<T> gb(t.value(ib).shape());
      for (std::size_t p = 0; p < hw; ++p)
        std::copy(g.data() + p * (ca + cb) + ca, g.data() + (p + 1) * (ca + cb), gb.data() + p * cb);
      t.accumulate(ib, gb);
    }
  });
}

/// Broadcasts a shape-[1] scalar into an H x W x 1 plane.
template <class T>
Var<T> broadcast_plane(Var<T> s, std::size_t h, std::size_t w) {
  if (s.value().size() != 1) throw DimensionError("broadcast_plane: expected a scalar");
  return s.tape->record(Tensor<T>({h, w, 1}, s.value()[0]), {s}, [is = s.id](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    T acc = 0;
    for (T v : g.values()) acc += v;
    t.accumulate(is, Tensor<T>({1}, acc));
  });
}

/// Spatial mean of x[H,W,C] -> [1, C].
template <class T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw DimensionError("global_avg_pool: expected H x W x C");
  const std::size_t hw = xv.dim(0) * xv.dim(1), c = xv.dim(2);
  Tensor<T> out({1, c});
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[p * c + j];
  for (auto& v : out.values()) v /= T(hw);
  return x.tape->record(std::move(out), {x}, [ix = x.id, hw, c](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> gx(t.value(ix).shape());
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t j = 0; j < c; ++j) gx[p * c + j] = g[j] / T(hw);
    t.accumulate(ix, gx);
  });
}

/// Per-pixel sigmoid gate: out = s * a + (1 - s) * b with s = sigmoid(logits),
/// logits[H,W] repeated along the channel axis.
template <class T>
Var<T> gate_blend(Var<T> logits, Var<T> a, Var<T> b) {
  const auto& lv = logits.value();
  const auto& av = a.value();
  require_same_shape(av, b.value(), "gate_blend");
  if (av.rank() != 3 || lv.rank() != 2 || lv.dim(0) != av.dim(0) || lv.dim(1) != av.dim(1)) {
    throw DimensionError("gate_blend: gate " + shape_str(lv.shape()) + " does not match branches " +
                         shape_str(av.shape()));
  }
  const std::size_t hw = lv.size(), c = av.dim(2);
  Tensor<T> out(av.shape());
  const auto& bv = b.value();
  for (std::size_t p = 0; p < hw; ++p) {
    const T s = sigmoid_value(lv[p]);
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t q = p * c + j;
      out[q] = s * av[q] + (T(1) - s) * bv[q];
    }
  }
  return a.tape->record(std::move(out), {logits, a, b},
                        [il = logits.id, ia = a.id, ib = b.id, hw, c](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                          const auto& lv = t.value(il);
                          const auto& av = t.value(ia);
                          const auto& bv = t.value(ib);
                          Tensor<T> ga(av.shape()), gb(av.shape()), gl(lv.shape());
                          for (std::size_t p = 0; p < hw; ++p) {
                            const T s = sigmoid_value(lv[p]);
                            T acc = 0;
                            for (std::size_t j = 0; j < c; ++j) {
                              const std::size_t q = p * c + j;
                              ga[q] = s * g[q];
                              gb[q] = (T(1) - s) * g[q];
                              acc += g[q] * (av[q] - bv[q]);
                            }
                            gl[p] = acc * s * (T(1) - s);
                          }
                          t.accumulate(il, gl);
                          t.accumulate(ia, ga);
                          t.accumulate(ib, gb);
                        });
}

namespace detail {
struct LerpTap {
  std::size_t i0, i1;
  double w1;
};

// Half-pixel-centre bilinear sampling positions (edge clamped).
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = double(in) / double(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, double(in - 1));
    const auto i0 = std::size_t(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - double(i0)};
  }
  return taps;
}
}  // namespace detail

/// Bilinear resize of a 2D map; identity when the size already matches.
template <class T>
Var<T> resize_bilinear(Var<T> x, std::size_t oh, std::size_t ow) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("resize_bilinear: expected a 2D map");
  const std::size_t h = xv.dim(0), w = xv.dim(1);
  if (h == oh && w == ow) return x;
  const auto ty = detail::lerp_taps(h, oh);
  const auto tx = detail::lerp_taps(w, ow);
  Tensor<T> out({oh, ow});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      const T wy = T(ty[i].w1), wx = T(tx[j].w1);
      out.at(i, j) = (1 - wy) * ((1 - wx) * xv.at(ty[i].i0, tx[j].i0) + wx * xv.at(ty[i].i0, tx[j].i1)) +
                     wy * ((1 - wx) * xv.at(ty[i].i1, tx[j].i0) + wx * xv.at(ty[i].i1, tx[j].i1));
    }
  return x.tape->record(std::move(out), {x}, [ix = x.id, h, w, oh, ow, ty, tx](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> gx({h, w});
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const T wy = T(ty[i].w1), wx = T(tx[j].w1), gv = g.at(i, j);
        gx.at(ty[i].i0, tx[j].i0) += (1 - wy) * (1 - wx) * gv;
        gx.at(ty[i].i0, tx[j].i1) += (1 - wy) * wx * gv;
        gx.at(ty[i].i1, tx[j].i0) += wy * (1 - wx) * gv;
        gx.at(ty[i].i1, tx[j].i1) += wy * wx * gv;
      }
    t.accumulate(ix, gx);
  });
}

}  // namespace hsci::ad
