#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "hsci/dct.hpp"
#include "hsci/nn.hpp"
#include "hsci/optim.hpp"

namespace hsci {

/// Architecture of one prior module. Widths refer to the full-resolution
/// level; the bottleneck runs at twice the width and half the resolution.
struct CmdtConfig {
  std::size_t height = 64;  // operating resolution of the gating filters
  std::size_t width = 64;
  std::size_t bands = 28;
  std::size_t window = 8;      // token/cube size K for SAF and space attention
  std::size_t heads = 4;
  std::size_t embed = 0;       // 0 means "same as bands"
  std::size_t ffn_mult = 2;    // hidden width of the feed-forward stack
  std::size_t ipe_hidden = 16;

  std::size_t embed_width() const { return embed ? embed : bands; }

  void validate() const {
    const std::size_t w = embed_width();
    if (bands == 0 || window == 0 || heads == 0) throw ValueError("cmdt config: zero-sized dimension");
    if (height % (2 * window) != 0 || width % (2 * window) != 0) {
      throw DimensionError("cmdt config: H and W must be divisible by 2*K (" + std::to_string(2 * window) + ")");
    }
    if (w % heads != 0) {
      throw DimensionError("cmdt config: embedding width " + std::to_string(w) + " not divisible by " +
                           std::to_string(heads) + " heads");
    }
  }
};

/// Visitor over named parameters, used for optimizers, checkpoints and
/// counting.
template <class T>
using ParamVisitor = std::function<void(Param<T>&)>;

namespace detail {

template <class T>
struct Init {
  std::mt19937_64& rng;
  std::string prefix;

  Param<T> xavier(const std::string& n, Shape s, std::size_t fan_in, std::size_t fan_out) {
    return Param<T>(prefix + n, xavier_uniform<T>(std::move(s), fan_in, fan_out, rng));
  }
  Param<T> zeros(const std::string& n, Shape s) { return Param<T>(prefix + n, Tensor<T>::zeros(std::move(s))); }
  Param<T> ones(const std::string& n, Shape s) { return Param<T>(prefix + n, Tensor<T>::ones(std::move(s))); }
  Param<T> conv(const std::string& n, std::size_t k, std::size_t cin_g, std::size_t cout) {
    return xavier(n, {k, k, cin_g, cout}, k * k * cin_g, k * k * cout);
  }
};

}  // namespace detail

/// Spectral-wise attention over K x K x C frequency cubes.
template <class T>
struct SafParams {
  std::size_t heads = 1;
  std::size_t window = 8;
  Param<T> wq, wk, wv;  // C x C
  Param<T> pos;         // heads x C/h x C/h, shared across cubes
  Param<T> out_w;       // 1 x 1 x C x C
  Param<T> out_b;
  // When set, every forward pass appends its [cubes*heads, C/h, C/h] attention.
  std::vector<Tensor<T>>* capture = nullptr;

  SafParams() = default;
  SafParams(std::size_t c, std::size_t h, std::size_t k, detail::Init<T> init) : heads(h), window(k) {
    wq = init.xavier("wq", {c, c}, c, c);
    wk = init.xavier("wk", {c, c}, c, c);
    wv = init.xavier("wv", {c, c}, c, c);
    pos = init.zeros("pos", {h, c / h, c / h});
    out_w = init.conv("out_w", 1, c, c);
    out_b = init.zeros("out_b", {c});
  }

  void visit(const ParamVisitor<T>& f) {
    for (auto* p : {&wq, &wk, &wv, &pos, &out_w, &out_b}) f(*p);
  }
};

/// Depth-wise spatial interaction plus 1x1 spectral evolution.
template <class T>
struct SifParams {
  Param<T> conv_in, conv_in_b;
  Param<T> dw, dw_b;  // 3 x 3 x 1 x C
  Param<T> conv_mid, conv_mid_b;
  Param<T> conv_out, conv_out_b;

  SifParams() = default;
  SifParams(std::size_t c, detail::Init<T> init) {
    conv_in = init.conv("conv_in", 1, c, c);
    conv_in_b = init.zeros("conv_in_b", {c});
    dw = init.conv("dw", 3, 1, c);
    dw_b = init.zeros("dw_b", {c});
    conv_mid = init.conv("conv_mid", 1, c, c);
    conv_mid_b = init.zeros("conv_mid_b", {c});
    conv_out = init.conv("conv_out", 1, c, c);
    conv_out_b = init.zeros("conv_out_b", {c});
  }

  void visit(const ParamVisitor<T>& f) {
    for (auto* p : {&conv_in, &conv_in_b, &dw, &dw_b, &conv_mid, &conv_mid_b, &conv_out, &conv_out_b}) f(*p);
  }
};

/// Learnable per-pixel gate between the two frequency branches; the
/// effective filter is sigmoid(logits).
template <class T>
struct GatingFilter {
  Param<T> logits;  // H x W

  GatingFilter() = default;
  GatingFilter(std::size_t h, std::size_t w, detail::Init<T> init) { logits = init.zeros("lgf", {h, w}); }

  Tensor<T> filter() const {
    Tensor<T> f = logits.value;
    for (auto& v : f.values()) v = ad::sigmoid_value(v);
    return f;
  }

  void visit(const ParamVisitor<T>& f) { f(logits); }
};

/// Spatial-wise multi-head attention inside K x K windows.
template <class T>
struct SpaceAttnParams {
  std::size_t heads = 1;
  std::size_t window = 8;
  Param<T> wq, wk, wv;  // C x C
  Param<T> pos;         // heads x K^2 x K^2
  Param<T> proj_w, proj_b;

  SpaceAttnParams() = default;
  SpaceAttnParams(std::size_t c, std::size_t h, std::size_t k, detail::Init<T> init) : heads(h), window(k) {
    wq = init.xavier("wq", {c, c}, c, c);
    wk = init.xavier("wk", {c, c}, c, c);
    wv = init.xavier("wv", {c, c}, c, c);
    pos = init.zeros("pos", {h, k * k, k * k});
    proj_w = init.conv("proj_w", 1, c, c);
    proj_b = init.zeros("proj_b", {c});
  }

  void visit(const ParamVisitor<T>& f) {
    for (auto* p : {&wq, &wk, &wv, &pos, &proj_w, &proj_b}) f(*p);
  }
};

template <class T>
struct CmdtParams {
  std::size_t channels = 0;
  Param<T> ln1_g, ln1_b;
  SpaceAttnParams<T> space;
  SafParams<T> saf;
  SifParams<T> sif;
  GatingFilter<T> gate;
  Param<T> proj_w, proj_b;
  Param<T> ln2_g, ln2_b;
  Param<T> ffn_w1, ffn_b1, ffn_dw, ffn_dwb, ffn_w2, ffn_b2;

  CmdtParams() = default;
  CmdtParams(std::size_t c, std::size_t h, std::size_t w, const CmdtConfig& cfg, detail::Init<T> init)
      : channels(c) {
    const std::size_t hid = c * cfg.ffn_mult;
    const auto sub = [&](const char* n) { return detail::Init<T>{init.rng, init.prefix + n + "."}; };
    ln1_g = init.ones("ln1_g", {c});
    ln1_b = init.zeros("ln1_b", {c});
    space = SpaceAttnParams<T>(c, cfg.heads, cfg.window, sub("space"));
    saf = SafParams<T>(c, cfg.heads, cfg.window, sub("saf"));
    sif = SifParams<T>(c, sub("sif"));
    gate = GatingFilter<T>(h, w, init);
    // residual-branch outputs start at zero: the block is the identity at init
    proj_w = init.zeros("proj_w", {1, 1, c, c});
    proj_b = init.zeros("proj_b", {c});
    ln2_g = init.ones("ln2_g", {c});
    ln2_b = init.zeros("ln2_b", {c});
    ffn_w1 = init.conv("ffn_w1", 1, c, hid);
    ffn_b1 = init.zeros("ffn_b1", {hid});
    ffn_dw = init.conv("ffn_dw", 3, 1, hid);
    ffn_dwb = init.zeros("ffn_dwb", {hid});
    ffn_w2 = init.zeros("ffn_w2", {1, 1, hid, c});
    ffn_b2 = init.zeros("ffn_b2", {c});
  }

  void visit(const ParamVisitor<T>& f) {
    f(ln1_g);
    f(ln1_b);
    space.visit(f);
    saf.visit(f);
    sif.visit(f);
    gate.visit(f);
    for (auto* p : {&proj_w, &proj_b, &ln2_g, &ln2_b, &ffn_w1, &ffn_b1, &ffn_dw, &ffn_dwb, &ffn_w2, &ffn_b2}) f(*p);
  }
};

/// Two-level U-shaped prior: encoder block at full resolution, bottleneck
/// block at half resolution with doubled width, decoder block after a skip
/// fusion, and a residual output convolution.
template <class T>
struct PriorParams {
  Param<T> embed_w, embed_b;  // 3x3, (C+1) -> w
  CmdtParams<T> enc;
  Param<T> down_w, down_b;    // 4x4 stride 2, w -> 2w
  CmdtParams<T> mid;
  Param<T> up_w, up_b;        // 2x2 transposed stride 2, 2w -> w
  Param<T> fuse_w, fuse_b;    // 1x1, 2w -> w
  CmdtParams<T> dec;
  Param<T> out_w, out_b;      // 3x3, w -> C, zero initialized

  PriorParams() = default;
  PriorParams(const CmdtConfig& cfg, detail::Init<T> init) {
    const std::size_t c = cfg.bands, w = cfg.embed_width(), h = cfg.height, wd = cfg.width;
    const auto sub = [&](const char* n) { return detail::Init<T>{init.rng, init.prefix + n + "."}; };
    embed_w = init.conv("embed_w", 3, c + 1, w);
    embed_b = init.zeros("embed_b", {w});
    enc = CmdtParams<T>(w, h, wd, cfg, sub("enc"));
    down_w = init.conv("down_w", 4, w, 2 * w);
    down_b = init.zeros("down_b", {2 * w});
    mid = CmdtParams<T>(2 * w, h / 2, wd / 2, cfg, sub("mid"));
    up_w = init.xavier("up_w", {2, 2, 2 * w, w}, 4 * 2 * w, 4 * w);
    up_b = init.zeros("up_b", {w});
    fuse_w = init.conv("fuse_w", 1, 2 * w, w);
    fuse_b = init.zeros("fuse_b", {w});
    dec = CmdtParams<T>(w, h, wd, cfg, sub("dec"));
    out_w = init.zeros("out_w", {3, 3, w, c});
    out_b = init.zeros("out_b", {c});
  }

  void visit(const ParamVisitor<T>& f) {
    f(embed_w);
    f(embed_b);
    enc.visit(f);
    f(down_w);
    f(down_b);
    mid.visit(f);
    for (auto* p : {&up_w, &up_b, &fuse_w, &fuse_b}) f(*p);
    dec.visit(f);
    f(out_w);
    f(out_b);
  }
};

/// Iteration parameter estimator: conv -> GELU -> global pool -> linear ->
/// softplus, producing (alpha_k, beta_k) for every stage.
template <class T>
struct IpeParams {
  std::size_t stages = 1;
  Param<T> conv_w, conv_b;  // 3x3, 2C -> hidden
  Param<T> fc_w, fc_b;      // hidden -> 2K

  IpeParams() = default;
  IpeParams(const CmdtConfig& cfg, std::size_t k_stages, detail::Init<T> init) : stages(k_stages) {
    const std::size_t c = cfg.bands, hid = cfg.ipe_hidden;
    conv_w = init.conv("conv_w", 3, 2 * c, hid);
    conv_b = init.zeros("conv_b", {hid});
    fc_w = init.xavier("fc_w", {hid, 2 * k_stages}, hid, 2 * k_stages);
    for (auto& v : fc_w.value.values()) v *= T(0.1);
    // softplus(-2.25) ~= 0.1 for both alpha and beta at start
    fc_b = Param<T>(init.prefix + "fc_b", Tensor<T>({1, 2 * k_stages}, T(-2.25)));
  }

  void visit(const ParamVisitor<T>& f) {
    for (auto* p : {&conv_w, &conv_b, &fc_w, &fc_b}) f(*p);
  }
};

// ---------------------------------------------------------------------------
// Forward passes. All take and return tape variables over H x W x C maps.

template <class T>
Var<T> conv1x1(Var<T> x, Param<T>& w, Param<T>& b) {
  Tape<T>& t = *x.tape;
  return ad::add_bias(ad::conv2d(x, t.param(w), ad::ConvSpec{}), t.param(b));
}

/// Frequency-cube self-attention: per K x K cube f (K^2 x C), per head
/// F = V Softmax(Q^T K / sqrt(C) + P), softmax taken over the value-channel
/// axis so every output channel is a convex mix of value channels.
template <class T>
Var<T> saf_forward(Var<T> f_in, SafParams<T>& p) {
  Tape<T>& t = *f_in.tape;
  const auto& s = f_in.shape();
  if (s.size() != 3) throw DimensionError("saf: expected H x W x C input");
  const std::size_t h = s[0], w = s[1], c = s[2], k = p.window;
  if (h % k != 0 || w % k != 0) {
    throw DimensionError("saf: cube size " + std::to_string(k) + " must divide " + shape_str(s));
  }
  const std::size_t n = h * w / (k * k);
  Var<T> flat = ad::reshape(ad::to_tokens(f_in, k), {n * k * k, c});
  auto project = [&](Param<T>& wm) {
    return ad::split_heads(ad::reshape(ad::matmul(flat, t.param(wm)), {n, k * k, c}), p.heads);
  };
  Var<T> q = project(p.wq), kk = project(p.wk), v = project(p.wv);
  Var<T> logits = ad::scale(ad::bmm(q, kk, true, false), T(1) / std::sqrt(T(c)));
  logits = ad::add_head_bias(logits, t.param(p.pos));
  Var<T> attn = ad::softmax(logits, 1);
  if (p.capture) p.capture->push_back(attn.value());
  Var<T> out = ad::merge_heads(ad::bmm(v, attn), p.heads);
  out = ad::from_tokens(out, h, w, k);
  return conv1x1(out, p.out_w, p.out_b);
}

/// F_spat = GELU(DW(GELU(Conv(F)))), F_spec = Conv(GELU(Conv(F_spat + F))),
/// output F_spec + F_spat + F.
template <class T>
Var<T> sif_forward(Var<T> f_in, SifParams<T>& p) {
  Tape<T>& t = *f_in.tape;
  const std::size_t c = f_in.dim(2);
  Var<T> a = ad::gelu(conv1x1(f_in, p.conv_in, p.conv_in_b));
  Var<T> spat = ad::gelu(ad::add_bias(ad::conv2d(a, t.param(p.dw), c, ad::Padding::same), t.param(p.dw_b)));
  Var<T> mid = ad::gelu(conv1x1(ad::add(spat, f_in), p.conv_mid, p.conv_mid_b));
  Var<T> spec = conv1x1(mid, p.conv_out, p.conv_out_b);
  return ad::add(ad::add(spec, spat), f_in);
}

/// LGF (.) F_saf + (1 - LGF) (.) F_sif with the filter resampled to the
/// input resolution when needed.
template <class T>
Var<T> gate_merge(Var<T> f_saf, Var<T> f_sif, GatingFilter<T>& g) {
  Tape<T>& t = *f_saf.tape;
  require_same_shape(f_saf.value(), f_sif.value(), "gate_merge");
  Var<T> logits = ad::resize_bilinear(t.param(g.logits), f_saf.dim(0), f_saf.dim(1));
  return ad::gate_blend(logits, f_saf, f_sif);
}

/// Window attention over the K^2 spatial positions of each token, per head
/// A = Softmax(Q K^T / sqrt(C/h) + B), output A V, heads merged and projected.
template <class T>
Var<T> space_attention(Var<T> x, SpaceAttnParams<T>& p) {
  Tape<T>& t = *x.tape;
  const auto& s = x.shape();
  if (s.size() != 3) throw DimensionError("space_attention: expected H x W x C input");
  const std::size_t h = s[0], w = s[1], c = s[2], k = p.window;
  if (h % k != 0 || w % k != 0) {
    throw DimensionError("space_attention: token size " + std::to_string(k) + " must divide " + shape_str(s));
  }
  const std::size_t n = h * w / (k * k);
  Var<T> flat = ad::reshape(ad::to_tokens(x, k), {n * k * k, c});
  auto project = [&](Param<T>& wm) {
    return ad::split_heads(ad::reshape(ad::matmul(flat, t.param(wm)), {n, k * k, c}), p.heads);
  };
  Var<T> q = project(p.wq), kk = project(p.wk), v = project(p.wv);
  const T sc = T(1) / std::sqrt(T(c / p.heads));
  Var<T> logits = ad::add_head_bias(ad::scale(ad::bmm(q, kk, false, true), sc), t.param(p.pos));
  Var<T> attn = ad::softmax(logits, 2);
  Var<T> out = ad::from_tokens(ad::merge_heads(ad::bmm(attn, v), p.heads), h, w, k);
  return conv1x1(out, p.proj_w, p.proj_b);
}

/// Frequency branch: DCT, SAF and SIF, gated blend, inverse DCT.
template <class T>
Var<T> frequency_branch(Var<T> x, CmdtParams<T>& p) {
  Var<T> f = ad::dct2(x);
  return ad::idct2(gate_merge(saf_forward(f, p.saf), sif_forward(f, p.sif), p.gate));
}

template <class T>
Var<T> cmdt_block(Var<T> x, CmdtParams<T>& p) {
  Tape<T>& t = *x.tape;
  if (x.dim(2) != p.channels) {
    throw DimensionError("cmdt_block: input has " + std::to_string(x.dim(2)) + " channels, block expects " +
                         std::to_string(p.channels));
  }
  Var<T> n1 = ad::layer_norm(x, t.param(p.ln1_g), t.param(p.ln1_b));
  Var<T> mix = ad::add(space_attention(n1, p.space), frequency_branch(n1, p));
  Var<T> x1 = ad::add(x, conv1x1(mix, p.proj_w, p.proj_b));
  Var<T> n2 = ad::layer_norm(x1, t.param(p.ln2_g), t.param(p.ln2_b));
  const std::size_t hid = p.ffn_w1.value.dim(3);
  Var<T> f = ad::gelu(conv1x1(n2, p.ffn_w1, p.ffn_b1));
  f = ad::gelu(ad::add_bias(ad::conv2d(f, t.param(p.ffn_dw), hid, ad::Padding::same), t.param(p.ffn_dwb)));
  f = conv1x1(f, p.ffn_w2, p.ffn_b2);
  return ad::add(x1, f);
}

/// Z = X + Out(Dec(Fuse(Up(Mid(Down(Enc(Embed([X, beta])))), Enc(...)))))
template <class T>
Var<T> prior_module(Var<T> x, Var<T> beta, PriorParams<T>& p, std::size_t window) {
  Tape<T>& t = *x.tape;
  const auto& s = x.shape();
  if (s.size() != 3 || s[0] % (2 * window) != 0 || s[1] % (2 * window) != 0) {
    throw DimensionError("prior_module: H and W of " + shape_str(s) + " must be divisible by " +
                         std::to_string(2 * window));
  }
  const std::size_t h = s[0], w = s[1];
  Var<T> in = ad::concat_channels(x, ad::broadcast_plane(beta, h, w));
  Var<T> e = ad::add_bias(ad::conv2d(in, t.param(p.embed_w), 1, ad::Padding::same), t.param(p.embed_b));
  Var<T> e1 = cmdt_block(e, p.enc);
  Var<T> d = ad::add_bias(ad::conv2d(e1, t.param(p.down_w), ad::ConvSpec{2, 1, 1}), t.param(p.down_b));
  Var<T> d1 = cmdt_block(d, p.mid);
  Var<T> u = ad::add_bias(ad::conv_transpose2x2(d1, t.param(p.up_w)), t.param(p.up_b));
  Var<T> fz = conv1x1(ad::concat_channels(u, e1), p.fuse_w, p.fuse_b);
  Var<T> f1 = cmdt_block(fz, p.dec);
  Var<T> o = ad::add_bias(ad::conv2d(f1, t.param(p.out_w), 1, ad::Padding::same), t.param(p.out_b));
  return ad::add(x, o);
}

/// Returns a [1, 2K] row (alpha_1, beta_1, alpha_2, beta_2, ...), all > 0.
/// Inputs are the shifted-back measurement and the shifted-back Phi Phi^T
/// diagonal (the mask-derived coverage pattern).
template <class T>
Var<T> ipe_forward(Var<T> y_back, Var<T> coverage, IpeParams<T>& p) {
  Tape<T>& t = *y_back.tape;
  Var<T> in = ad::concat_channels(y_back, coverage);
  Var<T> h = ad::gelu(ad::add_bias(ad::conv2d(in, t.param(p.conv_w), 1, ad::Padding::same), t.param(p.conv_b)));
  Var<T> pooled = ad::global_avg_pool(h);
  Var<T> z = ad::add_bias(ad::matmul(pooled, t.param(p.fc_w)), t.param(p.fc_b));
  return ad::softplus(z);
}

}  // namespace hsci
