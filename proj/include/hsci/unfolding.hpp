#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <vector>

#include "hsci/cassi.hpp"
#include "hsci/cmdt.hpp"
#include "hsci/metrics.hpp"

namespace hsci {

/// Training and stage configuration of the unfolding network.
struct UnfoldingConfig {
  std::size_t stages = 3;
  bool share_params = true;
  double lr0 = 4e-4;
  std::size_t steps = 2000;
  std::size_t batch = 1;
  std::uint64_t seed = 7;
  bool augment = true;
  std::size_t log_every = 1;

  /// Stage presets 2/3/5/9 matching the published model variants.
  static UnfoldingConfig preset(std::size_t stages) {
    if (stages != 2 && stages != 3 && stages != 5 && stages != 9) {
      throw ValueError("unfolding preset: supported stage counts are 2, 3, 5, 9");
    }
    UnfoldingConfig u;
    u.stages = stages;
    return u;
  }

  /// Full published training recipe (not desk scale).
  static UnfoldingConfig paper_recipe(std::size_t stages = 9) {
    UnfoldingConfig u = preset(stages);
    u.batch = 5;
    u.steps = 300 * 1000;
    return u;
  }
};

/// x = z + Phi^T[(y - Phi z) ./ (alpha + diag(Phi Phi^T))]
template <class T>
Tensor<T> data_module(const Tensor<T>& z, const Tensor<T>& y, const SensingConfig<T>& cfg, T alpha) {
  if (!(alpha > T(0))) throw ValueError("data_module: alpha must be > 0");
  Tensor<T> r = y;
  const Tensor<T> pz = phi_forward(z, cfg);
  const Tensor<T> diag = phi_phit_diag(cfg);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = (r[i] - pz[i]) / (alpha + diag[i]);
  Tensor<T> x = phi_adjoint(r, cfg);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += z[i];
  return x;
}

namespace ad {

template <class T>
Var<T> data_module(Var<T> z, Var<T> y, const SensingConfig<T>& cfg, Var<T> alpha, const Tensor<T>& diag) {
  Var<T> r = ad::sub(y, ad::phi_forward(z, cfg));
  return ad::add(z, ad::phi_adjoint(ad::divide_shifted(r, alpha, diag), cfg));
}

}  // namespace ad

/// z0 = shift_back(y) * 2 / C. A half-open binary mask sums about C/2
/// bands into each measurement, so the rescaled replica has the scale of
/// one band.
template <class T>
Tensor<T> initial_estimate(const Tensor<T>& y, const SensingConfig<T>& cfg) {
  Tensor<T> z = shift_back(y, cfg);
  const T s = T(2) / T(cfg.bands);
  for (auto& v : z.values()) v *= s;
  return z;
}

/// ||X_GT - Z_K||_2 over the whole cube.
template <class T>
T reconstruction_loss(const Tensor<T>& z, const Tensor<T>& gt) {
  require_same_shape(z, gt, "loss");
  T s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (gt[i] - z[i]) * (gt[i] - z[i]);
  return std::sqrt(s);
}

namespace ad {
template <class T>
Var<T> reconstruction_loss(Var<T> z, Var<T> gt) {
  require_same_shape(z.value(), gt.value(), "loss");
  return ad::l2_norm(ad::sub(gt, z));
}
}  // namespace ad

/// K-stage unfolding network: an iteration parameter estimator plus one
/// (shared) or K prior modules.
template <class T>
class UnfoldingNet {
 public:
  UnfoldingNet(const CmdtConfig& cfg, std::size_t stages, bool share, std::uint64_t seed)
      : cfg_(cfg), stages_(stages), share_(share) {
    cfg_.validate();
    if (stages == 0) throw ValueError("unfolding: stage count must be >= 1");
    std::mt19937_64 rng(seed);
    ipe_ = std::make_unique<IpeParams<T>>(cfg_, stages, detail::Init<T>{rng, "ipe."});
    const std::size_t n = share ? 1 : stages;
    for (std::size_t k = 0; k < n; ++k) {
      priors_.push_back(
          std::make_unique<PriorParams<T>>(cfg_, detail::Init<T>{rng, "pm" + std::to_string(k) + "."}));
    }
  }

  const CmdtConfig& config() const { return cfg_; }
  std::size_t stages() const { return stages_; }
  bool shared() const { return share_; }
  std::size_t prior_sets() const { return priors_.size(); }

  PriorParams<T>& prior(std::size_t stage) { return *priors_[share_ ? 0 : stage]; }
  IpeParams<T>& ipe() { return *ipe_; }

  void visit(const ParamVisitor<T>& f) {
    ipe_->visit(f);
    for (auto& p : priors_) p->visit(f);
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    visit([&](Param<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](Param<T>& p) { n += p.value.size(); });
    return n;
  }

  void zero_grad() {
    visit([](Param<T>& p) { p.zero_grad(); });
  }

  /// Per-stage (alpha, beta) as estimated for measurement y.
  std::vector<std::pair<T, T>> iteration_parameters(const Tensor<T>& y, const SensingConfig<T>& sc) {
    Tape<T> tape;
    tape.set_recording(false);
    Var<T> ab = run_ipe(tape, y, sc);
    std::vector<std::pair<T, T>> out;
    for (std::size_t k = 0; k < stages_; ++k) out.emplace_back(ab.value()[2 * k], ab.value()[2 * k + 1]);
    return out;
  }

  /// z0 = initial_estimate(y); for each stage x = DM(z, alpha_k), z = PM(x, beta_k).
  Var<T> forward(Tape<T>& tape, const Tensor<T>& y, const SensingConfig<T>& sc) {
    check_sensing(sc);
    Var<T> yv = tape.constant(y);
    Var<T> z = tape.constant(initial_estimate(y, sc));
    Var<T> ab = run_ipe(tape, y, sc);
    const Tensor<T> diag = phi_phit_diag(sc);
    for (std::size_t k = 0; k < stages_; ++k) {
      Var<T> x = ad::data_module(z, yv, sc, ad::element(ab, 2 * k), diag);
      z = prior_module(x, ad::element(ab, 2 * k + 1), prior(k), cfg_.window);
    }
    return z;
  }

  /// Deterministic inference pass.
  Tensor<T> reconstruct(const Tensor<T>& y, const SensingConfig<T>& sc) {
    Tape<T> tape;
    tape.set_recording(false);
    return forward(tape, y, sc).value();
  }

  void check_sensing(const SensingConfig<T>& sc) const {
    if (sc.bands != cfg_.bands) {
      throw DimensionError("unfolding: network expects " + std::to_string(cfg_.bands) + " bands, sensing config has " +
                           std::to_string(sc.bands));
    }
  }

 private:
  Var<T> run_ipe(Tape<T>& tape, const Tensor<T>& y, const SensingConfig<T>& sc) {
    Var<T> yb = tape.constant(shift_back(y, sc));
    Var<T> cov = tape.constant(shift_back(phi_phit_diag(sc), sc));
    return ipe_forward(yb, cov, *ipe_);
  }

  CmdtConfig cfg_;
  std::size_t stages_;
  bool share_;
  std::unique_ptr<IpeParams<T>> ipe_;
  std::vector<std::unique_ptr<PriorParams<T>>> priors_;
};

/// Axis-aligned augmentation: rot90^k followed by optional flips.
template <class T>
Tensor<T> augment_cube(const Tensor<T>& x, int rot90, bool flip_h, bool flip_v) {
  Tensor<T> cur = x;
  for (int r = 0; r < (rot90 % 4 + 4) % 4; ++r) {
    const std::size_t h = cur.dim(0), w = cur.dim(1), c = cur.dim(2);
    Tensor<T> nxt({w, h, c});
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t b = 0; b < c; ++b) nxt.at(w - 1 - j, i, b) = cur.at(i, j, b);
    cur = std::move(nxt);
  }
  const std::size_t h = cur.dim(0), w = cur.dim(1), c = cur.dim(2);
  Tensor<T> out(cur.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t b = 0; b < c; ++b)
        out.at(flip_v ? h - 1 - i : i, flip_h ? w - 1 - j : j, b) = cur.at(i, j, b);
  return out;
}

template <class T>
Tensor<T> crop_cube(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  if (top + h > x.dim(0) || left + w > x.dim(1)) throw DimensionError("crop outside cube");
  const std::size_t c = x.dim(2);
  Tensor<T> out({h, w, c});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t b = 0; b < c; ++b) out.at(i, j, b) = x.at(top + i, left + j, b);
  return out;
}

struct TrainLogRow {
  std::size_t step;
  double lr;
  double loss;
  double psnr;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  bool interrupted = false;
};

/// Adam + cosine schedule on ||X_GT - Z_K||_2. Crops of the mask size are
/// drawn from the dataset, augmented, and measured through sc.
template <class T>
TrainResult train(UnfoldingNet<T>& net, const std::vector<Tensor<T>>& dataset, const SensingConfig<T>& sc,
                  const UnfoldingConfig& u, std::ostream* csv = nullptr, const std::atomic<bool>* stop = nullptr) {
  if (dataset.empty()) throw ValueError("train: dataset is empty");
  net.check_sensing(sc);
  const std::size_t ch = sc.height(), cw = sc.width();
  for (const auto& cube : dataset) {
    if (cube.rank() != 3 || cube.dim(2) != sc.bands || cube.dim(0) < ch || cube.dim(1) < cw) {
      throw DimensionError("train: cube " + shape_str(cube.shape()) + " incompatible with crop " +
                           shape_str(sc.cube_shape()));
    }
  }
  std::mt19937_64 rng(u.seed);
  Adam<T> adam;
  auto params = net.parameters();
  TrainResult result;
  if (csv) *csv << "step,lr,loss,psnr\n";
  for (std::size_t step = 0; step < u.steps; ++step) {
    if (stop && stop->load()) {
      result.interrupted = true;
      break;
    }
    const double lr = cosine_lr(double(step), double(u.steps), u.lr0);
    net.zero_grad();
    double loss_sum = 0, psnr_sum = 0;
    for (std::size_t b = 0; b < std::max<std::size_t>(u.batch, 1); ++b) {
      const auto& cube = dataset[rng() % dataset.size()];
      const std::size_t top = cube.dim(0) == ch ? 0 : rng() % (cube.dim(0) - ch + 1);
      const std::size_t left = cube.dim(1) == cw ? 0 : rng() % (cube.dim(1) - cw + 1);
      Tensor<T> gt = crop_cube(cube, top, left, ch, cw);
      if (u.augment) {
        const int rot = ch == cw ? int(rng() % 4) : int(rng() % 2) * 2;
        const bool fh = rng() & 1, fv = rng() & 1;
        gt = augment_cube(gt, rot, fh, fv);
      }
      const Tensor<T> y = simulate(gt, sc, rng());
      Tape<T> tape;
      Var<T> z = net.forward(tape, y, sc);
      Var<T> loss = ad::reconstruction_loss(z, tape.constant(gt));
      tape.backward(loss);
      loss_sum += double(loss.value()[0]);
      psnr_sum += psnr(z.value(), gt).mean;
    }
    adam.step(params, lr);
    const double nb = double(std::max<std::size_t>(u.batch, 1));
    TrainLogRow row{step, lr, loss_sum / nb, psnr_sum / nb};
    result.log.push_back(row);
    if (csv && (u.log_every <= 1 || step % u.log_every == 0 || step + 1 == u.steps)) {
      *csv << row.step << ',' << row.lr << ',' << row.loss << ',' << row.psnr << '\n';
    }
  }
  return result;
}

}  // namespace hsci
