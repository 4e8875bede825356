// Command-line front end: scene/mask generation, simulation, correlation
// analysis, training, reconstruction, metrics and exports.
#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "hsci/hsci.hpp"

namespace fs = std::filesystem;
using namespace hsci;

namespace {

std::atomic<bool> g_stop{false};

void on_sigint(int) { g_stop.store(true); }

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Tensor<float> read_mask(const fs::path& p) {
  Tensor<float> m = read_hsic(p);
  if (m.dim(2) != 1) throw ValueError("mask file " + p.string() + " must have C = 1");
  return m.reshaped({m.dim(0), m.dim(1)});
}

void write_mask(const Tensor<float>& m, const fs::path& p) { write_hsic(m.reshaped({m.dim(0), m.dim(1), 1}), p); }

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw FormatError("cannot open '" + p.string() + "' for writing");
  return f;
}

// Bands of the measurement follow from its width once mask width and step
// are known.
std::size_t bands_from(const Tensor<float>& y, const Tensor<float>& mask, std::size_t step) {
  if (y.rank() != 3 || y.dim(2) != 1) throw DimensionError("measurement must be an H x W' x 1 HSIC file");
  if (y.dim(0) != mask.dim(0) || y.dim(1) < mask.dim(1)) throw DimensionError("measurement and mask sizes disagree");
  const std::size_t extra = y.dim(1) - mask.dim(1);
  if (step == 0) throw UsageError("--bands is required when --d is 0");
  if (extra % step != 0) throw DimensionError("measurement width inconsistent with mask width and --d");
  return extra / step + 1;
}

std::vector<Tensor<float>> load_dataset(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".hsic") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Tensor<float>> cubes;
  for (const auto& f : files) cubes.push_back(read_hsic(f));
  if (cubes.empty()) throw ValueError("no .hsic cubes in " + dir.string());
  return cubes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hsci: frequency-aware unfolding toolkit for snapshot spectral imaging"};
  app.require_subcommand(1);

  // gen-scene
  auto* gen = app.add_subcommand("gen-scene", "generate a synthetic HSIC cube");
  std::string kind = "rank1-smooth";
  std::size_t gh = 64, gw = 64, gc = 28;
  std::uint64_t gseed = 0;
  double rho = 0.9;
  fs::path gout;
  gen->add_option("--kind", kind, "rank1-smooth | piecewise-constant | cosine-modes | noise");
  gen->add_option("--height", gh);
  gen->add_option("--width", gw);
  gen->add_option("--bands", gc);
  gen->add_option("--seed", gseed);
  gen->add_option("--rho", rho, "inter-band correlation knob in [0, 1]");
  gen->add_option("--out", gout)->required();

  // gen-mask
  auto* gmask = app.add_subcommand("gen-mask", "generate a coded aperture (HSIC, C = 1)");
  std::size_t mh = 64, mw = 64;
  std::uint64_t mseed = 0;
  bool continuous = false;
  fs::path mout;
  gmask->add_option("--height", mh);
  gmask->add_option("--width", mw);
  gmask->add_option("--seed", mseed);
  gmask->add_flag("--continuous", continuous, "uniform [0,1] transmittance instead of binary");
  gmask->add_option("--out", mout)->required();

  // simulate
  auto* sim = app.add_subcommand("simulate", "CASSI forward model with optional Gaussian noise");
  fs::path sin, smask, sout;
  std::size_t sd = 2;
  double sigma = 0;
  std::uint64_t sseed = 0;
  sim->add_option("--in", sin)->required();
  sim->add_option("--mask", smask)->required();
  sim->add_option("--d", sd, "dispersion step in pixels per band");
  sim->add_option("--sigma", sigma);
  sim->add_option("--seed", sseed);
  sim->add_option("--out", sout)->required();

  // analyze-hfc
  auto* hfc = app.add_subcommand("analyze-hfc", "spectral correlation maps and token curve");
  fs::path hin, hdir;
  std::size_t token = 8;
  hfc->add_option("--in", hin)->required();
  hfc->add_option("--token", token);
  hfc->add_option("--out-dir", hdir)->required();

  // corpus-stats
  auto* corpus = app.add_subcommand("corpus-stats", "histogram of average correlations over many cubes");
  std::vector<fs::path> cfiles;
  fs::path cout_path;
  corpus->add_option("files", cfiles)->required();
  corpus->add_option("--out", cout_path)->required();

  // train
  auto* tr = app.add_subcommand("train", "train the unfolding network");
  fs::path tdata, tmask, tout, tlog;
  std::size_t tstages = 3, tsteps = 2000, tbatch = 1, td = 2, tcrop = 0, twin = 8, theads = 4, tembed = 0;
  std::uint64_t tseed = 7;
  double tlr = 4e-4;
  bool share = true, no_augment = false;
  tr->add_option("--data", tdata)->required();
  tr->add_option("--mask", tmask, "coded aperture; default: seeded random binary mask of --crop size");
  tr->add_option("--crop", tcrop, "training crop size when no mask is given (default: smaller cube side)");
  tr->add_option("--d", td);
  tr->add_option("--stages", tstages);
  tr->add_flag("--share,!--no-share", share, "share prior parameters across stages (default)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  tr->add_option("--steps", tsteps);
  tr->add_option("--batch", tbatch);
  tr->add_option("--lr", tlr);
  tr->add_option("--seed", tseed);
  tr->add_option("--window", twin);
  tr->add_option("--heads", theads);
  tr->add_option("--embed", tembed, "embedding width (0: number of bands)");
  tr->add_flag("--no-augment", no_augment);
  tr->add_option("--log", tlog, "training log CSV (step,lr,loss,psnr)");
  tr->add_option("--out", tout)->required();

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "reconstruct a cube from a measurement");
  std::string method = "cmdt";
  fs::path ry, rckpt, rmask, rout;
  std::size_t rd = 2, rbands = 0, riters = 100;
  double rtv = 0.07;
  rec->add_option("--method", method, "cmdt | gap-tv")->check(CLI::IsMember({"cmdt", "gap-tv"}));
  rec->add_option("--y", ry)->required();
  rec->add_option("--ckpt", rckpt);
  rec->add_option("--mask", rmask);
  rec->add_option("--d", rd);
  rec->add_option("--bands", rbands);
  rec->add_option("--iters", riters, "gap-tv iterations");
  rec->add_option("--tv-weight", rtv);
  rec->add_option("--out", rout)->required();

  // metrics
  auto* met = app.add_subcommand("metrics", "PSNR / SSIM / FDG of predictions against ground truth");
  std::vector<fs::path> gts, preds;
  fs::path mcsv;
  met->add_option("--gt", gts)->required();
  met->add_option("--pred", preds)->required();
  met->add_option("--out", mcsv, "CSV file (default: stdout)");

  // params
  auto* par = app.add_subcommand("params", "parameter and FLOP report for a configuration");
  std::size_t ph = 256, pw = 256, pc = 28, pk = 8, pheads = 4, pstages = 9, pembed = 0;
  bool pno_share = false;
  par->add_option("--height", ph);
  par->add_option("--width", pw);
  par->add_option("--bands", pc);
  par->add_option("--window", pk);
  par->add_option("--heads", pheads);
  par->add_option("--stages", pstages);
  par->add_option("--embed", pembed);
  par->add_flag("--no-share", pno_share);

  // export-maps
  auto* exp = app.add_subcommand("export-maps", "gating-filter heatmaps and SAF attention maps as PGM");
  fs::path eckpt, ey, edir;
  std::size_t etokens = 5;
  exp->add_option("--ckpt", eckpt)->required();
  exp->add_option("--y", ey, "measurement for attention maps (needs the checkpoint's sensing block)");
  exp->add_option("--tokens", etokens, "number of increasing-frequency tokens");
  exp->add_option("--out-dir", edir)->required();

  // sweep-kernel
  auto* sweep = app.add_subcommand("sweep-kernel", "SAF kernel-size ablation on one scene");
  fs::path wscene, wcsv;
  std::vector<std::size_t> kernels{2, 4, 8};
  std::size_t wsteps = 200, wstages = 2, wd = 2;
  std::uint64_t wseed = 7;
  sweep->add_option("--scene", wscene)->required();
  sweep->add_option("--kernels", kernels);
  sweep->add_option("--steps", wsteps);
  sweep->add_option("--stages", wstages);
  sweep->add_option("--d", wd);
  sweep->add_option("--seed", wseed);
  sweep->add_option("--out", wcsv, "CSV file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      SceneSpec s{parse_scene_kind(kind), gh, gw, gc, gseed, rho};
      write_hsic(gen_scene<float>(s), gout);
    } else if (gmask->parsed()) {
      write_mask(random_mask<float>(mh, mw, mseed, !continuous), mout);
    } else if (sim->parsed()) {
      const Tensor<float> x = read_hsic(sin);
      auto cfg = make_sensing<float>(read_mask(smask), x.dim(2), sd, float(sigma));
      const Tensor<float> y = simulate(x, cfg, sseed);
      write_hsic(y.reshaped({y.dim(0), y.dim(1), 1}), sout);
    } else if (hfc->parsed()) {
      const Tensor<double> x = read_hsic<double>(hin);
      fs::create_directories(hdir);
      const auto rep = correlation_maps(x);
      auto f1 = open_out(hdir / "corr_maps.csv");
      write_corr_maps_csv(rep, f1);
      auto f2 = open_out(hdir / "token_curve.csv");
      write_token_curve_csv(token_correlation(x, token), f2);
      export_heatmap(rep.space_map, hdir / "corr_space.pgm", HeatmapRange{false, -1, 1});
      export_heatmap(rep.freq_map, hdir / "corr_freq.pgm", HeatmapRange{false, -1, 1});
      std::cout << "space_avg," << rep.space_avg << "\nfreq_avg," << rep.freq_avg << '\n';
    } else if (corpus->parsed()) {
      const auto st = corpus_stats(cfiles, &std::cerr);
      auto f = open_out(cout_path);
      write_corpus_csv(st, f);
      if (st.cubes.empty()) throw ValueError("no readable cubes");
    } else if (tr->parsed()) {
      const auto data = load_dataset(tdata);
      const std::size_t c = data[0].dim(2);
      Tensor<float> mask;
      if (!tmask.empty()) {
        mask = read_mask(tmask);
      } else {
        std::size_t side = tcrop;
        if (side == 0) {
          side = std::min(data[0].dim(0), data[0].dim(1));
          for (const auto& d : data) side = std::min({side, d.dim(0), d.dim(1)});
        }
        mask = random_mask<float>(side, side, tseed, true);
      }
      auto sc = make_sensing<float>(mask, c, td);
      CmdtConfig cfg;
      cfg.height = mask.dim(0);
      cfg.width = mask.dim(1);
      cfg.bands = c;
      cfg.window = twin;
      cfg.heads = theads;
      cfg.embed = tembed;
      UnfoldingConfig u;
      u.stages = tstages;
      u.share_params = share;
      u.steps = tsteps;
      u.batch = tbatch;
      u.lr0 = tlr;
      u.seed = tseed;
      u.augment = !no_augment;
      UnfoldingNet<float> net(cfg, tstages, u.share_params, tseed);
      std::ofstream log;
      if (!tlog.empty()) log = open_out(tlog);
      std::signal(SIGINT, on_sigint);
      const auto res = train(net, data, sc, u, tlog.empty() ? nullptr : &log, &g_stop);
      log.flush();
      save_checkpoint(net, tout, &sc);
      if (!res.log.empty()) {
        std::cerr << "final step " << res.log.back().step << " loss " << res.log.back().loss << " psnr "
                  << res.log.back().psnr << '\n';
      }
      if (res.interrupted) std::cerr << "interrupted: checkpoint written after " << res.log.size() << " steps\n";
    } else if (rec->parsed()) {
      const Tensor<float> y3 = read_hsic(ry);
      const Tensor<float> y = y3.reshaped({y3.dim(0), y3.dim(1)});
      Tensor<float> xhat;
      if (method == "cmdt") {
        if (rckpt.empty()) throw UsageError("--ckpt is required for --method cmdt");
        auto model = load_checkpoint(rckpt);
        SensingConfig<float> sc;
        if (!rmask.empty()) {
          const auto m = read_mask(rmask);
          sc = make_sensing<float>(m, model.net->config().bands, rd);
        } else if (model.sensing) {
          sc = *model.sensing;
        } else {
          throw UsageError("checkpoint has no sensing block; pass --mask");
        }
        xhat = model.net->reconstruct(y, sc);
      } else {
        if (rmask.empty()) throw UsageError("--mask is required for --method gap-tv");
        const auto m = read_mask(rmask);
        const std::size_t c = rbands ? rbands : bands_from(y3, m, rd);
        auto sc = make_sensing<float>(m, c, rd);
        GapTvConfig g;
        g.iterations = riters;
        g.tv_weight = rtv;
        xhat = gap_tv(y, sc, g, nullptr, &std::cerr);
      }
      write_hsic(xhat, rout);
    } else if (met->parsed()) {
      if (gts.size() != preds.size()) throw UsageError("--gt and --pred must be given the same number of times");
      std::ofstream file;
      if (!mcsv.empty()) file = open_out(mcsv);
      std::ostream& out = mcsv.empty() ? std::cout : file;
      out << "scene,psnr,ssim,fdg\n" << std::setprecision(6) << std::fixed;
      double sp = 0, ss = 0, sf = 0;
      for (std::size_t i = 0; i < gts.size(); ++i) {
        const auto r = evaluate(read_hsic<double>(preds[i]), read_hsic<double>(gts[i]));
        out << gts[i].stem().string() << ',' << r.psnr.mean << ',' << r.ssim.mean << ',' << r.fdg << '\n';
        sp += r.psnr.mean;
        ss += r.ssim.mean;
        sf += r.fdg;
      }
      const double n = double(gts.size());
      out << "mean," << sp / n << ',' << ss / n << ',' << sf / n << '\n';
    } else if (par->parsed()) {
      CmdtConfig cfg;
      cfg.height = ph;
      cfg.width = pw;
      cfg.bands = pc;
      cfg.window = pk;
      cfg.heads = pheads;
      cfg.embed = pembed;
      cfg.validate();
      const double params = double(count_params(cfg, pstages, !pno_share));
      const double flops = count_flops(cfg, pstages, ph, pw);
      std::cout << std::fixed << std::setprecision(2) << "config,H=" << ph << " W=" << pw << " C=" << pc
                << " K=" << pk << " heads=" << pheads << " stages=" << pstages
                << " width=" << cfg.embed_width() << (pno_share ? " per-stage" : " shared") << '\n'
                << "params_M," << params / 1e6 << ",reference 0.90\n"
                << "flops_G," << flops / 1e9 << ",reference 92.59\n";
    } else if (exp->parsed()) {
      auto model = load_checkpoint(eckpt);
      fs::create_directories(edir);
      auto& net = *model.net;
      int idx = 0;
      for (std::size_t s = 0; s < net.prior_sets(); ++s) {
        auto& p = net.prior(s);
        const std::pair<const char*, CmdtParams<float>*> blocks[] = {{"enc", &p.enc}, {"mid", &p.mid}, {"dec", &p.dec}};
        for (const auto& [name, blk] : blocks) {
          const auto f = blk->gate.filter().cast<double>();
          export_heatmap(f, edir / ("lgf_pm" + std::to_string(s) + "_" + name + ".pgm"), HeatmapRange{false, 0, 1});
          ++idx;
        }
      }
      if (!ey.empty()) {
        if (!model.sensing) throw UsageError("checkpoint has no sensing block; attention maps need it");
        const Tensor<float> y3 = read_hsic(ey);
        std::vector<Tensor<float>> cap;
        net.prior(0).enc.saf.capture = &cap;
        net.reconstruct(y3.reshaped({y3.dim(0), y3.dim(1)}), *model.sensing);
        net.prior(0).enc.saf.capture = nullptr;
        // first stage, encoder block: [cubes * heads, C/h, C/h], cubes in raster order
        const auto& cfg = net.config();
        const std::size_t k = cfg.window, heads = cfg.heads;
        const std::size_t per_row = cfg.width / k;
        // cube (a, b) holds DCT coefficients [a k, (a+1) k) x [b k, (b+1) k)
        std::vector<std::pair<std::size_t, std::size_t>> order;
        for (std::size_t a = 0; a < cfg.height / k; ++a)
          for (std::size_t b = 0; b < per_row; ++b) order.push_back({a, b});
        std::stable_sort(order.begin(), order.end(), [](auto x, auto y) {
          return x.first + x.second != y.first + y.second ? x.first + x.second < y.first + y.second : x.first < y.first;
        });
        const Tensor<float>& attn = cap.at(0);
        const std::size_t d = attn.dim(1);
        const std::size_t count = std::min(etokens, order.size());
        for (std::size_t t = 0; t < count; ++t) {
          // spread the picks from the lowest to the highest frequency cube
          const auto [a, b] = order[count > 1 ? t * (order.size() - 1) / (count - 1) : 0];
          const std::size_t cube = a * per_row + b;
          Tensor<double> m({d, d});
          for (std::size_t i = 0; i < d * d; ++i) m[i] = attn[cube * heads * d * d + i];
          export_heatmap(m, edir / ("saf_token" + std::to_string(t + 1) + ".pgm"));
        }
      }
      std::cout << "wrote " << idx << " gating heatmaps to " << edir.string() << '\n';
    } else if (sweep->parsed()) {
      const Tensor<float> x = read_hsic(wscene);
      std::ofstream file;
      if (!wcsv.empty()) file = open_out(wcsv);
      std::ostream& out = wcsv.empty() ? std::cout : file;
      out << "kernel,params,psnr\n";
      const auto mask = random_mask<float>(x.dim(0), x.dim(1), wseed, true);
      auto sc = make_sensing<float>(mask, x.dim(2), wd);
      const Tensor<float> y = simulate(x, sc, wseed);
      for (std::size_t k : kernels) {
        CmdtConfig cfg;
        cfg.height = x.dim(0);
        cfg.width = x.dim(1);
        cfg.bands = x.dim(2);
        cfg.window = k;
        cfg.heads = 1;
        UnfoldingConfig u;
        u.stages = wstages;
        u.steps = wsteps;
        u.seed = wseed;
        u.augment = false;
        UnfoldingNet<float> net(cfg, wstages, true, wseed);
        train(net, {x}, sc, u);
        out << k << ',' << net.parameter_count() << ',' << psnr(net.reconstruct(y, sc), x).mean << '\n';
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
