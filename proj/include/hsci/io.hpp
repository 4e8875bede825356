#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hsci/hfc.hpp"
#include "hsci/unfolding.hpp"

namespace hsci {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little, "hsci i/o assumes a little-endian host");

namespace io {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

class Writer {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string what) : bytes_(b), what_(std::move(what)) {}

  template <class U>
  U get(const char* field) {
    U v;
    std::memcpy(&v, take(sizeof(U), field), sizeof(U));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* field) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(what_ + ": truncated while reading " + field + " at byte offset " + std::to_string(pos_) +
                        " (need " + std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) +
                        " available)");
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw FormatError(what_ + ": " + msg + " at byte offset " + std::to_string(at));
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace io

// HSIC container: "HSIC", u16 version, u32 H, W, C, u8 dtype (1 = f32),
// two reserved zero bytes, then band-major f32 payload.
inline constexpr std::uint16_t kHsicVersion = 1;
inline constexpr std::size_t kHsicHeaderBytes = 21;

template <class T>
std::vector<std::uint8_t> encode_hsic(const Tensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("hsic: expected an H x W x C cube, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  io::Writer wr;
  wr.put_bytes("HSIC", 4);
  wr.put<std::uint16_t>(kHsicVersion);
  wr.put<std::uint32_t>(std::uint32_t(h));
  wr.put<std::uint32_t>(std::uint32_t(w));
  wr.put<std::uint32_t>(std::uint32_t(c));
  wr.put<std::uint8_t>(1);
  wr.put<std::uint16_t>(0);
  wr.bytes.reserve(kHsicHeaderBytes + 4 * x.size());
  for (std::size_t b = 0; b < c; ++b)
    for (std::size_t p = 0; p < h * w; ++p) wr.put<float>(float(x[p * c + b]));
  return std::move(wr.bytes);
}

template <class T = float>
Tensor<T> decode_hsic(const std::vector<std::uint8_t>& bytes, bool normalize_peak = false,
                      const std::string& what = "hsic") {
  io::Reader rd(bytes, what);
  const std::uint8_t* magic = rd.take(4, "magic");
  if (std::memcmp(magic, "HSIC", 4) != 0) rd.fail("bad magic (expected \"HSIC\")", 0);
  const auto version = rd.get<std::uint16_t>("version");
  if (version != kHsicVersion) rd.fail("unsupported version " + std::to_string(version), 4);
  const auto h = rd.get<std::uint32_t>("height");
  const auto w = rd.get<std::uint32_t>("width");
  const auto c = rd.get<std::uint32_t>("bands");
  const auto dtype = rd.get<std::uint8_t>("dtype");
  if (dtype != 1) rd.fail("unsupported dtype code " + std::to_string(dtype), 18);
  rd.get<std::uint16_t>("reserved");
  if (h == 0 || w == 0 || c == 0) rd.fail("zero dimension in header", 6);
  const std::uint64_t expected = 4ull * h * w * c;
  if (rd.remaining() != expected) {
    rd.fail("payload length mismatch: expected " + std::to_string(expected) + " bytes, found " +
                std::to_string(rd.remaining()),
            rd.offset());
  }
  Tensor<T> x({h, w, c});
  const std::uint8_t* p = rd.take(expected, "payload");
  for (std::size_t b = 0; b < c; ++b)
    for (std::size_t q = 0; q < std::size_t(h) * w; ++q) {
      float v;
      std::memcpy(&v, p + 4 * (b * h * w + q), 4);
      x[q * c + b] = T(v);
    }
  if (normalize_peak) {
    T peak = 0;
    for (T v : x.values()) peak = std::max(peak, std::abs(v));
    if (peak > 0)
      for (auto& v : x.values()) v /= peak;
  }
  return x;
}

template <class T>
void write_hsic(const Tensor<T>& x, const std::filesystem::path& path) {
  io::write_file(path, encode_hsic(x));
}

template <class T = float>
Tensor<T> read_hsic(const std::filesystem::path& path, bool normalize_peak = false) {
  return decode_hsic<T>(io::read_file(path), normalize_peak, path.string());
}

// ---------------------------------------------------------------------------
// CMDW checkpoints: "CMDW", u16 version, config block of u32 fields, u32
// tensor count, then per tensor: u32 name length, UTF-8 name, u32 rank,
// u32 dims, f32 values.

inline constexpr std::uint16_t kCmdwVersion = 1;

struct CheckpointHeader {
  CmdtConfig cfg;
  std::size_t stages = 0;
  bool share = true;
};

namespace detail {

inline std::vector<std::pair<std::string, std::uint32_t>> cmdw_fields(const CheckpointHeader& h) {
  return {{"height", std::uint32_t(h.cfg.height)},   {"width", std::uint32_t(h.cfg.width)},
          {"bands", std::uint32_t(h.cfg.bands)},     {"window", std::uint32_t(h.cfg.window)},
          {"heads", std::uint32_t(h.cfg.heads)},     {"stages", std::uint32_t(h.stages)},
          {"embed", std::uint32_t(h.cfg.embed)},     {"ffn_mult", std::uint32_t(h.cfg.ffn_mult)},
          {"ipe_hidden", std::uint32_t(h.cfg.ipe_hidden)}, {"share", std::uint32_t(h.share ? 1 : 0)}};
}

}  // namespace detail

namespace detail {

inline void put_tensor(io::Writer& wr, const std::string& name, const Shape& shape, const std::vector<float>& values) {
  wr.put<std::uint32_t>(std::uint32_t(name.size()));
  wr.put_bytes(name.data(), name.size());
  wr.put<std::uint32_t>(std::uint32_t(shape.size()));
  for (std::size_t d : shape) wr.put<std::uint32_t>(std::uint32_t(d));
  for (float v : values) wr.put<float>(v);
}

struct RawTensor {
  std::size_t offset;
  std::string name;
  Shape shape;
  std::vector<float> values;
};

inline RawTensor get_tensor(io::Reader& rd) {
  RawTensor t;
  t.offset = rd.offset();
  const auto len = rd.get<std::uint32_t>("name length");
  t.name.assign(reinterpret_cast<const char*>(rd.take(len, "name")), len);
  const auto rank = rd.get<std::uint32_t>("rank");
  std::uint64_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.shape.push_back(rd.get<std::uint32_t>("dim"));
    n *= t.shape.back();
  }
  if (n > rd.remaining() / 4) rd.fail("tensor '" + t.name + "' extends past end of file", t.offset);
  t.values.resize(n);
  std::memcpy(t.values.data(), rd.take(4 * n, "tensor data"), 4 * n);
  return t;
}

}  // namespace detail

/// Network weights, optionally followed by the sensing setup the model was
/// trained for (tensors "sensing.mask" and "sensing.step").
template <class T>
std::vector<std::uint8_t> encode_checkpoint(UnfoldingNet<T>& net, const SensingConfig<T>* sensing = nullptr) {
  io::Writer wr;
  wr.put_bytes("CMDW", 4);
  wr.put<std::uint16_t>(kCmdwVersion);
  for (const auto& [name, v] : detail::cmdw_fields({net.config(), net.stages(), net.shared()})) wr.put(v);
  std::uint32_t count = sensing ? 2 : 0;
  net.visit([&](Param<T>&) { ++count; });
  wr.put(count);
  net.visit([&](Param<T>& p) {
    detail::put_tensor(wr, p.name, p.value.shape(), std::vector<float>(p.value.values().begin(), p.value.values().end()));
  });
  if (sensing) {
    const auto& m = sensing->mask.values();
    detail::put_tensor(wr, "sensing.mask", sensing->mask.shape(), std::vector<float>(m.begin(), m.end()));
    detail::put_tensor(wr, "sensing.step", {1}, {float(sensing->dispersion_step)});
  }
  return std::move(wr.bytes);
}

/// Reads only the configuration block (to construct a matching network).
inline CheckpointHeader peek_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what = "cmdw") {
  io::Reader rd(bytes, what);
  if (std::memcmp(rd.take(4, "magic"), "CMDW", 4) != 0) rd.fail("bad magic (expected \"CMDW\")", 0);
  const auto version = rd.get<std::uint16_t>("version");
  if (version != kCmdwVersion) rd.fail("unsupported version " + std::to_string(version), 4);
  CheckpointHeader h;
  h.cfg.height = rd.get<std::uint32_t>("height");
  h.cfg.width = rd.get<std::uint32_t>("width");
  h.cfg.bands = rd.get<std::uint32_t>("bands");
  h.cfg.window = rd.get<std::uint32_t>("window");
  h.cfg.heads = rd.get<std::uint32_t>("heads");
  h.stages = rd.get<std::uint32_t>("stages");
  h.cfg.embed = rd.get<std::uint32_t>("embed");
  h.cfg.ffn_mult = rd.get<std::uint32_t>("ffn_mult");
  h.cfg.ipe_hidden = rd.get<std::uint32_t>("ipe_hidden");
  h.share = rd.get<std::uint32_t>("share") != 0;
  return h;
}

/// Loads weights into net (and the stored sensing setup, if requested and
/// present). Any config field or tensor mismatch is rejected before net is
/// modified.
template <class T>
void decode_checkpoint(const std::vector<std::uint8_t>& bytes, UnfoldingNet<T>& net,
                       const std::string& what = "cmdw", std::optional<SensingConfig<T>>* sensing = nullptr) {
  const CheckpointHeader file = peek_checkpoint(bytes, what);
  const auto want = detail::cmdw_fields({net.config(), net.stages(), net.shared()});
  const auto have = detail::cmdw_fields(file);
  std::string mismatch;
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].second != have[i].second) {
      mismatch += (mismatch.empty() ? "" : ", ") + want[i].first + " (file " + std::to_string(have[i].second) +
                  ", model " + std::to_string(want[i].second) + ")";
    }
  }
  if (!mismatch.empty()) throw FormatError(what + ": config mismatch: " + mismatch);

  io::Reader rd(bytes, what);
  rd.take(6 + 4 * want.size(), "header");
  std::vector<Param<T>*> params = net.parameters();
  const std::size_t count_at = rd.offset();
  const auto count = rd.get<std::uint32_t>("tensor count");
  if (count != params.size() && count != params.size() + 2) {
    rd.fail("tensor count " + std::to_string(count) + " does not fit the model's " + std::to_string(params.size()),
            count_at);
  }
  std::vector<Tensor<T>> loaded;
  for (Param<T>* p : params) {
    detail::RawTensor t = detail::get_tensor(rd);
    if (t.name != p->name) rd.fail("expected tensor '" + p->name + "', found '" + t.name + "'", t.offset);
    if (t.shape != p->value.shape()) {
      rd.fail("tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", model expects " +
                  shape_str(p->value.shape()),
              t.offset);
    }
    loaded.emplace_back(t.shape, std::vector<T>(t.values.begin(), t.values.end()));
  }
  std::optional<SensingConfig<T>> sc;
  if (count == params.size() + 2) {
    detail::RawTensor mask = detail::get_tensor(rd);
    detail::RawTensor step = detail::get_tensor(rd);
    if (mask.name != "sensing.mask" || mask.shape.size() != 2 || step.name != "sensing.step" || step.values.size() != 1) {
      rd.fail("malformed sensing block", mask.offset);
    }
    sc = make_sensing<T>(Tensor<T>(mask.shape, std::vector<T>(mask.values.begin(), mask.values.end())),
                         file.cfg.bands, std::size_t(step.values[0]));
  }
  if (rd.remaining() != 0) rd.fail(std::to_string(rd.remaining()) + " trailing bytes", rd.offset());
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = std::move(loaded[i]);
  if (sensing) *sensing = std::move(sc);
}

template <class T>
void save_checkpoint(UnfoldingNet<T>& net, const std::filesystem::path& path,
                     const SensingConfig<T>* sensing = nullptr) {
  io::write_file(path, encode_checkpoint(net, sensing));
}

template <class T = float>
struct LoadedModel {
  std::unique_ptr<UnfoldingNet<T>> net;
  std::optional<SensingConfig<T>> sensing;
};

/// Builds a network from the checkpoint's own config and loads it.
template <class T = float>
LoadedModel<T> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  const CheckpointHeader h = peek_checkpoint(bytes, path.string());
  LoadedModel<T> m;
  m.net = std::make_unique<UnfoldingNet<T>>(h.cfg, h.stages, h.share, 0);
  decode_checkpoint(bytes, *m.net, path.string(), &m.sensing);
  return m;
}

// ---------------------------------------------------------------------------
// PGM heatmaps.

/// Gray levels floor((v - lo) / (hi - lo) * 255), clamped to 0..255. NaN maps
/// to 0.
inline std::vector<std::uint8_t> quantize(const Tensor<double>& m, double lo, double hi) {
  std::vector<std::uint8_t> out(m.size());
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = m[i];
    if (!std::isfinite(v)) {
      out[i] = 0;
      continue;
    }
    const double t = std::floor((v - lo) / span * 255.0);
    out[i] = std::uint8_t(std::clamp(t, 0.0, 255.0));
  }
  return out;
}

struct HeatmapRange {
  bool min_max = true;
  double lo = 0, hi = 1;  // used when min_max is false
};

inline std::vector<std::uint8_t> encode_pgm(const Tensor<double>& m, const HeatmapRange& r) {
  if (m.rank() != 2) throw DimensionError("pgm: expected a 2-D matrix, got " + shape_str(m.shape()));
  double lo = r.lo, hi = r.hi;
  if (r.min_max) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (double v : m.values())
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    if (!(lo <= hi)) lo = hi = 0;
  }
  const std::string header = "P5\n" + std::to_string(m.dim(1)) + " " + std::to_string(m.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const auto px = quantize(m, lo, hi);
  bytes.insert(bytes.end(), px.begin(), px.end());
  return bytes;
}

inline void export_heatmap(const Tensor<double>& m, const std::filesystem::path& path, const HeatmapRange& r = {}) {
  io::write_file(path, encode_pgm(m, r));
}

// ---------------------------------------------------------------------------
// CSV exports.

/// corr_maps.csv: domain,i,j,corr (both C x C maps; NaN for undefined).
inline void write_corr_maps_csv(const CorrelationReport& r, std::ostream& out) {
  out << "domain,i,j,corr\n";
  const std::pair<const char*, const Tensor<double>*> maps[] = {{"space", &r.space_map}, {"freq", &r.freq_map}};
  for (const auto& [name, m] : maps)
    for (std::size_t i = 0; i < m->dim(0); ++i)
      for (std::size_t j = 0; j < m->dim(1); ++j) out << name << ',' << i << ',' << j << ',' << m->at(i, j) << '\n';
}

/// token_curve.csv: token,u,v,mean_corr (low to high frequency).
inline void write_token_curve_csv(const TokenCorrelationCurve& c, std::ostream& out) {
  out << "token,u,v,mean_corr\n";
  for (std::size_t t = 0; t < c.mean_corr.size(); ++t)
    out << t + 1 << ',' << c.u[t] << ',' << c.v[t] << ',' << c.mean_corr[t] << '\n';
}

struct CorpusEntry {
  std::string path;
  double space_avg = 0;
  double freq_avg = 0;
};

struct CorpusStats {
  std::vector<CorpusEntry> cubes;
  Histogram space{50, -1, 1};
  Histogram freq{50, -1, 1};
  std::size_t skipped = 0;
};

/// Per-cube averages and 50-bin histograms over [-1, 1]. Unreadable or
/// unsuitable files are skipped with a warning.
inline CorpusStats corpus_stats(const std::vector<std::filesystem::path>& paths, std::ostream* warn = nullptr) {
  CorpusStats s;
  for (const auto& p : paths) {
    try {
      const auto rep = correlation_maps(read_hsic<double>(p));
      s.cubes.push_back({p.string(), rep.space_avg, rep.freq_avg});
      s.space.add(rep.space_avg);
      s.freq.add(rep.freq_avg);
    } catch (const std::exception& e) {
      ++s.skipped;
      if (warn) *warn << "warning: skipping " << p.string() << ": " << e.what() << '\n';
    }
  }
  return s;
}

/// corpus_hist.csv: section,label,lo,hi,space,freq. "cube" rows carry the
/// per-cube averages; "hist" rows carry bin edges and counts.
inline void write_corpus_csv(const CorpusStats& s, std::ostream& out) {
  out << "section,label,lo,hi,space,freq\n";
  for (const auto& c : s.cubes) out << "cube," << c.path << ",,," << c.space_avg << ',' << c.freq_avg << '\n';
  for (std::size_t b = 0; b < s.space.counts.size(); ++b)
    out << "hist," << b << ',' << s.space.bin_lo(b) << ',' << s.space.bin_hi(b) << ',' << s.space.counts[b] << ','
        << s.freq.counts[b] << '\n';
}

}  // namespace hsci
