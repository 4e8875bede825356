#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace hsci;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path d = fs::temp_directory_path() / ("hsci_io_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

CmdtConfig tiny_config() {
  CmdtConfig c;
  c.height = c.width = 8;
  c.bands = 4;
  c.window = 2;
  c.heads = 2;
  c.ipe_hidden = 3;
  return c;
}

}  // namespace

TEST(Hsic, OneVoxelLayout) {
  Tensor<float> x({1, 1, 1}, {1.5f});
  auto b = encode_hsic(x);
  ASSERT_EQ(b.size(), 21u + 4u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "HSIC");
  EXPECT_EQ(b[4], 1);  // version 1, little endian
  EXPECT_EQ(b[5], 0);
  EXPECT_EQ(b[6], 1);   // H
  EXPECT_EQ(b[10], 1);  // W
  EXPECT_EQ(b[14], 1);  // C
  EXPECT_EQ(b[18], 1);  // dtype f32
  EXPECT_EQ(b[19], 0);
  EXPECT_EQ(b[20], 0);
  float v;
  std::memcpy(&v, b.data() + 21, 4);
  EXPECT_EQ(v, 1.5f);
}

TEST(Hsic, PayloadIsBandMajor) {
  Tensor<float> x({1, 2, 2}, {1, 2, 3, 4});  // pixel 0 = (1,2), pixel 1 = (3,4)
  auto b = encode_hsic(x);
  std::vector<float> payload(4);
  std::memcpy(payload.data(), b.data() + 21, 16);
  EXPECT_EQ(payload, (std::vector<float>{1, 3, 2, 4}));
}

TEST(Hsic, FileRoundTripIsBitExact) {
  auto x = hsci::testing::random_tensor<float>({7, 5, 3}, 4, -10, 10);
  x[3] = std::numeric_limits<float>::denorm_min();
  x[4] = -0.0f;
  const auto p = temp_dir() / "cube.hsic";
  write_hsic(x, p);
  auto y = read_hsic(p);
  ASSERT_EQ(y.shape(), x.shape());
  EXPECT_EQ(std::memcmp(x.data(), y.data(), 4 * x.size()), 0);
  EXPECT_EQ(encode_hsic(y), io::read_file(p));
}

TEST(Hsic, ErrorsNameOffsetsAndLengths) {
  auto b = encode_hsic(Tensor<float>({2, 2, 1}, 1.0f));
  auto trunc = b;
  trunc.resize(trunc.size() - 4);
  const std::string e = error_of([&] { decode_hsic(trunc); });
  EXPECT_NE(e.find("expected 16 bytes, found 12"), std::string::npos) << e;
  EXPECT_NE(e.find("byte offset 21"), std::string::npos) << e;
  auto bad = b;
  bad[0] = 'X';
  EXPECT_NE(error_of([&] { decode_hsic(bad); }).find("bad magic"), std::string::npos);
  auto ver = b;
  ver[4] = 9;
  EXPECT_NE(error_of([&] { decode_hsic(ver); }).find("byte offset 4"), std::string::npos);
  std::vector<std::uint8_t> tiny(b.begin(), b.begin() + 10);
  EXPECT_NE(error_of([&] { decode_hsic(tiny); }).find("truncated"), std::string::npos);
  EXPECT_THROW(read_hsic("/nonexistent/cube.hsic"), FormatError);
}

TEST(Hsic, OptionalPeakNormalization) {
  auto b = encode_hsic(Tensor<float>({1, 2, 1}, {2.0f, 4.0f}));
  EXPECT_EQ(hsci::testing::to_vec(decode_hsic(b)), (std::vector<float>{2, 4}));
  EXPECT_EQ(hsci::testing::to_vec(decode_hsic(b, true)), (std::vector<float>{0.5f, 1.0f}));
}

TEST(Cmdw, RoundTripIsBitExact) {
  UnfoldingNet<float> a(tiny_config(), 2, false, 1), b(tiny_config(), 2, false, 2);
  hsci::testing::jitter_params<float>(a, 3);
  auto bytes = encode_checkpoint(a);
  decode_checkpoint(bytes, b);
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
  EXPECT_EQ(encode_checkpoint(b), bytes);
}

TEST(Cmdw, SensingBlockAndFileLoad) {
  UnfoldingNet<float> a(tiny_config(), 3, true, 1);
  auto sc = make_sensing<float>(random_mask<float>(8, 8, 5), 4, 2);
  const auto p = temp_dir() / "model.cmdw";
  save_checkpoint(a, p, &sc);
  auto m = load_checkpoint(p);
  ASSERT_TRUE(m.sensing.has_value());
  EXPECT_EQ(m.sensing->mask, sc.mask);
  EXPECT_EQ(m.sensing->dispersion_step, 2u);
  EXPECT_EQ(m.net->stages(), 3u);
  EXPECT_EQ(encode_checkpoint(*m.net, &sc), io::read_file(p));
}

TEST(Cmdw, RejectsConfigMismatch) {
  UnfoldingNet<float> a(tiny_config(), 2, true, 1);
  auto bytes = encode_checkpoint(a);
  UnfoldingNet<float> three(tiny_config(), 3, true, 1);
  const std::string e = error_of([&] { decode_checkpoint(bytes, three); });
  EXPECT_NE(e.find("stages (file 2, model 3)"), std::string::npos) << e;
  auto cfg = tiny_config();
  cfg.heads = 1;
  UnfoldingNet<float> heads(cfg, 2, true, 1);
  EXPECT_NE(error_of([&] { decode_checkpoint(bytes, heads); }).find("heads"), std::string::npos);
  auto bad = bytes;
  bad.resize(bad.size() - 1);
  EXPECT_THROW(decode_checkpoint(bad, a), FormatError);
}

TEST(Pgm, FixedRangeFloorMapping) {
  Tensor<double> m({2, 2}, {0, 1, 0.5, 0.25});
  auto b = encode_pgm(m, HeatmapRange{false, 0, 1});
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(b.size(), header.size() + 4);
  EXPECT_EQ(std::string(b.begin(), b.begin() + long(header.size())), header);
  EXPECT_EQ(std::vector<int>(b.end() - 4, b.end()), (std::vector<int>{0, 255, 127, 63}));
  auto ones = encode_pgm(Tensor<double>({3, 2}, 1.0), HeatmapRange{false, 0, 1});
  for (std::size_t i = ones.size() - 6; i < ones.size(); ++i) EXPECT_EQ(ones[i], 255);
}

TEST(Pgm, MinMaxMappingAndIndependentParse) {
  Tensor<double> m({2, 3}, {-1, 0, 1, 2, 3, 4});
  const auto p = temp_dir() / "map.pgm";
  export_heatmap(m, p);
  std::ifstream in(p, std::ios::binary);
  std::string magic;
  int w, h, maxv;
  in >> magic >> w >> h >> maxv;
  in.get();
  std::vector<unsigned char> px(6);
  in.read(reinterpret_cast<char*>(px.data()), 6);
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 3);
  EXPECT_EQ(h, 2);
  EXPECT_EQ(maxv, 255);
  EXPECT_EQ(std::vector<int>(px.begin(), px.end()), (std::vector<int>{0, 51, 102, 153, 204, 255}));
}

TEST(Csv, CorrelationAndTokenSchemas) {
  SceneSpec s;
  s.height = s.width = 8;
  s.bands = 3;
  auto x = gen_scene<double>(s);
  std::ostringstream a, b;
  write_corr_maps_csv(correlation_maps(x), a);
  write_token_curve_csv(token_correlation(x, 4), b);
  std::istringstream ia(a.str()), ib(b.str());
  std::string line;
  std::getline(ia, line);
  EXPECT_EQ(line, "domain,i,j,corr");
  std::size_t rows = 0;
  while (std::getline(ia, line)) ++rows;
  EXPECT_EQ(rows, 2u * 9u);
  std::getline(ib, line);
  EXPECT_EQ(line, "token,u,v,mean_corr");
  std::getline(ib, line);
  EXPECT_EQ(line.substr(0, 6), "1,0,0,");
}

TEST(Csv, CorpusStatsSkipsUnreadable) {
  const auto d = temp_dir();
  SceneSpec s;
  s.height = s.width = 8;
  s.bands = 3;
  write_hsic(gen_scene<float>(s), d / "a.hsic");
  s.seed = 1;
  write_hsic(gen_scene<float>(s), d / "b.hsic");
  std::ofstream(d / "junk.hsic") << "junk";
  std::ostringstream warn, out;
  auto st = corpus_stats({d / "a.hsic", d / "b.hsic", d / "junk.hsic"}, &warn);
  EXPECT_EQ(st.cubes.size(), 2u);
  EXPECT_EQ(st.skipped, 1u);
  EXPECT_NE(warn.str().find("junk.hsic"), std::string::npos);
  write_corpus_csv(st, out);
  std::istringstream in(out.str());
  std::string line;
  std::size_t cubes = 0, hist = 0;
  std::getline(in, line);
  EXPECT_EQ(line, "section,label,lo,hi,space,freq");
  while (std::getline(in, line)) (line.rfind("cube,", 0) == 0 ? cubes : hist)++;
  EXPECT_EQ(cubes, 2u);
  EXPECT_EQ(hist, 50u);
}

TEST(Scene, SeededDeterminismAndRange) {
  for (auto kind : {SceneKind::rank1_smooth, SceneKind::piecewise_constant, SceneKind::cosine_modes, SceneKind::noise}) {
    SceneSpec s;
    s.kind = kind;
    s.height = 8;
    s.width = 12;
    s.bands = 3;
    s.seed = 4;
    auto a = gen_scene<float>(s), b = gen_scene<float>(s);
    EXPECT_EQ(a, b);
    for (float v : a.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_THROW(parse_scene_kind("plaid"), ValueError);
}
