#include "novelscan/config.hpp"
#include "novelscan/errors.hpp"
#include "novelscan/pipeline.hpp"
#include "novelscan/random.hpp"
#include "novelscan/scan.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace novelscan;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MethodScan fake_scan() {
  MethodScan s;
  s.method = Method::nplm;
  s.components = {0.5, 2.0};
  for (int i = 0; i < 50; ++i) s.null_toys.push_back({0.1 * i, 0.2 * i});
  s.f_signal = {0.01, 0.05};
  s.signal_toys.resize(2);
  for (int i = 0; i < 10; ++i) {
    s.signal_toys[0].push_back({2.0 + 0.1 * i, 4.0 + i});
    s.signal_toys[1].push_back({100.0 + i, 200.0});
  }
  return s;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.n_clusters = 3;
  c.held_out_class = 2;
  c.n_per_class = 900;
  c.contrastive.epochs = 2;
  c.contrastive.batch_size = 200;
  c.contrastive.temperature = 0.1;
  c.sizes = {300, 100};
  c.f_signal = {0.05, 0.2};
  c.n_toys = 6;
  c.n_signal_toys = 3;
  c.methods = {Method::nplm, Method::mahalanobis, Method::supervised};
  c.classifier.epochs = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Config, DefaultsMatchTableSizes) {
  const ExperimentConfig c;
  EXPECT_EQ(c.sizes.n_ref, 10000u);
  EXPECT_EQ(c.sizes.n_data, 2000u);
  EXPECT_EQ(c.n_toys, 500);
  EXPECT_EQ(c.architecture.embed_dim, 4);
  EXPECT_EQ(c.f_signal, (std::vector<double>{0.005, 0.01, 0.02, 0.05, 0.10}));
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TextRoundTrip) {
  auto c = small_config();
  c.noise_dims = 30;
  c.label_noise = 0.1;
  c.architecture.embed_dim = 32;
  c.fixed_reference = true;
  const auto text = c.to_text();
  const auto back = ExperimentConfig::parse(text);
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.noise_dims, 30);
  EXPECT_EQ(back.methods, c.methods);
}

TEST(Config, ParsesCommentsAndRejectsUnknownKeys) {
  const auto c = ExperimentConfig::parse("# comment\n[scan]\nn_toys = 7  # trailing\nmethods = [nplm, mmd]\n");
  EXPECT_EQ(c.n_toys, 7);
  EXPECT_EQ(c.methods, (std::vector<Method>{Method::nplm, Method::mmd}));
  EXPECT_THROW(ExperimentConfig::parse("[scan]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("[scan]\nn_toys = many\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("[scan]\nf_signal = [0.1, 0.05]\n").validate(), ConfigError);
  EXPECT_THROW(ExperimentConfig::load("/nonexistent/novelscan.toml"), IoError);
}

TEST(Scan, QuantileType7) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 1.0 / 3.0), 2.0);
}

TEST(Scan, ToyCsvRoundTrip) {
  const std::vector<MethodScan> scans{fake_scan()};
  const auto path = fs::temp_directory_path() / "novelscan_test_toys.csv";
  write_toy_csv(path, scans);
  const auto text = slurp(path);
  EXPECT_EQ(text.substr(0, text.find('\n')), "kind,f_S,width,toy,t");
  const auto back = read_toy_csv(path);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].null_toys, scans[0].null_toys);
  EXPECT_EQ(back[0].signal_toys, scans[0].signal_toys);
  EXPECT_EQ(back[0].components, scans[0].components);
  fs::remove(path);
}

TEST(Scan, SummariesSaturateAtCap) {
  const std::vector<MethodScan> scans{fake_scan()};
  const auto summary = summary_csv(scans);
  EXPECT_EQ(summary.substr(0, summary.find('\n')), "method,f_S,width,z_empirical,z_asymptotic,z_combined,saturated");
  const auto z = z_summary_csv(scans);
  EXPECT_EQ(z.substr(0, z.find('\n')), "kind,f_S,z_empirical_median,z_low,z_high");
  const auto points = evaluate_scan(scans[0]);
  ASSERT_EQ(points.size(), 2u);
  for (const auto& t : points[1].toys) {
    EXPECT_TRUE(t.report.any_saturated);
    EXPECT_NEAR(t.report.z_combined, z_score(1.0 / 51.0), 1e-12);
  }
  const auto pw = per_width_csv(scans);
  EXPECT_NE(pw.find("z_width_"), std::string::npos);
}

TEST(Pipeline, GitBlobHash) {
  EXPECT_EQ(content_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(content_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Pipeline, SplitFractions) {
  const auto c = small_config();
  const auto splits = split_data(generate(c), 3);
  EXPECT_EQ(splits.background_train.size(), 900u);
  EXPECT_EQ(splits.background_val.size(), 180u);
  EXPECT_EQ(splits.background_test.size(), 720u);
  EXPECT_EQ(splits.signal_train.size(), 360u);
  EXPECT_EQ(splits.signal_template.size(), 180u);
  EXPECT_EQ(splits.signal_test.size(), 360u);
}

TEST(Pipeline, EndToEndIsDeterministicAcrossThreads) {
  auto c = small_config();
  const auto dir1 = fs::temp_directory_path() / "novelscan_test_run1";
  const auto dir2 = fs::temp_directory_path() / "novelscan_test_run2";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  c.threads = 1;
  run_pipeline(c, dir1);
  c.threads = 3;
  run_pipeline(c, dir2);
  for (const char* f : {"scan/summary.csv", "scan/z_summary.csv", "scan/toys.csv", "scan/z_curves.csv"})
    EXPECT_EQ(slurp(dir1 / f), slurp(dir2 / f)) << f;
  EXPECT_TRUE(fs::exists(dir1 / "data" / "provenance.json"));
  EXPECT_TRUE(fs::exists(dir1 / "model" / "encoder.nven"));
  const auto prov = nlohmann::json::parse(slurp(dir1 / "data" / "provenance.json"));
  EXPECT_EQ(prov["files"]["background.bin"], file_hash(dir1 / "data" / "background.bin"));
  EXPECT_EQ(ExperimentConfig::parse(prov["config_text"].get<std::string>()).seed, c.seed);

  const auto before = slurp(dir1 / "scan" / "z_curves.csv");
  write_report(dir1 / "scan");
  EXPECT_EQ(slurp(dir1 / "scan" / "z_curves.csv"), before);
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}
