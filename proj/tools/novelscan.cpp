// novelscan command-line driver.
#include "novelscan/baselines.hpp"
#include "novelscan/calibration.hpp"
#include "novelscan/config.hpp"
#include "novelscan/embedding.hpp"
#include "novelscan/errors.hpp"
#include "novelscan/nplm.hpp"
#include "novelscan/pipeline.hpp"
#include "novelscan/random.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace novelscan;

namespace {

struct Options {
  std::string config_path;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string ideal_checkpoint;
  std::string methods;
  std::optional<std::uint64_t> seed;
  std::optional<double> label_noise;
  std::optional<int> embed_dim;
  std::optional<int> toys;
  std::optional<int> threads;
  bool ideal = false;
  bool fixed_reference = false;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.label_noise) c.label_noise = *o.label_noise;
  if (o.embed_dim) c.architecture.embed_dim = *o.embed_dim;
  if (o.toys) c.n_toys = *o.toys;
  if (o.threads) c.threads = *o.threads;
  if (o.fixed_reference) c.fixed_reference = true;
  if (!o.methods.empty()) {
    c.methods.clear();
    std::stringstream ss(o.methods);
    for (std::string m; std::getline(ss, m, ',');)
      if (!m.empty()) c.methods.push_back(parse_method(m));
  }
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

int cmd_generate(const Options& o) {
  require(o.out, "--out");
  const auto config = resolve(o);
  const auto prov = write_generated(o.out, generate(config), config);
  for (const auto& [name, hash] : prov["files"].items()) std::cout << name << ' ' << hash.get<std::string>() << '\n';
  return 0;
}

int cmd_train_embed(const Options& o) {
  require(o.data, "--data");
  require(o.out, "--out");
  const auto config = resolve(o);
  const auto splits = split_data(load_generated(o.data), stream_seed(config, SeedStream::splits));
  const auto result = train_encoder(config, splits, o.ideal);
  ensure_dir(o.out);
  const std::string stem = o.ideal ? "ideal_encoder" : "encoder";
  save_encoder(fs::path(o.out) / (stem + ".nven"), result.model);
  write_text(fs::path(o.out) / (stem + "_log.jsonl"), training_log_jsonl(result.log));
  write_text(fs::path(o.out) / (stem + "_config.toml"), config.to_text());
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    std::cout << "epoch " << last.epoch << " train_loss " << last.train_loss << " val_loss " << last.val_loss << '\n';
  }
  return 0;
}

int cmd_embed(const Options& o) {
  require(o.data, "--data");
  require(o.checkpoint, "--checkpoint");
  require(o.out, "--out");
  const auto config = resolve(o);
  const auto encoder = load_encoder(o.checkpoint);
  const auto data = load_generated(o.data);
  ensure_dir(o.out);
  const std::string ext = "." + config.data_format;
  write_dataset(fs::path(o.out) / ("background" + ext), embed_dataset(encoder, data.background));
  if (!data.signal.empty()) write_dataset(fs::path(o.out) / ("signal" + ext), embed_dataset(encoder, data.signal));
  return 0;
}

int cmd_scan(const Options& o) {
  require(o.data, "--data");
  require(o.checkpoint, "--checkpoint");
  require(o.out, "--out");
  const auto config = resolve(o);
  const auto splits = split_data(load_generated(o.data), stream_seed(config, SeedStream::splits));
  std::optional<MlpEncoder> ideal;
  if (!o.ideal_checkpoint.empty()) ideal = load_encoder(o.ideal_checkpoint);
  const auto outputs = run_scan(config, splits, load_encoder(o.checkpoint), ideal);
  write_scan(o.out, outputs, config);
  std::cout << outputs.summary;
  return 0;
}

int cmd_report(const Options& o) {
  require(o.out, "--out");
  write_report(o.out);
  std::ifstream in(fs::path(o.out) / "z_curves.csv");
  std::cout << in.rdbuf();
  return 0;
}

int cmd_run(const Options& o) {
  require(o.out, "--out");
  const auto config = resolve(o);
  run_pipeline(config, o.out);
  std::ifstream in(fs::path(o.out) / "scan" / "z_summary.csv");
  std::cout << in.rdbuf();
  return 0;
}

// Fast invariant checks on small instances.
int cmd_selftest() {
  int failures = 0;
  const auto check = [&](const std::string& name, bool ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << '\n';
    if (!ok) ++failures;
  };
  Rng rng(7);
  std::normal_distribution<double> normal;

  {
    Matrix k(40, 8), kc(8, 8);
    Matrix pts(40, 2), centers(8, 2);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = normal(rng);
    centers = pts.topRows(8);
    k = kernel_matrix(pts, centers, 1.0);
    kc = kernel_matrix(centers, centers, 1.0);
    std::vector<int> y(40, 0);
    for (int i = 30; i < 40; ++i) y[static_cast<std::size_t>(i)] = 1;
    Vector w(8);
    for (Eigen::Index i = 0; i < 8; ++i) w(i) = 0.3 * normal(rng);
    const auto v = nplm_objective(w, k, y, 0.3, 1e-3, kc);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 8; ++i) {
      Vector a = w, b = w;
      a(i) += 1e-6;
      b(i) -= 1e-6;
      const double fd = (nplm_objective(a, k, y, 0.3, 1e-3, kc).loss - nplm_objective(b, k, y, 0.3, 1e-3, kc).loss) / 2e-6;
      worst = std::max(worst, std::abs(fd - v.grad(i)) / std::max(1e-8, std::abs(fd)));
    }
    check("nplm objective gradient matches finite differences", worst < 1e-5);
    const auto fit = fit_weights(k, kc, y, 0.3, 1e-3, 50, 1e-7);
    check("nplm fit converges", fit.grad_norm < 1e-7);
  }
  check("chi2 survival at 3.841 with 1 dof", std::abs(asymptotic_pvalue(3.841, 1.0) - 0.05) < 1e-4);
  check("z of p = 1/501", std::abs(z_score(1.0 / 501.0) - 2.878) < 1e-3);
  {
    Matrix one = Matrix::Identity(1, 1);
    Vector a = Vector::Zero(1), b = Vector::Ones(1);
    check("frechet N(0,1) vs N(1,1)", std::abs(frechet_distance(a, one, b, one) - 1.0) < 1e-12);
  }
  {
    Matrix z(6, 3);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    const double l1 = supcon_loss(z, labels, 0.1).loss;
    const double l2 = supcon_loss(3.0 * z, labels, 0.1).loss;
    check("supcon scale invariance", std::abs(l1 - l2) < 1e-9);
  }
  {
    const ScoreTemplates t{{0.0, 0.5, 1.0}, {0.5, 0.5}, {0.0, 1.0}};
    std::vector<double> scores(30, 0.25);
    scores.resize(100, 0.75);
    const auto fit = binned_delta_chi2(scores, t);
    check("binned fit on two bins", std::abs(fit.a_sig - 40.0) < 1e-6 && fit.delta_chi2 >= 0.0);
  }
  std::cout << (failures ? "selftest failed\n" : "selftest passed\n");
  return failures ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anomaly search in contrastive embeddings with kernel two-sample tests"};
  app.require_subcommand(1);
  Options o;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "Experiment config file")->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--seed", o.seed, "Master seed");
    cmd->add_option("--threads", o.threads, "Worker threads (0: all cores)");
  };

  auto* gen = app.add_subcommand("generate", "Write the synthetic dataset");
  add_common(gen);

  auto* trn = app.add_subcommand("train-embed", "Train the contrastive encoder");
  add_common(trn);
  trn->add_option("--data", o.data, "Dataset directory");
  trn->add_option("--label-noise", o.label_noise, "Fraction of training labels to corrupt");
  trn->add_option("--embed-dim", o.embed_dim, "Embedding dimension");
  trn->add_flag("--ideal", o.ideal, "Include the held-out class in training");

  auto* emb = app.add_subcommand("embed", "Embed a dataset with a trained encoder");
  add_common(emb);
  emb->add_option("--data", o.data, "Dataset directory");
  emb->add_option("--checkpoint", o.checkpoint, "Encoder checkpoint");

  auto* scn = app.add_subcommand("scan", "Run null and signal toys for each method");
  add_common(scn);
  scn->add_option("--data", o.data, "Dataset directory");
  scn->add_option("--checkpoint", o.checkpoint, "Encoder checkpoint");
  scn->add_option("--ideal-checkpoint", o.ideal_checkpoint, "Encoder trained with the signal class");
  scn->add_option("--methods", o.methods, "Comma-separated methods");
  scn->add_option("--toys", o.toys, "Null toys per method");
  scn->add_option("--embed-dim", o.embed_dim, "Embedding dimension");
  scn->add_option("--label-noise", o.label_noise, "Label noise for on-demand ideal training");
  scn->add_flag("--fixed-reference", o.fixed_reference, "Draw R once instead of per toy");

  auto* rep = app.add_subcommand("report", "Write plot tables from scan outputs");
  rep->add_option("--out", o.out, "Scan output directory");

  auto* run = app.add_subcommand("run", "generate, train-embed, scan and report in one go");
  add_common(run);
  run->add_option("--methods", o.methods, "Comma-separated methods");
  run->add_option("--toys", o.toys, "Null toys per method");
  run->add_option("--label-noise", o.label_noise, "Fraction of training labels to corrupt");
  run->add_option("--embed-dim", o.embed_dim, "Embedding dimension");
  run->add_flag("--fixed-reference", o.fixed_reference, "Draw R once instead of per toy");

  auto* self = app.add_subcommand("selftest", "Run quick invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(o);
    if (trn->parsed()) return cmd_train_embed(o);
    if (emb->parsed()) return cmd_embed(o);
    if (scn->parsed()) return cmd_scan(o);
    if (rep->parsed()) return cmd_report(o);
    if (run->parsed()) return cmd_run(o);
    if (self->parsed()) return cmd_selftest();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
