#include "novelscan/pipeline.hpp"

#include "novelscan/errors.hpp"
#include "novelscan/nplm.hpp"
#include "novelscan/random.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <thread>

namespace novelscan {

std::uint64_t stream_seed(const ExperimentConfig& config, SeedStream stream) {
  return derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

std::string content_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw NumericalError("content_hash: SHA-1 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::filesystem::path find_dataset(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* ext : {".bin", ".csv"}) {
    const auto p = dir / (stem + ext);
    if (std::filesystem::exists(p)) return p;
  }
  throw IoError("no " + stem + ".bin or " + stem + ".csv in '" + dir.string() + "'");
}

nlohmann::ordered_json provenance(const ExperimentConfig& config, const std::filesystem::path& dir,
                                  const std::vector<std::string>& files) {
  nlohmann::ordered_json j;
  j["config"] = config.to_json();
  j["config_text"] = config.to_text();
  j["files"] = nlohmann::ordered_json::object();
  for (const auto& f : files) j["files"][f] = file_hash(dir / f);
  return j;
}

}  // namespace

std::string file_hash(const std::filesystem::path& path) { return content_hash(read_file(path)); }

DataSplits split_data(const GeneratedData& data, std::uint64_t seed) {
  const std::array<double, 3> bkg{0.5, 0.1, 0.4};
  const std::array<double, 3> sig{0.4, 0.2, 0.4};
  auto b = split(data.background, bkg, derive_seed(seed, 0));
  DataSplits s;
  s.background_train = std::move(b[0]);
  s.background_val = std::move(b[1]);
  s.background_test = std::move(b[2]);
  if (!data.signal.empty()) {
    auto g = split(data.signal, sig, derive_seed(seed, 1));
    s.signal_train = std::move(g[0]);
    s.signal_template = std::move(g[1]);
    s.signal_test = std::move(g[2]);
  }
  return s;
}

GeneratedData generate(const ExperimentConfig& config) {
  config.validate();
  const SyntheticSpec spec = make_synthetic_spec(config.n_clusters, config.dim, config.noise_dims, config.n_per_class,
                                                 stream_seed(config, SeedStream::synthetic), config.target_z);
  std::optional<int> held_out;
  if (config.held_out_class >= 0) held_out = config.held_out_class;
  return generate_dataset(spec, held_out);
}

nlohmann::ordered_json write_generated(const std::filesystem::path& dir, const GeneratedData& data,
                                       const ExperimentConfig& config) {
  ensure_dir(dir);
  const std::string ext = "." + config.data_format;
  std::vector<std::string> files{"background" + ext};
  write_dataset(dir / files[0], data.background);
  if (!data.signal.empty()) {
    files.push_back("signal" + ext);
    write_dataset(dir / files[1], data.signal);
  }
  const auto prov = provenance(config, dir, files);
  write_file(dir / "provenance.json", prov.dump(2) + "\n");
  return prov;
}

GeneratedData load_generated(const std::filesystem::path& dir) {
  GeneratedData data;
  data.background = read_dataset(find_dataset(dir, "background"));
  for (const char* ext : {".bin", ".csv"}) {
    if (std::filesystem::exists(dir / (std::string("signal") + ext))) {
      data.signal = read_dataset(dir / (std::string("signal") + ext));
      break;
    }
  }
  if (!data.signal.empty()) {
    const int n = std::max(data.background.n_classes, data.signal.n_classes);
    data.background.n_classes = n;
    data.signal.n_classes = n;
  }
  return data;
}

TrainResult train_encoder(const ExperimentConfig& config, const DataSplits& splits, bool ideal) {
  LabeledDataset train_set = splits.background_train;
  LabeledDataset val_set = splits.background_val;
  if (ideal) {
    if (splits.signal_train.empty()) throw InvalidArgument("ideal training needs signal rows");
    train_set = concat(train_set, splits.signal_train);
    val_set = concat(val_set, splits.signal_template);
  }
  if (config.label_noise > 0.0) {
    train_set = apply_label_noise(train_set, config.label_noise, stream_seed(config, SeedStream::label_noise));
  }
  const int n_classes = std::max(train_set.n_classes, val_set.n_classes);
  const std::uint64_t seed = stream_seed(config, ideal ? SeedStream::ideal_training : SeedStream::training);
  ContrastiveConfig cc = config.contrastive;
  cc.seed = derive_seed(seed, 1);
  return train(make_encoder(static_cast<int>(train_set.dim()), n_classes, config.architecture, derive_seed(seed, 0)),
               train_set, val_set, cc);
}

Matrix embed_points(const MlpEncoder& encoder, const Standardizer& standardizer, const LabeledDataset& data) {
  return standardizer.apply(embed_dataset(encoder, data).points);
}

EmbeddedPools embed_pools(const MlpEncoder& encoder, const DataSplits& splits) {
  EmbeddedPools pools;
  pools.background = embed_dataset(encoder, splits.background_test);
  pools.standardizer = Standardizer::fit(pools.background.points);
  pools.background.points = pools.standardizer.apply(pools.background.points);
  if (!splits.signal_test.empty()) pools.signal = embed_points(encoder, pools.standardizer, splits.signal_test);
  return pools;
}

namespace {

struct SupervisedSetup {
  ScoreClassifier classifier;
  std::vector<double> signal_scores;
};

SupervisedSetup supervised_setup(const ExperimentConfig& config, const MlpEncoder& encoder, const EmbeddedPools& pools,
                                 const DataSplits& splits, std::uint64_t seed) {
  if (splits.signal_train.empty() || splits.signal_template.empty()) {
    throw InvalidArgument("supervised baselines need a held-out signal class");
  }
  SupervisedSetup s;
  s.classifier = train_score_classifier(embed_points(encoder, pools.standardizer, splits.background_train),
                                        embed_points(encoder, pools.standardizer, splits.signal_train), seed,
                                        config.classifier);
  const Vector scores = s.classifier.score(embed_points(encoder, pools.standardizer, splits.signal_template));
  s.signal_scores.assign(scores.data(), scores.data() + scores.size());
  return s;
}

}  // namespace

ScanOutputs run_scan(const ExperimentConfig& config, const DataSplits& splits, const MlpEncoder& encoder,
                     const std::optional<MlpEncoder>& ideal_encoder) {
  config.validate();
  if (splits.signal_test.empty()) throw InvalidArgument("scan needs a held-out signal class");
  const EmbeddedPools pools = embed_pools(encoder, splits);

  MethodContext context;
  context.nplm.lambda = config.lambda;
  context.nplm.n_centers = config.n_centers;
  context.nplm.widths =
      select_kernel_widths(pools.background.points, config.width_subsample, stream_seed(config, SeedStream::widths));
  context.n_bins = config.n_bins;

  ToyRunOptions options;
  options.threads = config.threads > 0 ? config.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  // With a fixed reference, R is drawn once and removed from the D pool.
  const auto pools_for = [&](const EmbeddedPools& p, LabeledDataset& reference, LabeledDataset& data_pool,
                             ToySizes& sizes) {
    sizes = config.sizes;
    if (!config.fixed_reference) {
      data_pool = p.background;
      return;
    }
    const double frac = static_cast<double>(config.sizes.n_ref) / static_cast<double>(p.background.size());
    if (!(frac > 0.0 && frac < 1.0)) throw InvalidArgument("fixed reference larger than the background pool");
    const std::array<double, 2> parts{frac, 1.0 - frac};
    auto s = split(p.background, parts, stream_seed(config, SeedStream::reference));
    reference = std::move(s[0]);
    data_pool = std::move(s[1]);
    sizes.n_ref = reference.size();
  };

  ScanOutputs out;
  out.widths = context.nplm.widths;
  const std::uint64_t master = stream_seed(config, SeedStream::scan);
  const bool need_ideal = std::find(config.methods.begin(), config.methods.end(), Method::ideal_supervised) !=
                          config.methods.end();
  std::optional<EmbeddedPools> ideal_pools;
  std::optional<SupervisedSetup> ideal_setup, setup;
  if (need_ideal) {
    const MlpEncoder ideal = ideal_encoder ? *ideal_encoder : train_encoder(config, splits, true).model;
    ideal_pools = embed_pools(ideal, splits);
    ideal_setup = supervised_setup(config, ideal, *ideal_pools, splits, stream_seed(config, SeedStream::classifier));
  }

  for (Method m : config.methods) {
    const EmbeddedPools& p = m == Method::ideal_supervised ? *ideal_pools : pools;
    MethodContext ctx = context;
    if (m == Method::supervised) {
      if (!setup) setup = supervised_setup(config, encoder, pools, splits, stream_seed(config, SeedStream::classifier));
      ctx.classifier = &setup->classifier;
      ctx.signal_scores = setup->signal_scores;
    } else if (m == Method::ideal_supervised) {
      ctx.classifier = &ideal_setup->classifier;
      ctx.signal_scores = ideal_setup->signal_scores;
    }
    LabeledDataset reference, data_pool;
    ToySizes sizes;
    pools_for(p, reference, data_pool, sizes);
    ToyRunOptions opts = options;
    if (config.fixed_reference) opts.fixed_reference = &reference;
    out.scans.push_back(run_method_scan(m, ctx, data_pool, p.signal, sizes, config.f_signal, config.n_toys,
                                        config.signal_toys(), master, opts));
  }
  out.summary = summary_csv(out.scans);
  out.z_summary = z_summary_csv(out.scans);
  return out;
}

void write_scan(const std::filesystem::path& dir, const ScanOutputs& outputs, const ExperimentConfig& config) {
  ensure_dir(dir / "reports");
  write_toy_csv(dir / "toys.csv", outputs.scans);
  write_file(dir / "summary.csv", outputs.summary);
  write_file(dir / "z_summary.csv", outputs.z_summary);
  std::vector<std::string> files{"toys.csv", "summary.csv", "z_summary.csv"};
  for (const auto& s : outputs.scans) {
    nlohmann::ordered_json j = reports_json(s);
    j["config"] = config.to_json();
    const std::string name = "reports/" + method_name(s.method) + ".json";
    write_file(dir / name, j.dump(1) + "\n");
    files.push_back(name);
  }
  auto prov = provenance(config, dir, files);
  prov["widths"] = outputs.widths;
  write_file(dir / "provenance.json", prov.dump(2) + "\n");
}

void write_report(const std::filesystem::path& dir) {
  const auto scans = read_toy_csv(dir / "toys.csv");
  write_file(dir / "z_curves.csv", z_summary_csv(scans));
  write_file(dir / "per_width.csv", per_width_csv(scans));
}

void run_pipeline(const ExperimentConfig& config, const std::filesystem::path& dir) {
  const GeneratedData data = generate(config);
  write_generated(dir / "data", data, config);
  const DataSplits splits = split_data(data, stream_seed(config, SeedStream::splits));
  const TrainResult trained = train_encoder(config, splits, false);
  ensure_dir(dir / "model");
  save_encoder(dir / "model" / "encoder.nven", trained.model);
  write_file(dir / "model" / "encoder_log.jsonl", training_log_jsonl(trained.log));
  const ScanOutputs outputs = run_scan(config, splits, trained.model);
  write_scan(dir / "scan", outputs, config);
  write_report(dir / "scan");
}

}  // namespace novelscan
