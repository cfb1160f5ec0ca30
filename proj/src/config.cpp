#include "novelscan/config.hpp"

#include "novelscan/errors.hpp"
#include "novelscan/scan.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace novelscan {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("'" + key + "': cannot parse '" + text + "' as a number");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + text + "'");
}

std::vector<std::string> parse_list(const std::string& key, const std::string& text) {
  std::string body = text;
  if (!body.empty() && body.front() == '[') {
    if (body.back() != ']') throw ConfigError("'" + key + "': unterminated list");
    body = body.substr(1, body.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(body);
  for (std::string item; std::getline(ss, item, ',');) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string list_text(const std::vector<std::string>& items) {
  std::string s = "[";
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + items[i];
  return s + "]";
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field number_field(std::string section, std::string key, T ExperimentConfig::*member) {
  const std::string name = section + "." + key;
  return {section, key, [member, name](ExperimentConfig& c, const std::string& v) { c.*member = parse_number<T>(name, v); },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <typename T, typename Getter>
Field nested_number(std::string section, std::string key, Getter access) {
  const std::string name = section + "." + key;
  return {section, key, [access, name](ExperimentConfig& c, const std::string& v) { access(c) = parse_number<T>(name, v); },
          [access](const ExperimentConfig& c) {
            const T v = access(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return format_double(v);
            else return std::to_string(v);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> registry = [] {
    std::vector<Field> f;
    f.push_back(number_field<int>("synthetic", "n_clusters", &ExperimentConfig::n_clusters));
    f.push_back(number_field<int>("synthetic", "dim", &ExperimentConfig::dim));
    f.push_back(number_field<int>("synthetic", "noise_dims", &ExperimentConfig::noise_dims));
    f.push_back(number_field<int>("synthetic", "n_per_class", &ExperimentConfig::n_per_class));
    f.push_back(number_field<int>("synthetic", "held_out_class", &ExperimentConfig::held_out_class));
    f.push_back(number_field<double>("synthetic", "target_z", &ExperimentConfig::target_z));

    f.push_back({"embedding", "loss",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "supcon") c.contrastive.loss = ContrastiveKind::supcon;
                   else if (v == "simclr") c.contrastive.loss = ContrastiveKind::simclr;
                   else throw ConfigError("embedding.loss: expected supcon or simclr, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.contrastive.loss == ContrastiveKind::supcon ? "supcon" : "simclr");
                 }});
    f.push_back(nested_number<double>("embedding", "temperature", [](ExperimentConfig& c) -> double& { return c.contrastive.temperature; }));
    f.push_back(nested_number<double>("embedding", "lambda_ce", [](ExperimentConfig& c) -> double& { return c.contrastive.lambda_ce; }));
    f.push_back(nested_number<double>("embedding", "learning_rate", [](ExperimentConfig& c) -> double& { return c.contrastive.learning_rate; }));
    f.push_back(nested_number<double>("embedding", "lr_floor", [](ExperimentConfig& c) -> double& { return c.contrastive.lr_floor; }));
    f.push_back(nested_number<int>("embedding", "batch_size", [](ExperimentConfig& c) -> int& { return c.contrastive.batch_size; }));
    f.push_back(nested_number<int>("embedding", "epochs", [](ExperimentConfig& c) -> int& { return c.contrastive.epochs; }));
    f.push_back(nested_number<double>("embedding", "momentum", [](ExperimentConfig& c) -> double& { return c.contrastive.momentum; }));
    f.push_back({"embedding", "optimizer",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "sgd") c.contrastive.optimizer = Optimizer::Kind::sgd_momentum;
                   else if (v == "adam") c.contrastive.optimizer = Optimizer::Kind::adam;
                   else throw ConfigError("embedding.optimizer: expected sgd or adam, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.contrastive.optimizer == Optimizer::Kind::sgd_momentum ? "sgd" : "adam");
                 }});
    f.push_back({"embedding", "hidden",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.architecture.hidden.clear();
                   for (const auto& item : parse_list("embedding.hidden", v))
                     c.architecture.hidden.push_back(parse_number<int>("embedding.hidden", item));
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> items;
                   for (int h : c.architecture.hidden) items.push_back(std::to_string(h));
                   return list_text(items);
                 }});
    f.push_back(nested_number<int>("embedding", "embed_dim", [](ExperimentConfig& c) -> int& { return c.architecture.embed_dim; }));
    f.push_back(nested_number<int>("embedding", "projector_hidden", [](ExperimentConfig& c) -> int& { return c.architecture.projector_hidden; }));
    f.push_back(nested_number<int>("embedding", "projection_dim", [](ExperimentConfig& c) -> int& { return c.architecture.projection_dim; }));
    f.push_back(nested_number<int>("embedding", "classifier_hidden", [](ExperimentConfig& c) -> int& { return c.architecture.classifier_hidden; }));
    f.push_back(number_field<double>("embedding", "label_noise", &ExperimentConfig::label_noise));

    f.push_back(nested_number<std::size_t>("scan", "n_ref", [](ExperimentConfig& c) -> std::size_t& { return c.sizes.n_ref; }));
    f.push_back(nested_number<std::size_t>("scan", "n_data", [](ExperimentConfig& c) -> std::size_t& { return c.sizes.n_data; }));
    f.push_back({"scan", "f_signal",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.f_signal.clear();
                   for (const auto& item : parse_list("scan.f_signal", v))
                     c.f_signal.push_back(parse_number<double>("scan.f_signal", item));
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> items;
                   for (double x : c.f_signal) items.push_back(format_double(x));
                   return list_text(items);
                 }});
    f.push_back(number_field<int>("scan", "n_toys", &ExperimentConfig::n_toys));
    f.push_back(number_field<int>("scan", "n_signal_toys", &ExperimentConfig::n_signal_toys));
    f.push_back({"scan", "methods",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.methods.clear();
                   for (const auto& item : parse_list("scan.methods", v)) c.methods.push_back(parse_method(item));
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> items;
                   for (Method m : c.methods) items.push_back(method_name(m));
                   return list_text(items);
                 }});
    f.push_back(number_field<double>("scan", "lambda", &ExperimentConfig::lambda));
    f.push_back(number_field<int>("scan", "n_centers", &ExperimentConfig::n_centers));
    f.push_back(number_field<int>("scan", "width_subsample", &ExperimentConfig::width_subsample));
    f.push_back({"scan", "fixed_reference",
                 [](ExperimentConfig& c, const std::string& v) { c.fixed_reference = parse_bool("scan.fixed_reference", v); },
                 [](const ExperimentConfig& c) { return std::string(c.fixed_reference ? "true" : "false"); }});
    f.push_back(number_field<int>("scan", "n_bins", &ExperimentConfig::n_bins));
    f.push_back(nested_number<int>("scan", "classifier_hidden", [](ExperimentConfig& c) -> int& { return c.classifier.hidden; }));
    f.push_back(nested_number<int>("scan", "classifier_epochs", [](ExperimentConfig& c) -> int& { return c.classifier.epochs; }));

    f.push_back(number_field<std::uint64_t>("run", "seed", &ExperimentConfig::seed));
    f.push_back(number_field<int>("run", "threads", &ExperimentConfig::threads));
    f.push_back({"run", "data_format", [](ExperimentConfig& c, const std::string& v) { c.data_format = v; },
                 [](const ExperimentConfig& c) { return c.data_format; }});
    return f;
  }();
  return registry;
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    if (n_clusters < 2) throw ConfigError("synthetic.n_clusters must be >= 2");
    if (dim < 1 || noise_dims < 0) throw ConfigError("synthetic.dim must be >= 1 and noise_dims >= 0");
    if (n_per_class < 2) throw ConfigError("synthetic.n_per_class must be >= 2");
    if (held_out_class < -1 || held_out_class >= n_clusters) throw ConfigError("synthetic.held_out_class out of range");
    if (!(target_z > 0.0)) throw ConfigError("synthetic.target_z must be positive");
    contrastive.validate();
    if (architecture.embed_dim < 1 || architecture.projection_dim < 1) throw ConfigError("embedding dims must be >= 1");
    if (!(label_noise >= 0.0 && label_noise < 1.0)) throw ConfigError("embedding.label_noise must lie in [0, 1)");
    if (sizes.n_ref == 0 || sizes.n_data == 0) throw ConfigError("scan.n_ref and scan.n_data must be positive");
    if (!std::is_sorted(f_signal.begin(), f_signal.end())) throw ConfigError("scan.f_signal must be sorted ascending");
    for (double f : f_signal)
      if (!(f >= 0.0 && f < 1.0)) throw ConfigError("scan.f_signal values must lie in [0, 1)");
    if (n_toys < 1 || n_signal_toys < 0) throw ConfigError("scan.n_toys must be >= 1");
    if (methods.empty()) throw ConfigError("scan.methods is empty");
    if (!(lambda > 0.0) || n_centers < 0 || width_subsample < 2 || n_bins < 2) throw ConfigError("invalid scan settings");
    if (threads < 0) throw ConfigError("run.threads must be >= 0");
    if (data_format != "bin" && data_format != "csv") throw ConfigError("run.data_format must be bin or csv");
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

std::string ExperimentConfig::to_text() const {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(*this) + "\n";
  }
  return out;
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& f : fields()) j[f.section][f.key] = f.get(*this);
  return j;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::string section;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = unquote(trim(line.substr(eq + 1)));
    const auto& registry = fields();
    const auto it = std::find_if(registry.begin(), registry.end(),
                                 [&](const Field& f) { return f.section == section && f.key == key; });
    if (it == registry.end()) throw ConfigError(where + "unknown key '" + section + "." + key + "'");
    try {
      it->set(c, value);
    } catch (const Error& e) {
      throw ConfigError(where + e.what());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace novelscan
