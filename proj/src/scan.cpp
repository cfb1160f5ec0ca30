#include "novelscan/scan.hpp"

#include "novelscan/errors.hpp"
#include "novelscan/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace novelscan {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile: no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<ToyEnsemble> MethodScan::ensembles(std::uint64_t master_seed) const {
  auto cols = columns(null_toys);
  std::vector<ToyEnsemble> out;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.push_back(ToyEnsemble::from_values(std::move(cols[k]), components.at(k), master_seed));
  }
  return out;
}

MethodScan run_method_scan(Method method, const MethodContext& context, const LabeledDataset& background_pool,
                           const Matrix& signal_pool, const ToySizes& sizes, std::span<const double> f_grid,
                           int n_null, int n_signal, std::uint64_t master_seed, const ToyRunOptions& options) {
  MethodScan scan;
  scan.method = method;
  scan.components = method_components(method, context);
  const ToyStatistic statistic = method_statistic(method, context, sizes);
  const auto tagged = [&](double f, auto&& body) {
    try {
      return body();
    } catch (const Error& e) {
      rethrow_with_context(e, "method " + method_name(method) + ", f_S " + format_double(f));
    }
  };
  scan.null_toys = tagged(0.0, [&] {
    return run_toys(background_pool, nullptr, 0.0, sizes, n_null, statistic, derive_seed(master_seed, 0), options);
  });
  for (std::size_t k = 0; k < f_grid.size(); ++k) {
    scan.f_signal.push_back(f_grid[k]);
    scan.signal_toys.push_back(tagged(f_grid[k], [&] {
      return run_toys(background_pool, &signal_pool, f_grid[k], sizes, n_signal, statistic,
                      derive_seed(master_seed, k + 1), options);
    }));
  }
  return scan;
}

namespace {

std::vector<AsymptoticNull> asymptotic_nulls(Method method, const std::vector<ToyEnsemble>& ensembles) {
  std::vector<AsymptoticNull> nulls;
  for (const auto& e : ensembles) {
    switch (asymptotic_model(method)) {
      case AsymptoticModel::chi2_fit: nulls.push_back(chi2_null(e)); break;
      case AsymptoticModel::gaussian: nulls.push_back(gaussian_null(e)); break;
      case AsymptoticModel::half_chi2_1: nulls.push_back({[](double t) { return delta_chi2_pvalue(t); }, 1.0}); break;
    }
  }
  return nulls;
}

}  // namespace

std::vector<ScanPoint> evaluate_scan(const MethodScan& scan) {
  const auto ensembles = scan.ensembles();
  const auto nulls = asymptotic_nulls(scan.method, ensembles);
  std::vector<ScanPoint> out;
  for (std::size_t k = 0; k < scan.f_signal.size(); ++k) {
    ScanPoint point;
    point.f_signal = scan.f_signal[k];
    for (std::size_t i = 0; i < scan.signal_toys[k].size(); ++i) {
      point.toys.push_back({static_cast<int>(i), make_report(scan.signal_toys[k][i], ensembles, nulls)});
    }
    out.push_back(std::move(point));
  }
  return out;
}

void write_toy_csv(const std::filesystem::path& path, std::span<const MethodScan> scans) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "kind,f_S,width,toy,t\n";
  const auto emit = [&](const std::string& kind, double f, const MethodScan& s, const ToyTable& table) {
    for (std::size_t k = 0; k < s.components.size(); ++k) {
      for (std::size_t i = 0; i < table.size(); ++i) {
        out << kind << ',' << format_double(f) << ',' << format_double(s.components[k]) << ',' << i << ','
            << format_double(table[i].at(k)) << '\n';
      }
    }
  };
  for (const auto& s : scans) {
    const std::string kind = method_name(s.method);
    emit(kind, 0.0, s, s.null_toys);
    for (std::size_t f = 0; f < s.f_signal.size(); ++f) emit(kind, s.f_signal[f], s, s.signal_toys[f]);
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<MethodScan> read_toy_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string line;
  if (!std::getline(in, line) || line != "kind,f_S,width,toy,t") throw IoError("'" + path.string() + "' has no toy header");

  struct Block {
    std::vector<double> components;
    std::map<double, std::map<std::size_t, std::vector<double>>> by_f;  // f -> toy -> per component
    bool has_null = false;
  };
  std::vector<std::pair<std::string, Block>> blocks;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 5) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    const auto num = [&](const std::string& c) {
      try {
        std::size_t used = 0;
        const double v = std::stod(c, &used);
        if (used != c.size()) throw std::invalid_argument(c);
        return v;
      } catch (const std::exception&) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + c + "'");
      }
    };
    const double f = num(cells[1]), width = num(cells[2]), t = num(cells[4]);
    const auto toy = static_cast<std::size_t>(num(cells[3]));
    auto it = std::find_if(blocks.begin(), blocks.end(), [&](const auto& b) { return b.first == cells[0]; });
    if (it == blocks.end()) {
      blocks.emplace_back(cells[0], Block{});
      it = std::prev(blocks.end());
    }
    Block& b = it->second;
    auto c = std::find(b.components.begin(), b.components.end(), width);
    if (c == b.components.end()) {
      b.components.push_back(width);
      c = std::prev(b.components.end());
    }
    auto& row = b.by_f[f][toy];
    const auto k = static_cast<std::size_t>(c - b.components.begin());
    if (row.size() <= k) row.resize(k + 1, std::numeric_limits<double>::quiet_NaN());
    row[k] = t;
    if (f == 0.0) b.has_null = true;
  }

  std::vector<MethodScan> scans;
  for (auto& [kind, b] : blocks) {
    if (!b.has_null) throw IoError("toy file has no null toys for '" + kind + "'");
    MethodScan s;
    s.method = parse_method(kind);
    s.components = b.components;
    const auto to_table = [&](const std::map<std::size_t, std::vector<double>>& toys) {
      ToyTable table;
      for (const auto& [toy, values] : toys) {
        if (values.size() != b.components.size()) throw IoError("incomplete toy " + std::to_string(toy) + " for " + kind);
        table.push_back(values);
      }
      return table;
    };
    for (const auto& [f, toys] : b.by_f) {
      if (f == 0.0) {
        s.null_toys = to_table(toys);
      } else {
        s.f_signal.push_back(f);
        s.signal_toys.push_back(to_table(toys));
      }
    }
    scans.push_back(std::move(s));
  }
  return scans;
}

namespace {

double median_of(const std::vector<ToyOutcome>& toys, auto&& field) {
  std::vector<double> v;
  for (const auto& t : toys) v.push_back(field(t.report));
  return quantile(std::move(v), 0.5);
}

}  // namespace

std::string summary_csv(std::span<const MethodScan> scans) {
  std::ostringstream out;
  out << "method,f_S,width,z_empirical,z_asymptotic,z_combined,saturated\n";
  for (const auto& s : scans) {
    const double cap = reporting_z(1.0 / static_cast<double>(s.null_toys.size() + 1), s.null_toys.size());
    for (const auto& point : evaluate_scan(s)) {
      const double z_comb = median_of(point.toys, [](const TestReport& r) { return r.z_combined; });
      for (std::size_t k = 0; k < s.components.size(); ++k) {
        const double z_emp = median_of(point.toys, [k](const TestReport& r) { return r.per_width[k].z_empirical; });
        const double z_asym = median_of(point.toys, [k](const TestReport& r) { return r.per_width[k].z_asymptotic; });
        out << method_name(s.method) << ',' << format_double(point.f_signal) << ',' << format_double(s.components[k])
            << ',' << format_double(z_emp) << ',' << format_double(z_asym) << ',' << format_double(z_comb) << ','
            << (z_emp >= cap ? 1 : 0) << '\n';
      }
    }
  }
  return out.str();
}

std::string z_summary_csv(std::span<const MethodScan> scans) {
  std::ostringstream out;
  out << "kind,f_S,z_empirical_median,z_low,z_high\n";
  for (const auto& s : scans) {
    for (const auto& point : evaluate_scan(s)) {
      std::vector<double> z;
      for (const auto& t : point.toys) z.push_back(t.report.z_combined);
      out << method_name(s.method) << ',' << format_double(point.f_signal) << ',' << format_double(quantile(z, 0.5))
          << ',' << format_double(quantile(z, 0.16)) << ',' << format_double(quantile(z, 0.84)) << '\n';
    }
  }
  return out.str();
}

std::string per_width_csv(std::span<const MethodScan> scans) {
  std::ostringstream out;
  std::vector<double> header;
  for (const auto& s : scans) {
    if (s.components.size() < 2) continue;
    if (header.empty()) {
      header = s.components;
      out << "method,f_S";
      for (double w : header) out << ",z_width_" << format_double(w);
      out << '\n';
    } else if (s.components != header) {
      throw InvalidArgument("per_width_csv: methods disagree on kernel widths");
    }
    for (const auto& point : evaluate_scan(s)) {
      out << method_name(s.method) << ',' << format_double(point.f_signal);
      for (std::size_t k = 0; k < s.components.size(); ++k) {
        out << ',' << format_double(median_of(point.toys, [k](const TestReport& r) { return r.per_width[k].z_empirical; }));
      }
      out << '\n';
    }
  }
  return out.str();
}

nlohmann::ordered_json reports_json(const MethodScan& scan) {
  nlohmann::ordered_json j;
  j["method"] = method_name(scan.method);
  j["n_null_toys"] = scan.null_toys.size();
  j["ensembles"] = nlohmann::ordered_json::array();
  for (const auto& e : scan.ensembles()) j["ensembles"].push_back(e.to_json());
  j["points"] = nlohmann::ordered_json::array();
  for (const auto& point : evaluate_scan(scan)) {
    nlohmann::ordered_json p;
    p["f_S"] = point.f_signal;
    p["toys"] = nlohmann::ordered_json::array();
    for (const auto& t : point.toys) {
      nlohmann::ordered_json r = t.report.to_json();
      r["toy"] = t.toy;
      p["toys"].push_back(r);
    }
    j["points"].push_back(p);
  }
  return j;
}

}  // namespace novelscan
