#include "novelscan/dataset.hpp"

#include "novelscan/errors.hpp"
#include "novelscan/random.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

namespace novelscan {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void LabeledDataset::validate() const {
  if (static_cast<std::size_t>(points.rows()) != labels.size()) {
    throw InvalidArgument("dataset has " + std::to_string(points.rows()) + " rows but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(n_classes) + ")");
    }
  }
  if (!points.allFinite()) throw InvalidArgument("dataset contains NaN or Inf");
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(n_classes, 0)), 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

LabeledDataset LabeledDataset::select(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.n_classes = n_classes;
  out.points.resize(static_cast<Eigen::Index>(rows.size()), points.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) = points.row(static_cast<Eigen::Index>(rows[i]));
    out.labels[i] = labels[rows[i]];
  }
  return out;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.dim() != b.dim()) throw InvalidArgument("concat: column count mismatch");
  LabeledDataset out;
  out.n_classes = std::max(a.n_classes, b.n_classes);
  out.points.resize(a.points.rows() + b.points.rows(), a.dim());
  out.points << a.points, b.points;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

std::vector<LabeledDataset> split(const LabeledDataset& data, std::span<const double> fractions,
                                  std::uint64_t seed) {
  if (data.empty()) throw InvalidArgument("split: empty dataset");
  if (fractions.empty()) throw InvalidArgument("split: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw InvalidArgument("split: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("split: fractions must sum to 1");

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> parts(fractions.size());
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.n_classes));
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  for (auto& members : by_class) {
    shuffle(members, rng);
    const double n = static_cast<double>(members.size());
    std::size_t begin = 0;
    double cumulative = 0.0;
    for (std::size_t p = 0; p < fractions.size(); ++p) {
      cumulative += fractions[p];
      std::size_t end = p + 1 == fractions.size()
                            ? members.size()
                            : std::min(members.size(), static_cast<std::size_t>(std::llround(cumulative * n)));
      end = std::max(end, begin);
      parts[p].insert(parts[p].end(), members.begin() + static_cast<std::ptrdiff_t>(begin),
                      members.begin() + static_cast<std::ptrdiff_t>(end));
      begin = end;
    }
  }

  std::vector<LabeledDataset> out;
  out.reserve(parts.size());
  for (auto& rows : parts) {
    std::sort(rows.begin(), rows.end());
    out.push_back(data.select(rows));
  }
  return out;
}

Standardizer Standardizer::fit(const Matrix& reference) {
  if (reference.rows() < 2) throw InvalidArgument("standardizer needs at least two rows");
  Standardizer s;
  s.mean = reference.colwise().mean().transpose();
  s.scale.resize(reference.cols());
  for (Eigen::Index c = 0; c < reference.cols(); ++c) {
    const double var = (reference.col(c).array() - s.mean(c)).square().sum() /
                       static_cast<double>(reference.rows() - 1);
    s.scale(c) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& points) const {
  Matrix out = points;
  out.rowwise() -= mean.transpose();
  out.array().rowwise() /= scale.transpose().array();
  return out;
}

namespace {

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated file '" + path.string() + "'");
  return value;
}

int infer_classes(const Labels& labels) {
  int n = 0;
  for (int l : labels) n = std::max(n, l + 1);
  return n;
}

}  // namespace

void write_csv(const std::filesystem::path& path, const LabeledDataset& data) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  for (Eigen::Index c = 0; c < data.dim(); ++c) out << 'x' << c << ',';
  out << "label\n";
  for (Eigen::Index r = 0; r < data.points.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.dim(); ++c) out << format_double(data.points(r, c)) << ',';
    out << data.labels[static_cast<std::size_t>(r)] << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

LabeledDataset read_csv(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty CSV '" + path.string() + "'");
  const auto n_fields = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (n_fields < 2 || line.substr(line.rfind(',') + 1) != "label") {
    throw IoError("CSV '" + path.string() + "' lacks the x0,...,label header");
  }
  const std::size_t d = n_fields - 1;

  std::vector<double> values;
  Labels labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t c = 0; c < d; ++c) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || next == end || *next != ',') {
        throw IoError("malformed value at " + path.string() + ":" + std::to_string(line_no));
      }
      values.push_back(v);
      p = next + 1;
    }
    int label = 0;
    auto [next, ec] = std::from_chars(p, end, label);
    if (ec != std::errc()) throw IoError("malformed label at " + path.string() + ":" + std::to_string(line_no));
    labels.push_back(label);
  }

  LabeledDataset data;
  data.points = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                   static_cast<Eigen::Index>(d));
  data.labels = std::move(labels);
  data.n_classes = infer_classes(data.labels);
  data.validate();
  return data;
}

void write_binary(const std::filesystem::path& path, const LabeledDataset& data) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out.write("NVLB", 4);
  put<std::uint32_t>(out, 1);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(data.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.dim()));
  out.write(reinterpret_cast<const char*>(data.points.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(data.points.size())));
  for (int l : data.labels) put<std::uint32_t>(out, static_cast<std::uint32_t>(l));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

LabeledDataset read_binary(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "NVLB", 4) != 0) throw IoError("'" + path.string() + "' is not an NVLB file");
  const auto version = get<std::uint32_t>(in, path);
  if (version != 1) throw IoError("unsupported NVLB version " + std::to_string(version));
  const auto rows = get<std::uint64_t>(in, path);
  const auto cols = get<std::uint32_t>(in, path);

  LabeledDataset data;
  data.points.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  in.read(reinterpret_cast<char*>(data.points.data()),
          static_cast<std::streamsize>(sizeof(double) * rows * cols));
  if (!in) throw IoError("truncated file '" + path.string() + "'");
  data.labels.resize(rows);
  for (auto& l : data.labels) l = static_cast<int>(get<std::uint32_t>(in, path));
  data.n_classes = infer_classes(data.labels);
  data.validate();
  return data;
}

void write_dataset(const std::filesystem::path& path, const LabeledDataset& data) {
  if (path.extension() == ".bin") {
    write_binary(path, data);
  } else {
    write_csv(path, data);
  }
}

LabeledDataset read_dataset(const std::filesystem::path& path) {
  return path.extension() == ".bin" ? read_binary(path) : read_csv(path);
}

}  // namespace novelscan
