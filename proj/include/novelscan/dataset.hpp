#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace novelscan {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;

/// Points (one per row) with integer class labels in [0, n_classes).
struct LabeledDataset {
  Matrix points;
  Labels labels;
  int n_classes = 0;

  std::size_t size() const { return labels.size(); }
  Eigen::Index dim() const { return points.cols(); }
  bool empty() const { return labels.empty(); }

  /// Throws InvalidArgument on shape mismatch, out-of-range labels or
  /// non-finite entries.
  void validate() const;

  /// Per-class row counts, indexed by label.
  std::vector<std::size_t> class_counts() const;

  LabeledDataset select(std::span<const std::size_t> rows) const;
};

/// Row-wise concatenation; n_classes is the max of both.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

/// Stratified random partition. Fractions must be positive and sum to one.
std::vector<LabeledDataset> split(const LabeledDataset& data, std::span<const double> fractions,
                                  std::uint64_t seed);

/// Standardizes columns with a reference mean and standard deviation.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& reference);
  Matrix apply(const Matrix& points) const;
};

// CSV: header x0,...,x{d-1},label; LF line endings.
void write_csv(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset read_csv(const std::filesystem::path& path);

// Binary: "NVLB", u32 version=1, u64 n_rows, u32 n_cols, f64 points row-major,
// u32 labels. Little-endian.
void write_binary(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset read_binary(const std::filesystem::path& path);

/// Dispatches on the extension (.csv or .bin).
void write_dataset(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset read_dataset(const std::filesystem::path& path);

}  // namespace novelscan
