#pragma once

#include <Eigen/Dense>

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace benchsel {

using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// One row of a score matrix; std::nullopt marks a missing cell.
using PartialRow = std::vector<std::optional<double>>;

/*
 * Model-by-benchmark score matrix with an observation mask.
 *
 * Rows are models, columns are benchmarks. Unobserved cells hold a NaN
 * sentinel internally; every accessor consults the mask first, so the
 * sentinel never reaches arithmetic. Construction enforces:
 *   - unique model and benchmark names,
 *   - at least one observed cell per row,
 *   - at least two observed cells per column.
 * Instances are immutable.
 */
class ScoreMatrix {
 public:
  ScoreMatrix(const Eigen::MatrixXd& values, const MaskMatrix& mask,
              std::vector<std::string> model_names, std::vector<std::string> benchmark_names,
              std::string row_label = "model");

  /// Fully observed matrix.
  ScoreMatrix(const Eigen::MatrixXd& values, std::vector<std::string> model_names,
              std::vector<std::string> benchmark_names, std::string row_label = "model");

  int rows() const { return static_cast<int>(values_.rows()); }
  int cols() const { return static_cast<int>(values_.cols()); }

  bool observed(int i, int j) const { return mask_(i, j); }
  /// Observed value; throws std::out_of_range for a missing cell.
  double value(int i, int j) const;
  std::optional<double> at(int i, int j) const;

  PartialRow row(int i) const;
  /// Observed entries of column j in row order.
  std::vector<double> column_values(int j) const;
  int column_count(int j) const;
  int row_count(int i) const;

  const MaskMatrix& mask() const { return mask_; }
  bool fully_observed() const;
  double observed_fraction() const;
  /// Dense values; throws DataError if any cell is missing.
  Eigen::MatrixXd dense() const;
  /// Values with missing cells replaced by `fill`.
  Eigen::MatrixXd filled(double fill) const;

  const std::vector<std::string>& model_names() const { return model_names_; }
  const std::vector<std::string>& benchmark_names() const { return benchmark_names_; }
  const std::string& row_label() const { return row_label_; }

  ScoreMatrix select_rows(const std::vector<int>& rows) const;
  ScoreMatrix select_cols(const std::vector<int>& cols) const;

  /// Same labels and mask with new values on observed cells.
  ScoreMatrix with_values(const Eigen::MatrixXd& values) const;

 private:
  Eigen::MatrixXd values_;
  MaskMatrix mask_;
  std::vector<std::string> model_names_;
  std::vector<std::string> benchmark_names_;
  std::string row_label_;
};

/// Per-benchmark location and scale used for z-scoring.
struct ColumnStats {
  Eigen::VectorXd means;
  Eigen::VectorXd stds;
  std::string source;
};

/// Per-benchmark training maxima and clipping bound for the logit transform.
struct LogitParams {
  Eigen::VectorXd col_max;
  double epsilon = 1e-3;
};

/// Parsed CSV without the ScoreMatrix coverage checks (rows or columns may be
/// sparse or empty). Used for inputs that are imputed rather than fitted.
struct ScoreTable {
  std::string row_label;
  std::vector<std::string> models;
  std::vector<std::string> benchmarks;
  std::vector<PartialRow> rows;
};

ScoreTable load_table(std::istream& in);
ScoreTable load_table_file(const std::string& path);
ScoreMatrix to_matrix(const ScoreTable& t);

ScoreMatrix load_csv(std::istream& in);
ScoreMatrix load_csv_file(const std::string& path);
/// Round-trips through load_csv: labels verbatim, values in shortest exact form.
void write_csv(std::ostream& out, const ScoreMatrix& m);

/// Keeps rows whose observed fraction is >= min_fraction.
ScoreMatrix drop_sparse_rows(const ScoreMatrix& m, double min_fraction);

/// Observed-cell mean and sample standard deviation (n - 1) per column.
/// Zero-variance columns are rejected with a DataError naming the column.
ColumnStats column_stats(const ScoreMatrix& m, std::string source = "training");
ScoreMatrix standardize(const ScoreMatrix& m, const ColumnStats& stats);
ScoreMatrix destandardize(const ScoreMatrix& m, const ColumnStats& stats);

/// Column maxima over observed training cells. Scores must be nonnegative.
LogitParams logit_params(const ScoreMatrix& training, double epsilon = 1e-3);
ScoreMatrix logit_transform(const ScoreMatrix& m, const LogitParams& params);
ScoreMatrix inverse_logit(const ScoreMatrix& m, const LogitParams& params);

// Scalar forms shared by the matrix transforms and the per-row pipelines.
double logit_score(double s, double col_max, double epsilon);
double inverse_logit_score(double f, double col_max);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

}  // namespace benchsel
