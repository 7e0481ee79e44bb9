#include "benchsel/score_matrix.hpp"

#include "benchsel/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace benchsel {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

void check_unique(const std::vector<std::string>& names, const char* what) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) {
      throw DataError(std::string("duplicate ") + what + " name '" + n + "'");
    }
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Splits on commas. Quoted cells are accepted only when they hold no comma;
// a quote opened in one cell and closed in a later one means an embedded
// comma, which this format does not support.
std::vector<std::string> split_line(const std::string& line, int line_no) {
  std::vector<std::string> cells;
  std::string_view rest(line);
  while (true) {
    const auto pos = rest.find(',');
    std::string_view cell = trim(rest.substr(0, pos));
    if (!cell.empty() && cell.front() == '"') {
      if (cell.size() < 2 || cell.back() != '"') {
        throw DataError("line " + std::to_string(line_no) +
                        ": quoted cell containing a comma is not supported");
      }
      cell = cell.substr(1, cell.size() - 2);
      if (cell.find('"') != std::string_view::npos) {
        throw DataError("line " + std::to_string(line_no) + ": embedded quote in cell");
      }
    }
    cells.emplace_back(cell);
    if (pos == std::string_view::npos) break;
    rest.remove_prefix(pos + 1);
  }
  return cells;
}

std::optional<double> parse_cell(const std::string& cell, int line_no, const std::string& column) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw DataError("line " + std::to_string(line_no) + ", column '" + column +
                    "': not a finite decimal number: '" + cell + "'");
  }
  return v;
}

}  // namespace

ScoreMatrix::ScoreMatrix(const Eigen::MatrixXd& values, const MaskMatrix& mask,
                         std::vector<std::string> model_names,
                         std::vector<std::string> benchmark_names, std::string row_label)
    : values_(values),
      mask_(mask),
      model_names_(std::move(model_names)),
      benchmark_names_(std::move(benchmark_names)),
      row_label_(std::move(row_label)) {
  if (values_.rows() != mask_.rows() || values_.cols() != mask_.cols()) {
    throw DataError("values and mask shapes differ");
  }
  if (static_cast<Eigen::Index>(model_names_.size()) != values_.rows() ||
      static_cast<Eigen::Index>(benchmark_names_.size()) != values_.cols()) {
    throw DataError("label counts do not match matrix shape");
  }
  if (values_.cols() == 0) throw DataError("score matrix has no benchmark columns");
  check_unique(model_names_, "model");
  check_unique(benchmark_names_, "benchmark");
  for (Eigen::Index i = 0; i < values_.rows(); ++i) {
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
      if (!mask_(i, j)) {
        values_(i, j) = kMissing;
      } else if (!std::isfinite(values_(i, j))) {
        throw DataError("non-finite observed value at model '" + model_names_[i] +
                        "', benchmark '" + benchmark_names_[j] + "'");
      }
    }
  }
  for (Eigen::Index i = 0; i < values_.rows(); ++i) {
    if (row_count(static_cast<int>(i)) == 0) {
      throw DataError("model '" + model_names_[i] + "' has no observed scores");
    }
  }
  for (Eigen::Index j = 0; j < values_.cols(); ++j) {
    if (column_count(static_cast<int>(j)) < 2) {
      throw DataError("benchmark '" + benchmark_names_[j] + "' has fewer than 2 observed scores");
    }
  }
}

ScoreMatrix::ScoreMatrix(const Eigen::MatrixXd& values, std::vector<std::string> model_names,
                         std::vector<std::string> benchmark_names, std::string row_label)
    : ScoreMatrix(values, MaskMatrix::Constant(values.rows(), values.cols(), true),
                  std::move(model_names), std::move(benchmark_names), std::move(row_label)) {}

double ScoreMatrix::value(int i, int j) const {
  if (!mask_(i, j)) {
    throw std::out_of_range("cell (" + model_names_[i] + ", " + benchmark_names_[j] +
                            ") is not observed");
  }
  return values_(i, j);
}

std::optional<double> ScoreMatrix::at(int i, int j) const {
  if (!mask_(i, j)) return std::nullopt;
  return values_(i, j);
}

PartialRow ScoreMatrix::row(int i) const {
  PartialRow r(static_cast<std::size_t>(cols()));
  for (int j = 0; j < cols(); ++j) r[j] = at(i, j);
  return r;
}

std::vector<double> ScoreMatrix::column_values(int j) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows()));
  for (int i = 0; i < rows(); ++i) {
    if (mask_(i, j)) out.push_back(values_(i, j));
  }
  return out;
}

int ScoreMatrix::column_count(int j) const { return static_cast<int>(mask_.col(j).count()); }
int ScoreMatrix::row_count(int i) const { return static_cast<int>(mask_.row(i).count()); }

bool ScoreMatrix::fully_observed() const { return mask_.all(); }

double ScoreMatrix::observed_fraction() const {
  return static_cast<double>(mask_.count()) / static_cast<double>(mask_.size());
}

Eigen::MatrixXd ScoreMatrix::dense() const {
  if (!fully_observed()) throw DataError("score matrix has missing cells");
  return values_;
}

Eigen::MatrixXd ScoreMatrix::filled(double fill) const {
  return mask_.select(values_, Eigen::MatrixXd::Constant(rows(), cols(), fill));
}

ScoreMatrix ScoreMatrix::select_rows(const std::vector<int>& rows) const {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(rows.size()), cols());
  MaskMatrix m(static_cast<Eigen::Index>(rows.size()), cols());
  std::vector<std::string> names;
  names.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    v.row(static_cast<Eigen::Index>(r)) = values_.row(rows[r]);
    m.row(static_cast<Eigen::Index>(r)) = mask_.row(rows[r]);
    names.push_back(model_names_.at(static_cast<std::size_t>(rows[r])));
  }
  return ScoreMatrix(v, m, std::move(names), benchmark_names_, row_label_);
}

ScoreMatrix ScoreMatrix::select_cols(const std::vector<int>& cols) const {
  Eigen::MatrixXd v(rows(), static_cast<Eigen::Index>(cols.size()));
  MaskMatrix m(rows(), static_cast<Eigen::Index>(cols.size()));
  std::vector<std::string> names;
  names.reserve(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    v.col(static_cast<Eigen::Index>(c)) = values_.col(cols[c]);
    m.col(static_cast<Eigen::Index>(c)) = mask_.col(cols[c]);
    names.push_back(benchmark_names_.at(static_cast<std::size_t>(cols[c])));
  }
  return ScoreMatrix(v, m, model_names_, std::move(names), row_label_);
}

ScoreMatrix ScoreMatrix::with_values(const Eigen::MatrixXd& values) const {
  if (values.rows() != rows() || values.cols() != cols()) {
    throw DataError("with_values: shape mismatch");
  }
  return ScoreMatrix(values, mask_, model_names_, benchmark_names_, row_label_);
}

ScoreTable load_table(std::istream& in) {
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    header = split_line(line, line_no);
  }
  if (header.size() < 2) throw DataError("CSV header must name at least one benchmark column");
  ScoreTable t;
  t.row_label = header.front();
  t.benchmarks.assign(header.begin() + 1, header.end());
  for (const auto& b : t.benchmarks) {
    if (b.empty()) throw DataError("empty benchmark name in CSV header");
  }
  const std::size_t n = t.benchmarks.size();
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto parts = split_line(line, line_no);
    if (parts.size() != n + 1) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(n + 1) +
                      " cells, found " + std::to_string(parts.size()));
    }
    if (parts.front().empty()) throw DataError("line " + std::to_string(line_no) + ": empty model name");
    PartialRow row;
    row.reserve(n);
    for (std::size_t j = 0; j < n; ++j) row.push_back(parse_cell(parts[j + 1], line_no, t.benchmarks[j]));
    t.models.push_back(std::move(parts.front()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

ScoreTable load_table_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_table(in);
}

ScoreMatrix to_matrix(const ScoreTable& t) {
  const auto m = static_cast<Eigen::Index>(t.models.size());
  const auto n = static_cast<Eigen::Index>(t.benchmarks.size());
  Eigen::MatrixXd values = Eigen::MatrixXd::Zero(m, n);
  MaskMatrix mask = MaskMatrix::Constant(m, n, false);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (const auto& c = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
        values(i, j) = *c;
        mask(i, j) = true;
      }
    }
  }
  return ScoreMatrix(values, mask, t.models, t.benchmarks, t.row_label);
}

ScoreMatrix load_csv(std::istream& in) { return to_matrix(load_table(in)); }

ScoreMatrix load_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_csv(in);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

void write_csv(std::ostream& out, const ScoreMatrix& m) {
  out << m.row_label();
  for (const auto& b : m.benchmark_names()) out << ',' << b;
  out << '\n';
  for (int i = 0; i < m.rows(); ++i) {
    out << m.model_names()[static_cast<std::size_t>(i)];
    for (int j = 0; j < m.cols(); ++j) {
      out << ',';
      if (m.observed(i, j)) out << format_double(m.value(i, j));
    }
    out << '\n';
  }
}

ScoreMatrix drop_sparse_rows(const ScoreMatrix& m, double min_fraction) {
  if (!(min_fraction >= 0.0 && min_fraction <= 1.0)) {
    throw UsageError("min_fraction must lie in [0, 1]");
  }
  std::vector<int> keep;
  for (int i = 0; i < m.rows(); ++i) {
    const double frac = static_cast<double>(m.row_count(i)) / m.cols();
    if (frac >= min_fraction) keep.push_back(i);
  }
  return m.select_rows(keep);
}

ColumnStats column_stats(const ScoreMatrix& m, std::string source) {
  ColumnStats s{Eigen::VectorXd(m.cols()), Eigen::VectorXd(m.cols()), std::move(source)};
  for (int j = 0; j < m.cols(); ++j) {
    const auto v = m.column_values(j);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    if (!(sd > 0.0)) {
      throw DataError("benchmark '" + m.benchmark_names()[static_cast<std::size_t>(j)] +
                      "' has zero variance over observed scores");
    }
    s.means(j) = mean;
    s.stds(j) = sd;
  }
  return s;
}

namespace {

void check_stats(const ScoreMatrix& m, const ColumnStats& stats) {
  if (stats.means.size() != m.cols() || stats.stds.size() != m.cols()) {
    throw DataError("column stats have " + std::to_string(stats.means.size()) +
                    " entries, matrix has " + std::to_string(m.cols()) + " columns");
  }
  if ((stats.stds.array() <= 0.0).any()) throw DataError("column stats contain nonpositive stds");
}

}  // namespace

ScoreMatrix standardize(const ScoreMatrix& m, const ColumnStats& stats) {
  check_stats(m, stats);
  Eigen::MatrixXd v = m.filled(0.0);
  for (int j = 0; j < m.cols(); ++j) {
    v.col(j) = (v.col(j).array() - stats.means(j)) / stats.stds(j);
  }
  return m.with_values(v);
}

ScoreMatrix destandardize(const ScoreMatrix& m, const ColumnStats& stats) {
  check_stats(m, stats);
  Eigen::MatrixXd v = m.filled(0.0);
  for (int j = 0; j < m.cols(); ++j) {
    v.col(j) = v.col(j).array() * stats.stds(j) + stats.means(j);
  }
  return m.with_values(v);
}

double logit_score(double s, double col_max, double epsilon) {
  if (!(col_max > 0.0)) throw DataError("logit transform needs a positive column maximum");
  if (s < 0.0) throw DataError("logit transform needs nonnegative scores");
  const double t = std::clamp(s / col_max, epsilon, 1.0 - epsilon);
  return std::log(t / (1.0 - t));
}

double inverse_logit_score(double f, double col_max) {
  const double sig = f >= 0.0 ? 1.0 / (1.0 + std::exp(-f)) : std::exp(f) / (1.0 + std::exp(f));
  return sig * col_max;
}

LogitParams logit_params(const ScoreMatrix& training, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw UsageError("logit epsilon must lie in (0, 0.5)");
  LogitParams p{Eigen::VectorXd(training.cols()), epsilon};
  for (int j = 0; j < training.cols(); ++j) {
    const auto v = training.column_values(j);
    const auto& name = training.benchmark_names()[static_cast<std::size_t>(j)];
    if (*std::min_element(v.begin(), v.end()) < 0.0) {
      throw DataError("benchmark '" + name + "' has negative scores; logit mode needs nonnegative scores");
    }
    p.col_max(j) = *std::max_element(v.begin(), v.end());
    if (!(p.col_max(j) > 0.0)) {
      throw DataError("benchmark '" + name + "' has a nonpositive training maximum");
    }
  }
  return p;
}

ScoreMatrix logit_transform(const ScoreMatrix& m, const LogitParams& params) {
  if (params.col_max.size() != m.cols()) throw DataError("logit params dimension mismatch");
  Eigen::MatrixXd v = m.filled(0.0);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (m.observed(i, j)) v(i, j) = logit_score(v(i, j), params.col_max(j), params.epsilon);
    }
  }
  return m.with_values(v);
}

ScoreMatrix inverse_logit(const ScoreMatrix& m, const LogitParams& params) {
  if (params.col_max.size() != m.cols()) throw DataError("logit params dimension mismatch");
  Eigen::MatrixXd v = m.filled(0.0);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (m.observed(i, j)) v(i, j) = inverse_logit_score(v(i, j), params.col_max(j));
    }
  }
  return m.with_values(v);
}

}  // namespace benchsel
