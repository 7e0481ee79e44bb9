#pragma once

#include "benchsel/score_matrix.hpp"
#include "benchsel/selection.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace benchsel {

enum class Method { entropy, mi, random };
enum class EstimatorPolicy { automatic, full, em };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(EstimatorPolicy p);
EstimatorPolicy estimator_policy_from_string(const std::string& s);

struct CvConfig {
  int folds = 10;
  std::vector<double> holdout_fractions{0.1, 0.2, 0.5, 0.9};
  int k_max = 15;
  std::vector<Method> methods{Method::entropy, Method::mi, Method::random};
  std::uint64_t seed = 0;
  EstimatorPolicy estimator_policy = EstimatorPolicy::automatic;
  double ridge = 1e-2;
  bool logit_mode = false;
  double logit_epsilon = 1e-3;

  void validate() const;
  nlohmann::json to_json() const;
};

struct CvCell {
  Method method = Method::entropy;
  double holdout = 0.0;
  int fold = 0;
  int k = 0;
  /// Pooled standardized R²; NaN when undefined (no targets, all-zero
  /// targets, or k beyond a truncated selection).
  double r2 = 0.0;
  /// Mean of the per-benchmark R² values that are defined.
  double r2_benchmark_mean = 0.0;
  double residual_fraction = 0.0;
  double entropy = 0.0;
  double mi = 0.0;
  int n_targets = 0;
};

struct SelectionOrder {
  Method method = Method::entropy;
  double holdout = 0.0;
  int fold = 0;
  std::vector<std::string> benchmarks;
};

struct SummaryRow {
  Method method = Method::entropy;
  double holdout = 0.0;
  int k = 0;
  int n_folds = 0;  // folds with a defined R²
  double r2_mean = 0.0;
  double r2_std = 0.0;
  double residual_fraction_mean = 0.0;
  double residual_fraction_std = 0.0;
  double entropy_mean = 0.0;
  double entropy_std = 0.0;
  double mi_mean = 0.0;
  double mi_std = 0.0;
};

struct CvReport {
  std::vector<CvCell> cells;
  std::vector<SelectionOrder> selection_orders;
  std::vector<SummaryRow> summary;
  std::vector<std::string> warnings;
};

struct CvOptions {
  /// Worker threads for the (holdout, fold) tasks; results do not depend on it.
  int threads = 1;
  /// Called once per finished task with a short progress line.
  std::function<void(const std::string&)> progress;
};

/// Balanced partition sizes: the first (M mod K) folds get one extra model.
std::vector<int> fold_sizes(int m, int k);

/// Training-set size round((1 - p) M) with ties to even, capped at `pool`.
int training_size(double holdout, int m, int pool);

CvReport run_cv(const ScoreMatrix& m, const CvConfig& cfg, const CvOptions& opts = {});

/// Mean and sample standard deviation over the defined (non-NaN) values.
std::pair<double, double> mean_std(const std::vector<double>& v);
std::vector<SummaryRow> summarize(const std::vector<CvCell>& cells, const CvConfig& cfg);

struct ComparisonRow {
  double holdout = 0.0;
  int k = 0;
  std::vector<Method> methods;
  std::vector<double> r2_mean;
  std::vector<double> r2_std;
  /// One entry per method pair (a, b) with a before b: mean(a) - mean(b).
  std::vector<std::pair<std::pair<Method, Method>, double>> differences;
};

/// Per (holdout, k) method means and pairwise differences; requires at least
/// two methods, and every entry of `required` must be present.
std::vector<ComparisonRow> compare_methods(const CvReport& report,
                                           const std::vector<Method>& required = {});

void write_cells_csv(std::ostream& out, const CvReport& report);
void write_orders_csv(std::ostream& out, const CvReport& report);
void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows);
nlohmann::json summary_to_json(const CvReport& report);

}  // namespace benchsel
