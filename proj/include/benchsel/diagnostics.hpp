#pragma once

#include "benchsel/score_matrix.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace benchsel {

struct ShapiroWilkResult {
  double w = 1.0;
  double p = 1.0;
};

/// Shapiro-Wilk W with Royston's (1992/1995) polynomial approximations for
/// the coefficients and the p-value. Valid for 3 <= n <= 5000.
ShapiroWilkResult shapiro_wilk(std::vector<double> x);

struct MardiaResult {
  double beta1 = 0.0;  // multivariate skewness
  double beta2 = 0.0;  // multivariate kurtosis
  double skew_stat = 0.0;
  double kurt_stat = 0.0;  // z-score of beta2
  double p_skew = 1.0;
  double p_kurt = 1.0;
  double skew_df = 0.0;
  bool pseudo_inverse = false;
};

/// Mardia's tests on a fully observed M x N sample (rows are observations).
/// Uses the maximum-likelihood (1/M) covariance.
MardiaResult mardia(const Eigen::MatrixXd& x);

enum class Correction { bh, bonferroni, none };
std::string to_string(Correction c);
Correction correction_from_string(const std::string& s);

/// Benjamini-Hochberg step-up rejections, in input order.
std::vector<bool> benjamini_hochberg(const std::vector<double>& pvals, double alpha);
std::vector<bool> bonferroni(const std::vector<double>& pvals, double alpha);
std::vector<bool> apply_correction(const std::vector<double>& pvals, double alpha, Correction c);

struct ShapiroEntry {
  std::string benchmark;
  int n = 0;
  double w = 0.0;
  double p = 0.0;
  bool rejected = false;
  bool subsampled = false;
};

struct NormalityReport {
  std::vector<ShapiroEntry> shapiro;
  std::vector<std::string> skipped;  // "<benchmark>: <reason>"
  bool mardia_available = false;
  MardiaResult mardia;
  /// "raw" when the input was fully observed, "completed-data" after EM
  /// completion.
  std::string mardia_input;
  std::string mardia_note;
  double alpha = 0.05;
  Correction correction = Correction::bh;
};

inline constexpr int kShapiroMaxN = 5000;

/// Per-benchmark Shapiro-Wilk on observed scores (columns longer than 5000
/// are tested on a seeded subsample) plus Mardia on the raw or EM-completed
/// matrix.
NormalityReport normality_report(const ScoreMatrix& m, double alpha, Correction correction,
                                 std::uint64_t seed);

nlohmann::json mardia_to_json(const NormalityReport& r);

}  // namespace benchsel
