#pragma once

#include "benchsel/score_matrix.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <vector>

namespace benchsel {

enum class Estimator { full, pairwise, em };
enum class ShrinkMode { automatic, off };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

/// Mean and covariance of a multivariate Gaussian over benchmarks.
struct GaussianModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // symmetrized on construction through make_model
  Estimator estimator = Estimator::full;
  int em_iterations = 0;
  bool converged = true;
  /// Observed-data log-likelihood of the parameters entering each EM
  /// iteration, followed by that of the returned parameters (before any
  /// post-hoc shrinkage). Empty for the closed-form estimators.
  std::vector<double> loglik_trace;
  /// Per EM iteration: number of eigenvalues raised by the PSD projection.
  std::vector<int> clamp_counts;
  bool shrunk = false;

  int dim() const { return static_cast<int>(mean.size()); }
};

GaussianModel make_model(Eigen::VectorXd mean, const Eigen::MatrixXd& cov, Estimator estimator);

struct EmConfig {
  int max_iter = 500;
  double rel_tol = 1e-6;
  double ridge = 1e-8;
  double psd_floor = 1e-10;
  ShrinkMode shrink = ShrinkMode::automatic;

  void validate() const;

  /// Defaults with the eigenvalue floor raised to 1e-3 for rank-deficient
  /// (M < N) or sparse (more than half missing) inputs.
  static EmConfig defaults_for(const ScoreMatrix& m);
};

/// Column means and 1/(M-1) sample covariance of a fully observed matrix.
GaussianModel estimate_full(const ScoreMatrix& m);

/// Per-column mean over observed cells.
Eigen::VectorXd mean_missing(const ScoreMatrix& m);

/// Pairwise-complete covariance; the co-observation count denominator is
/// floored at one. The result need not be positive semidefinite.
Eigen::MatrixXd pairwise_cov(const ScoreMatrix& m, const Eigen::VectorXd& mu);

struct PsdProjection {
  Eigen::MatrixXd matrix;
  int clamped = 0;  // eigenvalues raised to the floor
};

/// Eigenvalue clamping onto {S : lambda_min(S) >= floor}.
PsdProjection psd_project_tracked(const Eigen::MatrixXd& s, double floor);
Eigen::MatrixXd psd_project(const Eigen::MatrixXd& s, double floor);

/// (1 - a) S + a tr(S)/N I with a = clamp((N - M)/N, 0, 1).
Eigen::MatrixXd shrink_identity(const Eigen::MatrixXd& s, int m, int n);

/// Observed-data Gaussian log-likelihood of an incomplete matrix.
double observed_loglik(const ScoreMatrix& m, const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma);

/// EM for the Gaussian with missing-at-random entries.
GaussianModel em_fit(const ScoreMatrix& m, const EmConfig& cfg);

/// Conditional-mean completion of every missing cell under `model`.
Eigen::MatrixXd complete_matrix(const ScoreMatrix& m, const GaussianModel& model, double ridge = 1e-8);

/// D^{-1/2} S D^{-1/2} with D = diag(S).
Eigen::MatrixXd to_correlation(const Eigen::MatrixXd& s);

/// Symmetric-input guard used before every eigendecomposition.
void require_symmetric(const Eigen::MatrixXd& s, const char* where, double tol = 1e-8);

nlohmann::json model_to_json(const GaussianModel& model);
GaussianModel model_from_json(const nlohmann::json& j);

}  // namespace benchsel
