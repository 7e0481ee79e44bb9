#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace benchsel {

enum class Objective { entropy, mi, budgeted_entropy, random };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

/// ½ log(2πe), the entropy of a unit-variance Gaussian in nats.
inline constexpr double kHalfLog2PiE = 1.4189385332046727;

struct SelectionResult {
  Objective objective = Objective::entropy;
  std::vector<int> order;
  /// Marginal gain of each pick in nats (shifted for the budgeted objective).
  std::vector<double> gains;
  /// tr of the conditional covariance of the unselected set after 0..k picks.
  std::vector<double> residual_trace;
  std::optional<std::uint64_t> seed;
  /// Selection stopped before k because the residual variance fell below the
  /// degeneracy floor.
  bool truncated = false;
  /// Number of marginal-gain evaluations (lazy greedy reports its savings here).
  long evaluations = 0;
  double shift_c = 0.0;
  double total_cost = 0.0;
  std::vector<std::string> warnings;
};

struct SpectrumReport {
  Eigen::VectorXd eigenvalues;        // nonincreasing
  Eigen::VectorXd explained;          // cumulative fraction rho(k), k = 1..N
  Eigen::VectorXd residual_fraction;  // 1 - rho(k)

  /// Smallest k with rho(k) >= q.
  int components_for(double q) const;
};

struct CostModel {
  std::vector<double> costs;
  double budget = 0.0;
  /// Modular shift added to every entropy marginal; unset means
  /// max(0, -min singleton marginal).
  std::optional<double> shift_c;
};

/// Relative residual-variance floor: a pick with d < kDegeneracyFloor * max(diag)
/// is refused.
inline constexpr double kDegeneracyFloor = 1e-12;

/// Greedy entropy maximization, i.e. pivoted Cholesky with maximal pivots.
SelectionResult greedy_entropy(const Eigen::MatrixXd& sigma, int k);

/// Greedy mutual-information maximization with a fresh complement Cholesky
/// per step; falls back to clamped eigenvalues when that factorization fails.
SelectionResult greedy_mi(const Eigen::MatrixXd& sigma, int k, double psd_floor = 1e-10);

/// Heap-based lazy evaluation of greedy_entropy; identical output.
SelectionResult lazy_greedy_entropy(const Eigen::MatrixXd& sigma, int k);

/// Modified greedy under a knapsack budget: the better of the cost-effective
/// greedy set and the best affordable singleton, under the shifted entropy.
SelectionResult budgeted_entropy(const Eigen::MatrixXd& sigma, const CostModel& cm);

/// First k entries of a seeded uniform permutation of 0..n-1.
SelectionResult random_select(int n, int k, std::uint64_t seed);

/// Fills gains (entropy chain rule) and residual traces for a fixed pick order.
/// A pick with nonpositive residual variance gets a NaN gain.
void annotate_entropy_path(const Eigen::MatrixXd& sigma, SelectionResult& result);

/// ½ logdet(2πe Σ_AA) in nats.
double entropy_value(const Eigen::MatrixXd& sigma, const std::vector<int>& a);

/// I(X_A; X_Ā) in nats; 0 for an empty or full A.
double mi_value(const Eigen::MatrixXd& sigma, const std::vector<int>& a, double psd_floor = 1e-12);

/// tr(Σ_ĀĀ - Σ_ĀA Σ_AA^{-1} Σ_AĀ). If Σ_AA is singular and `allow_clamp` is
/// set, its eigenvalues are clamped and `warning` is filled.
double residual_trace(const Eigen::MatrixXd& sigma, const std::vector<int>& a,
                      bool allow_clamp = true, std::string* warning = nullptr);

SpectrumReport spectrum(const Eigen::MatrixXd& r);

/// Complement of `a` in 0..n-1, ascending.
std::vector<int> complement(int n, const std::vector<int>& a);

nlohmann::json selection_to_json(const SelectionResult& r, const std::vector<std::string>& names);

}  // namespace benchsel
