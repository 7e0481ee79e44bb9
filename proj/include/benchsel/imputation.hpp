#pragma once

#include "benchsel/covariance.hpp"
#include "benchsel/score_matrix.hpp"

#include <optional>
#include <vector>

namespace benchsel {

/// Conditional-Gaussian prediction for one row.
struct RowImputation {
  std::vector<int> targets;         // columns predicted, in request order
  std::vector<double> predicted;    // E[x_j | x_C]
  std::vector<double> cond_var;     // Var[x_j | x_C] (ridge-regularized)
  std::vector<int> used_condition;  // C = selected ∩ observed, ascending
};

struct ImputationResult {
  std::vector<RowImputation> rows;
};

inline constexpr double kDefaultRidge = 1e-2;

/// Predicts `targets` from the selected entries observed in `obs`, solving
/// (Σ_CC + ridge I) x = obs_C - μ_C. An empty conditioning set yields the
/// marginal means and variances.
RowImputation impute_row(const PartialRow& obs, const std::vector<int>& selected,
                         const std::vector<int>& targets, const GaussianModel& model,
                         double ridge = kDefaultRidge);

/// Targets default to every unselected column.
RowImputation impute_row(const PartialRow& obs, const std::vector<int>& selected,
                         const GaussianModel& model, double ridge = kDefaultRidge);

/// impute_row over every row of a (standardized) matrix; targets are the
/// observed unselected cells of each row.
ImputationResult impute_observed(const ScoreMatrix& m, const std::vector<int>& selected,
                                 const GaussianModel& model, double ridge = kDefaultRidge);

inline constexpr double kClipBound = 10.0;

/// Clamp to [-10, 10].
double clip_standardized(double v);

/// 1 - SSE / Σ target² with the zero prediction as baseline. Returns
/// std::nullopt when every target is zero (undefined).
std::optional<double> r2_standardized(const std::vector<double>& pred, const std::vector<double>& target);

}  // namespace benchsel
