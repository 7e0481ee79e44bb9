#include "benchsel/selection.hpp"

#include "benchsel/covariance.hpp"
#include "benchsel/error.hpp"
#include "benchsel/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace benchsel {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::entropy: return "entropy";
    case Objective::mi: return "mi";
    case Objective::budgeted_entropy: return "budgeted_entropy";
    case Objective::random: return "random";
  }
  return "unknown";
}

Objective objective_from_string(const std::string& s) {
  if (s == "entropy") return Objective::entropy;
  if (s == "mi") return Objective::mi;
  if (s == "budgeted" || s == "budgeted_entropy") return Objective::budgeted_entropy;
  if (s == "random") return Objective::random;
  throw UsageError("unknown objective '" + s + "'");
}

std::vector<int> complement(int n, const std::vector<int>& a) {
  std::vector<bool> in(static_cast<std::size_t>(n), false);
  for (int j : a) in.at(static_cast<std::size_t>(j)) = true;
  std::vector<int> out;
  for (int j = 0; j < n; ++j) {
    if (!in[j]) out.push_back(j);
  }
  return out;
}

namespace {

constexpr double kNegativePivotTol = 1e-9;

void check_square(const Eigen::MatrixXd& sigma, const char* where) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    throw UsageError(std::string(where) + ": covariance must be a nonempty square matrix");
  }
  require_symmetric(sigma, where);
}

double entropy_gain(double d) { return 0.5 * std::log(d) + kHalfLog2PiE; }

// Pivoted Cholesky grown one pivot at a time. Row j of `l` holds the Cholesky
// row of benchmark j; `d` holds the residual (conditional) variances.
class IncrementalCholesky {
 public:
  IncrementalCholesky(const Eigen::MatrixXd& sigma, int max_picks)
      : sigma_(sigma),
        l_(Eigen::MatrixXd::Zero(sigma.rows(), std::max(max_picks, 1))),
        d_(sigma.diagonal()),
        selected_(static_cast<std::size_t>(sigma.rows()), false) {
    const double maxdiag = d_.maxCoeff();
    scale_ = std::max(1.0, maxdiag);
    floor_ = kDegeneracyFloor * std::max(maxdiag, 0.0);
    for (Eigen::Index j = 0; j < d_.size(); ++j) {
      if (d_(j) < -kNegativePivotTol * scale_) {
        throw NumericalError("covariance is not positive semidefinite (negative diagonal)");
      }
    }
  }

  int n() const { return static_cast<int>(d_.size()); }
  int picks() const { return static_cast<int>(picks_.size()); }
  bool selected(int j) const { return selected_[static_cast<std::size_t>(j)]; }
  double residual(int j) const { return d_(j); }
  double floor() const { return floor_; }

  double residual_trace() const {
    double s = 0.0;
    for (int j = 0; j < n(); ++j) {
      if (!selected(j)) s += d_(j);
    }
    return s;
  }

  void add(int pivot) {
    const int t = picks();
    const double sd = std::sqrt(d_(pivot));
    l_(pivot, t) = sd;
    selected_[static_cast<std::size_t>(pivot)] = true;
    for (int j = 0; j < n(); ++j) {
      if (selected(j)) continue;
      const double lj = (sigma_(j, pivot) - l_.row(j).head(t).dot(l_.row(pivot).head(t))) / sd;
      l_(j, t) = lj;
      d_(j) -= lj * lj;
      if (d_(j) < -kNegativePivotTol * scale_) {
        throw NumericalError("covariance is not positive semidefinite (negative pivot)");
      }
    }
    picks_.push_back(pivot);
  }

  // Drops a degenerate pivot without a Cholesky step: only its own residual
  // variance leaves the unselected set.
  void mark_degenerate(int pivot) {
    selected_[static_cast<std::size_t>(pivot)] = true;
    picks_.push_back(-1);
  }

 private:
  const Eigen::MatrixXd& sigma_;
  Eigen::MatrixXd l_;
  Eigen::VectorXd d_;
  std::vector<bool> selected_;
  std::vector<int> picks_;
  double scale_ = 1.0;
  double floor_ = 0.0;
};

// Diagonal of the inverse of a symmetric positive (semi)definite block.
Eigen::VectorXd precision_diagonal(const Eigen::MatrixXd& block, double psd_floor, bool& fallback) {
  Eigen::LLT<Eigen::MatrixXd> llt(block);
  if (llt.info() == Eigen::Success) {
    fallback = false;
    const Eigen::Index m = block.rows();
    Eigen::MatrixXd linv = Eigen::MatrixXd::Identity(m, m);
    llt.matrixL().solveInPlace(linv);
    return linv.colwise().squaredNorm().transpose();
  }
  fallback = true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(block);
  if (es.info() != Eigen::Success) throw NumericalError("complement eigendecomposition failed");
  const Eigen::VectorXd inv = es.eigenvalues().cwiseMax(psd_floor).cwiseInverse();
  return es.eigenvectors().array().square().matrix() * inv;
}

double logdet_psd(const Eigen::MatrixXd& s, double floor) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) {
    const Eigen::MatrixXd l = llt.matrixL();
    return 2.0 * l.diagonal().array().log().sum();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseMax(floor).array().log().sum();
}

void check_k(int k, int lo, int hi, const char* where) {
  if (k < lo || k > hi) {
    throw UsageError(std::string(where) + ": k=" + std::to_string(k) + " outside [" +
                     std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

}  // namespace

SelectionResult greedy_entropy(const Eigen::MatrixXd& sigma, int k) {
  check_square(sigma, "greedy_entropy");
  const int n = static_cast<int>(sigma.rows());
  check_k(k, 1, n, "greedy_entropy");
  IncrementalCholesky chol(sigma, k);
  SelectionResult r;
  r.objective = Objective::entropy;
  r.residual_trace.push_back(chol.residual_trace());
  for (int t = 0; t < k; ++t) {
    int best = -1;
    for (int j = 0; j < n; ++j) {
      if (chol.selected(j)) continue;
      ++r.evaluations;
      if (best < 0 || chol.residual(j) > chol.residual(best)) best = j;
    }
    if (!(chol.residual(best) > chol.floor()) || chol.residual(best) <= 0.0) {
      r.truncated = true;
      r.warnings.push_back("selection truncated after " + std::to_string(t) +
                           " picks: residual variance below the degeneracy floor");
      break;
    }
    r.gains.push_back(entropy_gain(chol.residual(best)));
    r.order.push_back(best);
    chol.add(best);
    r.residual_trace.push_back(chol.residual_trace());
  }
  return r;
}

SelectionResult greedy_mi(const Eigen::MatrixXd& sigma, int k, double psd_floor) {
  check_square(sigma, "greedy_mi");
  const int n = static_cast<int>(sigma.rows());
  check_k(k, 1, n - 1, "greedy_mi");
  IncrementalCholesky chol(sigma, k);
  SelectionResult r;
  r.objective = Objective::mi;
  r.residual_trace.push_back(chol.residual_trace());
  bool warned_fallback = false;
  for (int t = 0; t < k; ++t) {
    std::vector<int> comp;
    for (int j = 0; j < n; ++j) {
      if (!chol.selected(j)) comp.push_back(j);
    }
    bool fallback = false;
    const Eigen::VectorXd prec = precision_diagonal(sigma(comp, comp), psd_floor, fallback);
    if (fallback && !warned_fallback) {
      r.warnings.push_back("complement Cholesky failed; used clamped eigenvalues");
      warned_fallback = true;
    }
    int best = -1;
    double best_gain = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < comp.size(); ++c) {
      const int j = comp[c];
      ++r.evaluations;
      const double d = chol.residual(j);
      if (!(d > chol.floor()) || d <= 0.0) continue;
      const double gain = 0.5 * (std::log(d) + std::log(prec(static_cast<Eigen::Index>(c))));
      if (best < 0 || gain > best_gain) {
        best = j;
        best_gain = gain;
      }
    }
    if (best < 0) {
      r.truncated = true;
      r.warnings.push_back("selection truncated after " + std::to_string(t) +
                           " picks: residual variance below the degeneracy floor");
      break;
    }
    if (best_gain < 0.0) {
      r.warnings.push_back("negative mutual-information gain at step " + std::to_string(t + 1));
    }
    r.gains.push_back(best_gain);
    r.order.push_back(best);
    chol.add(best);
    r.residual_trace.push_back(chol.residual_trace());
  }
  return r;
}

SelectionResult lazy_greedy_entropy(const Eigen::MatrixXd& sigma, int k) {
  check_square(sigma, "lazy_greedy_entropy");
  const int n = static_cast<int>(sigma.rows());
  check_k(k, 1, n, "lazy_greedy_entropy");
  const Eigen::VectorXd diag = sigma.diagonal();
  const double maxdiag = diag.maxCoeff();
  const double scale = std::max(1.0, maxdiag);
  const double floor = kDegeneracyFloor * std::max(maxdiag, 0.0);
  if (diag.minCoeff() < -kNegativePivotTol * scale) {
    throw NumericalError("covariance is not positive semidefinite (negative diagonal)");
  }

  // Each row of `l` is brought up to date only when its gain is re-evaluated.
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, k);
  Eigen::VectorXd d = diag;
  std::vector<int> current(static_cast<std::size_t>(n), 0);
  std::vector<int> picks;
  std::vector<double> pivots;

  auto catch_up = [&](int j) {
    for (int u = current[j]; u < static_cast<int>(picks.size()); ++u) {
      const int p = picks[u];
      const double lj = (sigma(j, p) - l.row(j).head(u).dot(l.row(p).head(u))) / pivots[u];
      l(j, u) = lj;
      d(j) -= lj * lj;
      if (d(j) < -kNegativePivotTol * scale) {
        throw NumericalError("covariance is not positive semidefinite (negative pivot)");
      }
    }
    current[j] = static_cast<int>(picks.size());
  };

  using Entry = std::pair<double, int>;
  // Max residual first; equal residuals pop lowest index first.
  auto worse = [](const Entry& a, const Entry& b) {
    return a.first < b.first || (a.first == b.first && a.second > b.second);
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  SelectionResult r;
  r.objective = Objective::entropy;
  for (int j = 0; j < n; ++j) {
    heap.emplace(d(j), j);
    ++r.evaluations;
  }

  while (static_cast<int>(picks.size()) < k && !heap.empty()) {
    const auto [key, j] = heap.top();
    heap.pop();
    if (current[j] != static_cast<int>(picks.size())) {
      catch_up(j);
      ++r.evaluations;
      heap.emplace(d(j), j);
      continue;
    }
    if (!(d(j) > floor) || d(j) <= 0.0) {
      r.truncated = true;
      r.warnings.push_back("selection truncated after " + std::to_string(picks.size()) +
                           " picks: residual variance below the degeneracy floor");
      break;
    }
    r.gains.push_back(entropy_gain(d(j)));
    r.order.push_back(j);
    const double sd = std::sqrt(d(j));
    l(j, static_cast<Eigen::Index>(picks.size())) = sd;
    picks.push_back(j);
    pivots.push_back(sd);
    current[j] = static_cast<int>(picks.size());
  }

  // Residual traces need every Cholesky column in full; this bookkeeping is
  // not a gain evaluation and is not counted.
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  for (int p : picks) chosen[p] = true;
  for (int j = 0; j < n; ++j) {
    if (!chosen[j]) catch_up(j);
  }
  r.residual_trace.push_back(diag.sum());
  for (std::size_t u = 0; u < picks.size(); ++u) {
    r.residual_trace.push_back(r.residual_trace.back() - l.col(static_cast<Eigen::Index>(u)).squaredNorm());
  }
  return r;
}

SelectionResult budgeted_entropy(const Eigen::MatrixXd& sigma, const CostModel& cm) {
  check_square(sigma, "budgeted_entropy");
  const int n = static_cast<int>(sigma.rows());
  if (static_cast<int>(cm.costs.size()) != n) throw UsageError("budgeted_entropy: one cost per benchmark required");
  if (!(cm.budget > 0.0)) throw UsageError("budgeted_entropy: budget must be positive");
  for (double c : cm.costs) {
    if (!(c > 0.0)) throw UsageError("budgeted_entropy: costs must be positive");
  }
  const double budget_tol = cm.budget * (1.0 + 1e-12);
  double shift = 0.0;
  if (cm.shift_c) {
    shift = *cm.shift_c;
  } else {
    double min_single = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (sigma(j, j) > 0.0) min_single = std::min(min_single, entropy_gain(sigma(j, j)));
    }
    shift = std::max(0.0, -min_single);
  }

  SelectionResult greedy;
  greedy.objective = Objective::budgeted_entropy;
  IncrementalCholesky chol(sigma, n);
  greedy.residual_trace.push_back(chol.residual_trace());
  double spent = 0.0;
  bool warned = false;
  while (true) {
    int best = -1;
    double best_ratio = 0.0;
    double best_gain = 0.0;
    for (int j = 0; j < n; ++j) {
      if (chol.selected(j) || spent + cm.costs[j] > budget_tol) continue;
      const double d = chol.residual(j);
      if (!(d > chol.floor()) || d <= 0.0) continue;
      ++greedy.evaluations;
      const double gain = entropy_gain(d) + shift;
      const double ratio = gain / cm.costs[j];
      if (best < 0 || ratio > best_ratio) {
        best = j;
        best_ratio = ratio;
        best_gain = gain;
      }
    }
    if (best < 0) break;
    if (best_gain < 0.0 && !warned) {
      greedy.warnings.push_back("negative shifted entropy marginal; the budgeted guarantee does not apply");
      warned = true;
    }
    greedy.order.push_back(best);
    greedy.gains.push_back(best_gain);
    spent += cm.costs[best];
    chol.add(best);
    greedy.residual_trace.push_back(chol.residual_trace());
  }
  greedy.total_cost = spent;
  greedy.shift_c = shift;

  int single = -1;
  double single_value = 0.0;
  for (int j = 0; j < n; ++j) {
    if (cm.costs[j] > budget_tol || !(sigma(j, j) > 0.0)) continue;
    const double v = entropy_gain(sigma(j, j)) + shift;
    if (single < 0 || v > single_value) {
      single = j;
      single_value = v;
    }
  }
  if (single < 0) throw UsageError("budgeted_entropy: no benchmark fits within the budget");

  double greedy_value = 0.0;
  for (double g : greedy.gains) greedy_value += g;
  if (!greedy.order.empty() && greedy_value >= single_value) return greedy;

  SelectionResult s;
  s.objective = Objective::budgeted_entropy;
  s.order = {single};
  s.shift_c = shift;
  s.total_cost = cm.costs[single];
  s.evaluations = greedy.evaluations + n;
  s.warnings = greedy.warnings;
  s.warnings.push_back("best affordable singleton beat the cost-effective greedy set");
  annotate_entropy_path(sigma, s);
  s.gains[0] += shift;
  return s;
}

SelectionResult random_select(int n, int k, std::uint64_t seed) {
  if (n < 1) throw UsageError("random_select: N must be positive");
  check_k(k, 0, n, "random_select");
  Rng rng(seed);
  auto perm = random_permutation(n, rng);
  SelectionResult r;
  r.objective = Objective::random;
  r.order.assign(perm.begin(), perm.begin() + k);
  r.seed = seed;
  return r;
}

void annotate_entropy_path(const Eigen::MatrixXd& sigma, SelectionResult& result) {
  check_square(sigma, "annotate_entropy_path");
  IncrementalCholesky chol(sigma, static_cast<int>(result.order.size()));
  result.gains.clear();
  result.residual_trace.assign(1, chol.residual_trace());
  for (int j : result.order) {
    const double d = chol.residual(j);
    if (d > chol.floor() && d > 0.0) {
      result.gains.push_back(entropy_gain(d));
      chol.add(j);
    } else {
      result.gains.push_back(std::numeric_limits<double>::quiet_NaN());
      chol.mark_degenerate(j);
    }
    result.residual_trace.push_back(chol.residual_trace());
  }
}

double entropy_value(const Eigen::MatrixXd& sigma, const std::vector<int>& a) {
  check_square(sigma, "entropy_value");
  if (a.empty()) throw UsageError("entropy_value: empty index set");
  Eigen::LLT<Eigen::MatrixXd> llt(sigma(a, a));
  if (llt.info() != Eigen::Success) throw NumericalError("entropy_value: singular principal submatrix");
  const Eigen::MatrixXd l = llt.matrixL();
  return static_cast<double>(a.size()) * kHalfLog2PiE + l.diagonal().array().log().sum();
}

double mi_value(const Eigen::MatrixXd& sigma, const std::vector<int>& a, double psd_floor) {
  check_square(sigma, "mi_value");
  const int n = static_cast<int>(sigma.rows());
  if (a.empty() || static_cast<int>(a.size()) >= n) return 0.0;
  const auto comp = complement(n, a);
  return 0.5 * (logdet_psd(sigma(a, a), psd_floor) + logdet_psd(sigma(comp, comp), psd_floor) -
                logdet_psd(sigma, psd_floor));
}

double residual_trace(const Eigen::MatrixXd& sigma, const std::vector<int>& a, bool allow_clamp,
                      std::string* warning) {
  check_square(sigma, "residual_trace");
  const int n = static_cast<int>(sigma.rows());
  if (a.empty()) return sigma.trace();
  const auto comp = complement(n, a);
  if (comp.empty()) return 0.0;
  const Eigen::MatrixXd cross = sigma(a, comp);
  const double base = sigma(comp, comp).trace();
  Eigen::LLT<Eigen::MatrixXd> llt(sigma(a, a));
  if (llt.info() == Eigen::Success) {
    return base - llt.matrixL().solve(cross).squaredNorm();
  }
  if (!allow_clamp) throw NumericalError("residual_trace: singular conditioning block");
  if (warning) *warning = "residual_trace: singular conditioning block, eigenvalues clamped";
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma(a, a));
  const double floor = 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
  const Eigen::MatrixXd proj = es.eigenvectors().transpose() * cross;
  const Eigen::VectorXd inv = es.eigenvalues().cwiseMax(floor).cwiseInverse();
  return base - (proj.array().square().colwise() * inv.array()).sum();
}

SpectrumReport spectrum(const Eigen::MatrixXd& r) {
  check_square(r, "spectrum");
  if ((r - r.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, r.cwiseAbs().maxCoeff())) {
    throw UsageError("spectrum: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (r + r.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("spectrum: eigendecomposition failed");
  SpectrumReport s;
  s.eigenvalues = es.eigenvalues().reverse();
  const Eigen::VectorXd pos = s.eigenvalues.cwiseMax(0.0);
  const double total = pos.sum();
  if (!(total > 0.0)) throw NumericalError("spectrum: matrix has zero trace");
  const auto n = s.eigenvalues.size();
  s.explained.resize(n);
  s.residual_fraction.resize(n);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += pos(i);
    s.explained(i) = std::min(1.0, acc / total);
    s.residual_fraction(i) = 1.0 - s.explained(i);
  }
  return s;
}

int SpectrumReport::components_for(double q) const {
  for (Eigen::Index i = 0; i < explained.size(); ++i) {
    if (explained(i) >= q - 1e-12) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(explained.size());
}

nlohmann::json selection_to_json(const SelectionResult& r, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["objective"] = to_string(r.objective);
  std::vector<std::string> picked;
  for (int idx : r.order) picked.push_back(names.at(static_cast<std::size_t>(idx)));
  j["benchmarks"] = picked;
  j["indices"] = r.order;
  j["gains"] = r.gains;
  j["residual_trace"] = r.residual_trace;
  j["truncated"] = r.truncated;
  j["evaluations"] = r.evaluations;
  j["seed"] = r.seed ? nlohmann::json(*r.seed) : nlohmann::json(nullptr);
  if (r.objective == Objective::budgeted_entropy) {
    j["shift_c"] = r.shift_c;
    j["total_cost"] = r.total_cost;
  }
  j["warnings"] = r.warnings;
  return j;
}

}  // namespace benchsel
