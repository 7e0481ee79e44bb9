#include "benchsel/covariance.hpp"

#include "benchsel/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace benchsel {

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::full: return "full";
    case Estimator::pairwise: return "pairwise";
    case Estimator::em: return "em";
  }
  return "unknown";
}

Estimator estimator_from_string(const std::string& s) {
  if (s == "full") return Estimator::full;
  if (s == "pairwise") return Estimator::pairwise;
  if (s == "em") return Estimator::em;
  throw UsageError("unknown estimator '" + s + "'");
}

GaussianModel make_model(Eigen::VectorXd mean, const Eigen::MatrixXd& cov, Estimator estimator) {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
    throw DataError("model mean/covariance dimensions disagree");
  }
  GaussianModel g;
  g.mean = std::move(mean);
  g.cov = 0.5 * (cov + cov.transpose());
  g.estimator = estimator;
  return g;
}

void EmConfig::validate() const {
  if (max_iter < 1) throw UsageError("EM max_iter must be >= 1");
  if (!(rel_tol > 0.0)) throw UsageError("EM rel_tol must be > 0");
  if (!(ridge >= 0.0)) throw UsageError("EM ridge must be >= 0");
  if (!(psd_floor > 0.0)) throw UsageError("EM psd_floor must be > 0");
}

EmConfig EmConfig::defaults_for(const ScoreMatrix& m) {
  EmConfig cfg;
  if (m.rows() < m.cols() || m.observed_fraction() < 0.5) cfg.psd_floor = 1e-3;
  return cfg;
}

void require_symmetric(const Eigen::MatrixXd& s, const char* where, double tol) {
  if (s.rows() != s.cols()) throw UsageError(std::string(where) + ": matrix is not square");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
    throw UsageError(std::string(where) + ": matrix is not symmetric");
  }
}

GaussianModel estimate_full(const ScoreMatrix& m) {
  if (m.rows() < 2) throw DataError("estimate_full needs at least 2 models");
  const Eigen::MatrixXd b = m.dense();
  Eigen::VectorXd mu = b.colwise().mean().transpose();
  const Eigen::MatrixXd centered = b.rowwise() - mu.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(m.rows() - 1);
  return make_model(std::move(mu), cov, Estimator::full);
}

Eigen::VectorXd mean_missing(const ScoreMatrix& m) {
  Eigen::VectorXd mu(m.cols());
  for (int j = 0; j < m.cols(); ++j) {
    const auto v = m.column_values(j);
    if (v.empty()) throw DataError("column with no observations");
    double s = 0.0;
    for (double x : v) s += x;
    mu(j) = s / static_cast<double>(v.size());
  }
  return mu;
}

Eigen::MatrixXd pairwise_cov(const ScoreMatrix& m, const Eigen::VectorXd& mu) {
  if (mu.size() != m.cols()) throw DataError("pairwise_cov: mean has wrong dimension");
  const Eigen::MatrixXd o = m.mask().cast<double>();
  Eigen::MatrixXd centered = m.filled(0.0);
  for (int j = 0; j < m.cols(); ++j) centered.col(j) = (centered.col(j).array() - mu(j)) * o.col(j).array();
  const Eigen::MatrixXd num = centered.transpose() * centered;
  const Eigen::MatrixXd den = (o.transpose() * o).array() - 1.0;
  return num.array() / den.array().max(1.0);
}

PsdProjection psd_project_tracked(const Eigen::MatrixXd& s, double floor) {
  require_symmetric(s, "psd_project");
  const Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericalError("psd_project: eigendecomposition failed");
  Eigen::VectorXd lambda = es.eigenvalues();
  PsdProjection out;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < floor) {
      lambda(i) = floor;
      ++out.clamped;
    }
  }
  if (out.clamped == 0) {
    out.matrix = sym;
    return out;
  }
  const Eigen::MatrixXd& v = es.eigenvectors();
  const Eigen::MatrixXd r = v * lambda.asDiagonal() * v.transpose();
  out.matrix = 0.5 * (r + r.transpose());
  return out;
}

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& s, double floor) {
  return psd_project_tracked(s, floor).matrix;
}

Eigen::MatrixXd shrink_identity(const Eigen::MatrixXd& s, int m, int n) {
  if (n <= 0) throw UsageError("shrink_identity: N must be positive");
  const double alpha = std::clamp(static_cast<double>(n - m) / n, 0.0, 1.0);
  if (alpha == 0.0) return s;
  const double target = s.trace() / n;
  Eigen::MatrixXd out = (1.0 - alpha) * s;
  out.diagonal().array() += alpha * target;
  return out;
}

namespace {

struct Pattern {
  std::vector<int> observed;
  std::vector<int> missing;
};

// Rows grouped by mask pattern, patterns in order of first appearance.
struct PatternIndex {
  std::vector<Pattern> patterns;
  std::vector<int> row_pattern;
};

PatternIndex index_patterns(const ScoreMatrix& m) {
  PatternIndex idx;
  std::map<std::vector<bool>, int> lookup;
  idx.row_pattern.resize(static_cast<std::size_t>(m.rows()));
  for (int i = 0; i < m.rows(); ++i) {
    std::vector<bool> key(static_cast<std::size_t>(m.cols()));
    for (int j = 0; j < m.cols(); ++j) key[j] = m.observed(i, j);
    auto [it, inserted] = lookup.emplace(key, static_cast<int>(idx.patterns.size()));
    if (inserted) {
      Pattern p;
      for (int j = 0; j < m.cols(); ++j) (key[j] ? p.observed : p.missing).push_back(j);
      idx.patterns.push_back(std::move(p));
    }
    idx.row_pattern[i] = it->second;
  }
  return idx;
}

// Conditional-distribution pieces shared by every row with one mask pattern.
struct PatternFactor {
  Eigen::LLT<Eigen::MatrixXd> chol;  // of Sigma_OO (+ ridge if needed)
  Eigen::MatrixXd gain;              // Sigma_UO Sigma_OO^{-1}
  Eigen::MatrixXd cond_cov;          // Sigma_UU - Sigma_UO Sigma_OO^{-1} Sigma_OU
  double logdet = 0.0;
};

PatternFactor factor_pattern(const Pattern& p, const Eigen::MatrixXd& sigma, double ridge,
                             const std::string& row_name) {
  PatternFactor f;
  if (p.observed.empty()) {
    f.cond_cov = sigma(p.missing, p.missing);
    return f;
  }
  const Eigen::MatrixXd s_oo = sigma(p.observed, p.observed);
  f.chol.compute(s_oo);
  if (f.chol.info() != Eigen::Success) {
    Eigen::MatrixXd reg = s_oo;
    reg.diagonal().array() += ridge;
    f.chol.compute(reg);
    if (f.chol.info() != Eigen::Success) {
      throw NumericalError("observed covariance block is singular for model '" + row_name +
                           "' even after ridge");
    }
  }
  f.logdet = 2.0 * f.chol.matrixL().toDenseMatrix().diagonal().array().log().sum();
  if (!p.missing.empty()) {
    const Eigen::MatrixXd s_ou = sigma(p.observed, p.missing);
    const Eigen::MatrixXd w = f.chol.matrixL().solve(s_ou);
    f.gain = f.chol.solve(s_ou).transpose();
    f.cond_cov = sigma(p.missing, p.missing) - w.transpose() * w;
  }
  return f;
}

std::vector<PatternFactor> factor_all(const ScoreMatrix& m, const PatternIndex& idx,
                                      const Eigen::MatrixXd& sigma, double ridge) {
  std::vector<PatternFactor> factors;
  factors.reserve(idx.patterns.size());
  for (std::size_t p = 0; p < idx.patterns.size(); ++p) {
    const auto first = std::find(idx.row_pattern.begin(), idx.row_pattern.end(), static_cast<int>(p));
    const auto row = static_cast<std::size_t>(first - idx.row_pattern.begin());
    factors.push_back(factor_pattern(idx.patterns[p], sigma, ridge, m.model_names()[row]));
  }
  return factors;
}

Eigen::VectorXd gather(const Eigen::MatrixXd& b, int row, const std::vector<int>& cols) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out(static_cast<Eigen::Index>(c)) = b(row, cols[c]);
  return out;
}

double row_loglik(const PatternFactor& f, const Eigen::VectorXd& resid) {
  if (resid.size() == 0) return 0.0;
  const Eigen::VectorXd z = f.chol.matrixL().solve(resid);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  return -0.5 * (static_cast<double>(resid.size()) * log2pi + f.logdet + z.squaredNorm());
}

}  // namespace

double observed_loglik(const ScoreMatrix& m, const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  const PatternIndex idx = index_patterns(m);
  const auto factors = factor_all(m, idx, sigma, 0.0);
  const Eigen::MatrixXd b = m.filled(0.0);
  double ll = 0.0;
  for (int i = 0; i < m.rows(); ++i) {
    const auto& p = idx.patterns[idx.row_pattern[i]];
    const Eigen::VectorXd r = gather(b, i, p.observed) - mu(p.observed);
    ll += row_loglik(factors[idx.row_pattern[i]], r);
  }
  return ll;
}

GaussianModel em_fit(const ScoreMatrix& m, const EmConfig& cfg) {
  cfg.validate();
  const int rows = m.rows();
  const int n = m.cols();
  const bool rank_deficient = rows < n;
  const bool shrink = cfg.shrink == ShrinkMode::automatic && rank_deficient;

  Eigen::VectorXd mu = mean_missing(m);
  Eigen::MatrixXd sigma = psd_project(pairwise_cov(m, mu), cfg.psd_floor);
  if (shrink) sigma = shrink_identity(sigma, rows, n);

  const PatternIndex idx = index_patterns(m);
  const Eigen::MatrixXd observed = m.filled(0.0);
  GaussianModel out;
  out.estimator = Estimator::em;
  out.converged = false;

  Eigen::MatrixXd completed(rows, n);
  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    // E-step
    const auto factors = factor_all(m, idx, sigma, cfg.ridge);
    Eigen::MatrixXd correction = Eigen::MatrixXd::Zero(n, n);
    double ll = 0.0;
    for (int i = 0; i < rows; ++i) {
      const auto& p = idx.patterns[idx.row_pattern[i]];
      const auto& f = factors[idx.row_pattern[i]];
      completed.row(i) = observed.row(i);
      const Eigen::VectorXd r = gather(observed, i, p.observed) - mu(p.observed);
      ll += row_loglik(f, r);
      if (p.missing.empty()) continue;
      Eigen::VectorXd fill = mu(p.missing);
      if (!p.observed.empty()) fill += f.gain * r;
      for (std::size_t u = 0; u < p.missing.size(); ++u) completed(i, p.missing[u]) = fill(static_cast<Eigen::Index>(u));
      correction(p.missing, p.missing) += f.cond_cov;
    }
    out.loglik_trace.push_back(ll);

    // M-step
    Eigen::VectorXd mu_next = completed.colwise().mean().transpose();
    const Eigen::MatrixXd centered = completed.rowwise() - mu_next.transpose();
    Eigen::MatrixXd next = (centered.transpose() * centered + correction) / static_cast<double>(rows);
    next = 0.5 * (next + next.transpose());
    auto proj = psd_project_tracked(next, cfg.psd_floor);
    out.clamp_counts.push_back(proj.clamped);

    const double change = (proj.matrix - sigma).norm() / sigma.norm();
    sigma = std::move(proj.matrix);
    mu = std::move(mu_next);
    out.em_iterations = iter;
    if (change < cfg.rel_tol) {
      out.converged = true;
      break;
    }
  }
  out.loglik_trace.push_back(observed_loglik(m, mu, sigma));
  if (shrink) {
    sigma = shrink_identity(sigma, rows, n);
    out.shrunk = true;
  }
  out.mean = std::move(mu);
  out.cov = 0.5 * (sigma + sigma.transpose());
  return out;
}

Eigen::MatrixXd complete_matrix(const ScoreMatrix& m, const GaussianModel& model, double ridge) {
  if (model.dim() != m.cols()) throw DataError("complete_matrix: model dimension mismatch");
  const PatternIndex idx = index_patterns(m);
  const auto factors = factor_all(m, idx, model.cov, ridge);
  Eigen::MatrixXd out = m.filled(0.0);
  for (int i = 0; i < m.rows(); ++i) {
    const auto& p = idx.patterns[idx.row_pattern[i]];
    if (p.missing.empty()) continue;
    Eigen::VectorXd fill = model.mean(p.missing);
    if (!p.observed.empty()) {
      fill += factors[idx.row_pattern[i]].gain * (gather(out, i, p.observed) - model.mean(p.observed));
    }
    for (std::size_t u = 0; u < p.missing.size(); ++u) out(i, p.missing[u]) = fill(static_cast<Eigen::Index>(u));
  }
  return out;
}

Eigen::MatrixXd to_correlation(const Eigen::MatrixXd& s) {
  if (s.rows() != s.cols()) throw UsageError("to_correlation: matrix is not square");
  const Eigen::VectorXd d = s.diagonal();
  if ((d.array() <= 0.0).any()) throw NumericalError("to_correlation: nonpositive diagonal entry");
  const Eigen::VectorXd inv = d.array().sqrt().inverse();
  Eigen::MatrixXd r = inv.asDiagonal() * s * inv.asDiagonal();
  r = 0.5 * (r + r.transpose());
  r.diagonal().setOnes();
  return r.cwiseMax(-1.0).cwiseMin(1.0);
}

nlohmann::json model_to_json(const GaussianModel& model) {
  nlohmann::json j;
  j["estimator"] = to_string(model.estimator);
  j["dim"] = model.dim();
  j["mean"] = std::vector<double>(model.mean.data(), model.mean.data() + model.mean.size());
  std::vector<double> cov;
  cov.reserve(static_cast<std::size_t>(model.cov.size()));
  for (Eigen::Index r = 0; r < model.cov.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.cov.cols(); ++c) cov.push_back(model.cov(r, c));
  }
  j["cov"] = cov;
  j["em_iterations"] = model.em_iterations;
  j["converged"] = model.converged;
  j["shrunk"] = model.shrunk;
  j["loglik_trace"] = model.loglik_trace;
  return j;
}

GaussianModel model_from_json(const nlohmann::json& j) {
  try {
    const int n = j.at("dim").get<int>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto cov = j.at("cov").get<std::vector<double>>();
    if (n < 1 || static_cast<int>(mean.size()) != n || static_cast<long>(cov.size()) != static_cast<long>(n) * n) {
      throw DataError("model JSON: inconsistent dimensions");
    }
    Eigen::MatrixXd c(n, n);
    for (int r = 0; r < n; ++r) {
      for (int k = 0; k < n; ++k) c(r, k) = cov[static_cast<std::size_t>(r) * n + k];
    }
    GaussianModel g = make_model(Eigen::Map<const Eigen::VectorXd>(mean.data(), n), c,
                                 estimator_from_string(j.at("estimator").get<std::string>()));
    g.em_iterations = j.value("em_iterations", 0);
    g.converged = j.value("converged", true);
    g.shrunk = j.value("shrunk", false);
    g.loglik_trace = j.value("loglik_trace", std::vector<double>{});
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model JSON: ") + e.what());
  }
}

}  // namespace benchsel
