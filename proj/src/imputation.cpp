#include "benchsel/imputation.hpp"

#include "benchsel/error.hpp"

#include <algorithm>

namespace benchsel {

RowImputation impute_row(const PartialRow& obs, const std::vector<int>& selected,
                         const std::vector<int>& targets, const GaussianModel& model, double ridge) {
  const int n = model.dim();
  if (static_cast<int>(obs.size()) != n) throw DataError("impute_row: row length differs from model dimension");
  if (!(ridge >= 0.0)) throw UsageError("impute_row: ridge must be >= 0");

  RowImputation out;
  out.targets = targets;
  std::vector<int> sel = selected;
  std::sort(sel.begin(), sel.end());
  sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
  for (int j : sel) {
    if (j < 0 || j >= n) throw UsageError("impute_row: selected index out of range");
    if (obs[static_cast<std::size_t>(j)]) out.used_condition.push_back(j);
  }
  for (int j : targets) {
    if (j < 0 || j >= n) throw UsageError("impute_row: target index out of range");
  }

  const auto& c = out.used_condition;
  if (c.empty()) {
    for (int j : targets) {
      out.predicted.push_back(model.mean(j));
      out.cond_var.push_back(model.cov(j, j));
    }
    return out;
  }

  Eigen::MatrixXd s_cc = model.cov(c, c);
  s_cc.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(s_cc);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("impute_row: conditioning block is singular after ridge");
  }
  Eigen::VectorXd resid(static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) {
    resid(static_cast<Eigen::Index>(i)) = *obs[static_cast<std::size_t>(c[i])] - model.mean(c[i]);
  }
  const Eigen::VectorXd x = llt.solve(resid);
  const Eigen::MatrixXd cross = model.cov(c, targets);  // |C| x |T|
  const Eigen::MatrixXd w = llt.matrixL().solve(cross);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    const int j = targets[t];
    out.predicted.push_back(model.mean(j) + cross.col(ti).dot(x));
    out.cond_var.push_back(model.cov(j, j) - w.col(ti).squaredNorm());
  }
  return out;
}

RowImputation impute_row(const PartialRow& obs, const std::vector<int>& selected,
                         const GaussianModel& model, double ridge) {
  std::vector<bool> in(static_cast<std::size_t>(model.dim()), false);
  for (int j : selected) {
    if (j < 0 || j >= model.dim()) throw UsageError("impute_row: selected index out of range");
    in[static_cast<std::size_t>(j)] = true;
  }
  std::vector<int> targets;
  for (int j = 0; j < model.dim(); ++j) {
    if (!in[static_cast<std::size_t>(j)]) targets.push_back(j);
  }
  return impute_row(obs, selected, targets, model, ridge);
}

ImputationResult impute_observed(const ScoreMatrix& m, const std::vector<int>& selected,
                                 const GaussianModel& model, double ridge) {
  std::vector<bool> in(static_cast<std::size_t>(m.cols()), false);
  for (int j : selected) in.at(static_cast<std::size_t>(j)) = true;
  ImputationResult res;
  res.rows.reserve(static_cast<std::size_t>(m.rows()));
  for (int i = 0; i < m.rows(); ++i) {
    std::vector<int> targets;
    for (int j = 0; j < m.cols(); ++j) {
      if (!in[static_cast<std::size_t>(j)] && m.observed(i, j)) targets.push_back(j);
    }
    res.rows.push_back(impute_row(m.row(i), selected, targets, model, ridge));
  }
  return res;
}

double clip_standardized(double v) { return std::clamp(v, -kClipBound, kClipBound); }

std::optional<double> r2_standardized(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size()) throw UsageError("r2_standardized: length mismatch");
  if (pred.empty()) throw UsageError("r2_standardized: empty input");
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    sse += e * e;
    sst += target[i] * target[i];
  }
  if (sst == 0.0) return std::nullopt;
  return 1.0 - sse / sst;
}

}  // namespace benchsel
