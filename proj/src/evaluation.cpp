#include "benchsel/evaluation.hpp"

#include "benchsel/covariance.hpp"
#include "benchsel/error.hpp"
#include "benchsel/imputation.hpp"
#include "benchsel/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace benchsel {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string to_string(Method m) {
  switch (m) {
    case Method::entropy: return "entropy";
    case Method::mi: return "mi";
    case Method::random: return "random";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  if (s == "entropy") return Method::entropy;
  if (s == "mi") return Method::mi;
  if (s == "random") return Method::random;
  throw UsageError("unknown method '" + s + "'");
}

std::string to_string(EstimatorPolicy p) {
  switch (p) {
    case EstimatorPolicy::automatic: return "auto";
    case EstimatorPolicy::full: return "full";
    case EstimatorPolicy::em: return "em";
  }
  return "unknown";
}

EstimatorPolicy estimator_policy_from_string(const std::string& s) {
  if (s == "auto") return EstimatorPolicy::automatic;
  if (s == "full") return EstimatorPolicy::full;
  if (s == "em") return EstimatorPolicy::em;
  throw UsageError("unknown estimator policy '" + s + "'");
}

void CvConfig::validate() const {
  if (folds < 2) throw UsageError("folds must be >= 2");
  if (k_max < 1) throw UsageError("k_max must be >= 1");
  if (holdout_fractions.empty()) throw UsageError("at least one holdout fraction is required");
  for (double p : holdout_fractions) {
    if (!(p > 0.0 && p < 1.0)) throw UsageError("holdout fractions must lie in (0, 1)");
  }
  if (methods.empty()) throw UsageError("at least one method is required");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t j = i + 1; j < methods.size(); ++j) {
      if (methods[i] == methods[j]) throw UsageError("duplicate method " + to_string(methods[i]));
    }
  }
  if (!(ridge >= 0.0)) throw UsageError("ridge must be >= 0");
  if (logit_mode && !(logit_epsilon > 0.0 && logit_epsilon < 0.5)) {
    throw UsageError("logit epsilon must lie in (0, 0.5)");
  }
}

nlohmann::json CvConfig::to_json() const {
  nlohmann::json j;
  j["folds"] = folds;
  j["holdout_fractions"] = holdout_fractions;
  j["k_max"] = k_max;
  std::vector<std::string> ms;
  for (auto m : methods) ms.push_back(to_string(m));
  j["methods"] = ms;
  j["seed"] = seed;
  j["estimator"] = to_string(estimator_policy);
  j["ridge"] = ridge;
  j["logit"] = logit_mode;
  j["logit_epsilon"] = logit_epsilon;
  return j;
}

std::vector<int> fold_sizes(int m, int k) {
  if (k < 1 || m < k) throw DataError("need at least as many models as folds");
  std::vector<int> sizes(static_cast<std::size_t>(k), m / k);
  for (int f = 0; f < m % k; ++f) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

int training_size(double holdout, int m, int pool) {
  const double x = (1.0 - holdout) * m;
  double r = std::floor(x);
  const double frac = x - r;
  if (frac > 0.5 || (frac == 0.5 && std::fmod(r, 2.0) != 0.0)) r += 1.0;
  return std::min(static_cast<int>(r), pool);
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double sum = 0.0;
  int n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    sum += x;
    ++n;
  }
  if (n == 0) return {kNaN, kNaN};
  const double mean = sum / n;
  if (n == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) {
    if (!std::isnan(x)) ss += (x - mean) * (x - mean);
  }
  return {mean, std::sqrt(ss / (n - 1))};
}

namespace {

struct TaskOutput {
  std::vector<CvCell> cells;
  std::vector<SelectionOrder> orders;
  std::vector<std::string> warnings;
};

std::optional<std::pair<double, double>> mean_sd(const std::vector<double>& v) {
  if (v.size() < 2) return std::nullopt;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  if (!(sd > 0.0)) return std::nullopt;
  return std::make_pair(mean, sd);
}

std::string label(double p, int fold) {
  std::ostringstream s;
  s << "holdout " << format_double(p) << ", fold " << fold;
  return s.str();
}

// One (holdout, fold) cell of the protocol: fit on training rows only,
// select for every method, impute the validation rows for k = 1..k_max.
TaskOutput run_task(const ScoreMatrix& m, const CvConfig& cfg, std::size_t pi, int fold,
                    std::vector<int> validation, const std::vector<int>& pool) {
  TaskOutput out;
  const double p = cfg.holdout_fractions[pi];
  const std::string where = label(p, fold);

  Rng pool_rng(derive_seed(cfg.seed, "training-subsample", pi, static_cast<std::uint64_t>(fold)));
  const auto pool_perm = random_permutation(static_cast<int>(pool.size()), pool_rng);
  const int n_train = training_size(p, m.rows(), static_cast<int>(pool.size()));
  std::vector<int> train;
  for (int t = 0; t < n_train; ++t) train.push_back(pool[static_cast<std::size_t>(pool_perm[t])]);
  std::sort(train.begin(), train.end());
  std::sort(validation.begin(), validation.end());

  // Column screening on training rows.
  std::vector<int> kept;
  std::vector<double> col_max, t_mean, t_sd, r_mean, r_sd;
  for (int j = 0; j < m.cols(); ++j) {
    const auto& name = m.benchmark_names()[static_cast<std::size_t>(j)];
    std::vector<double> raw;
    for (int i : train) {
      if (auto v = m.at(i, j)) raw.push_back(*v);
    }
    if (raw.size() < 2) {
      out.warnings.push_back(where + ": excluded benchmark '" + name + "' (fewer than 2 training observations)");
      continue;
    }
    const auto raw_ms = mean_sd(raw);
    if (!raw_ms) {
      out.warnings.push_back(where + ": excluded benchmark '" + name + "' (zero training variance)");
      continue;
    }
    double cmax = 0.0;
    std::vector<double> tv = raw;
    if (cfg.logit_mode) {
      if (*std::min_element(raw.begin(), raw.end()) < 0.0) {
        throw DataError("benchmark '" + name + "' has negative scores; logit mode needs nonnegative scores");
      }
      cmax = *std::max_element(raw.begin(), raw.end());
      for (double& v : tv) v = logit_score(v, cmax, cfg.logit_epsilon);
    }
    const auto t_ms = cfg.logit_mode ? mean_sd(tv) : raw_ms;
    if (!t_ms) {
      out.warnings.push_back(where + ": excluded benchmark '" + name + "' (zero variance in logit space)");
      continue;
    }
    kept.push_back(j);
    col_max.push_back(cmax);
    t_mean.push_back(t_ms->first);
    t_sd.push_back(t_ms->second);
    r_mean.push_back(raw_ms->first);
    r_sd.push_back(raw_ms->second);
  }
  const int n = static_cast<int>(kept.size());
  if (n < 2) throw DataError(where + ": fewer than 2 usable benchmarks in the training set");

  auto transformed_z = [&](int i, int c) -> std::optional<double> {
    const auto v = m.at(i, kept[static_cast<std::size_t>(c)]);
    if (!v) return std::nullopt;
    double t = *v;
    if (cfg.logit_mode) {
      if (t < 0.0) throw DataError("negative score under logit mode");
      t = logit_score(t, col_max[c], cfg.logit_epsilon);
    }
    return (t - t_mean[c]) / t_sd[c];
  };

  // Standardized training matrix; rows left empty by the screening are dropped.
  std::vector<std::vector<std::optional<double>>> rows;
  std::vector<std::string> names;
  for (int i : train) {
    std::vector<std::optional<double>> r(static_cast<std::size_t>(n));
    bool any = false;
    for (int c = 0; c < n; ++c) {
      r[c] = transformed_z(i, c);
      any = any || r[c].has_value();
    }
    if (!any) {
      out.warnings.push_back(where + ": dropped training model '" + m.model_names()[i] + "' (no usable scores)");
      continue;
    }
    rows.push_back(std::move(r));
    names.push_back(m.model_names()[static_cast<std::size_t>(i)]);
  }
  Eigen::MatrixXd tv = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), n);
  MaskMatrix tm = MaskMatrix::Constant(static_cast<Eigen::Index>(rows.size()), n, false);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int c = 0; c < n; ++c) {
      if (rows[r][c]) {
        tv(static_cast<Eigen::Index>(r), c) = *rows[r][c];
        tm(static_cast<Eigen::Index>(r), c) = true;
      }
    }
  }
  std::vector<std::string> bench;
  for (int j : kept) bench.push_back(m.benchmark_names()[static_cast<std::size_t>(j)]);
  const ScoreMatrix z_train(tv, tm, names, bench, m.row_label());

  GaussianModel model;
  const bool complete = z_train.fully_observed();
  switch (cfg.estimator_policy) {
    case EstimatorPolicy::automatic:
      model = complete ? estimate_full(z_train) : em_fit(z_train, EmConfig::defaults_for(z_train));
      break;
    case EstimatorPolicy::full:
      if (!complete) throw DataError(where + ": full estimator requires a fully observed training set");
      model = estimate_full(z_train);
      break;
    case EstimatorPolicy::em:
      model = em_fit(z_train, EmConfig::defaults_for(z_train));
      break;
  }
  if (model.estimator == Estimator::em && !model.converged) {
    out.warnings.push_back(where + ": EM stopped at max_iter without converging");
  }
  const Eigen::MatrixXd& sigma = model.cov;
  const double total_var = sigma.trace();

  // Validation rows in standardized (transformed) space, and the raw-space
  // standardized targets used for scoring.
  std::vector<PartialRow> val_z;
  std::vector<PartialRow> val_target;
  for (int i : validation) {
    PartialRow zr(static_cast<std::size_t>(n));
    PartialRow tr(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
      zr[c] = transformed_z(i, c);
      if (const auto v = m.at(i, kept[static_cast<std::size_t>(c)])) {
        const double z = cfg.logit_mode ? (*v - r_mean[c]) / r_sd[c] : *zr[c];
        tr[c] = clip_standardized(z);
      }
    }
    val_z.push_back(std::move(zr));
    val_target.push_back(std::move(tr));
  }

  const int k_eff = std::min(cfg.k_max, n - 1);
  if (k_eff < cfg.k_max) {
    out.warnings.push_back(where + ": only " + std::to_string(n) + " benchmarks; k capped at " + std::to_string(k_eff));
  }

  for (Method method : cfg.methods) {
    SelectionResult sel;
    switch (method) {
      case Method::entropy: sel = greedy_entropy(sigma, k_eff); break;
      case Method::mi: sel = greedy_mi(sigma, k_eff); break;
      case Method::random:
        sel = random_select(n, k_eff, derive_seed(cfg.seed, "random-selection", pi, static_cast<std::uint64_t>(fold)));
        break;
    }
    for (const auto& w : sel.warnings) out.warnings.push_back(where + ", " + to_string(method) + ": " + w);
    SelectionResult path = sel;
    annotate_entropy_path(sigma, path);

    SelectionOrder order{method, p, fold, {}};
    for (int c : sel.order) order.benchmarks.push_back(bench[static_cast<std::size_t>(c)]);
    out.orders.push_back(std::move(order));

    double entropy_acc = 0.0;
    for (int k = 1; k <= cfg.k_max; ++k) {
      CvCell cell{method, p, fold, k, kNaN, kNaN, kNaN, kNaN, kNaN, 0};
      if (k > static_cast<int>(sel.order.size())) {
        out.cells.push_back(cell);
        continue;
      }
      const std::vector<int> a(sel.order.begin(), sel.order.begin() + k);
      entropy_acc += path.gains[static_cast<std::size_t>(k - 1)];
      cell.entropy = entropy_acc;
      cell.residual_fraction = path.residual_trace[static_cast<std::size_t>(k)] / total_var;
      cell.mi = mi_value(sigma, a);

      std::vector<bool> in_a(static_cast<std::size_t>(n), false);
      for (int c : a) in_a[static_cast<std::size_t>(c)] = true;
      std::vector<double> pred, target;
      std::vector<double> sse(static_cast<std::size_t>(n), 0.0), sst(static_cast<std::size_t>(n), 0.0);
      std::vector<int> count(static_cast<std::size_t>(n), 0);
      for (std::size_t r = 0; r < val_z.size(); ++r) {
        std::vector<int> targets;
        for (int c = 0; c < n; ++c) {
          if (!in_a[c] && val_target[r][c]) targets.push_back(c);
        }
        if (targets.empty()) continue;
        const auto imp = impute_row(val_z[r], a, targets, model, cfg.ridge);
        for (std::size_t t = 0; t < targets.size(); ++t) {
          const int c = targets[t];
          double yhat = imp.predicted[t];
          if (cfg.logit_mode) {
            const double f = t_mean[c] + t_sd[c] * yhat;
            yhat = (inverse_logit_score(f, col_max[c]) - r_mean[c]) / r_sd[c];
          }
          const double y = *val_target[r][c];
          pred.push_back(yhat);
          target.push_back(y);
          sse[c] += (yhat - y) * (yhat - y);
          sst[c] += y * y;
          ++count[c];
        }
      }
      cell.n_targets = static_cast<int>(pred.size());
      if (!pred.empty()) {
        if (auto r2 = r2_standardized(pred, target)) cell.r2 = *r2;
      }
      double bsum = 0.0;
      int bn = 0;
      for (int c = 0; c < n; ++c) {
        if (count[c] > 0 && sst[c] > 0.0) {
          bsum += 1.0 - sse[c] / sst[c];
          ++bn;
        }
      }
      if (bn > 0) cell.r2_benchmark_mean = bsum / bn;
      out.cells.push_back(cell);
    }
  }
  return out;
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<CvCell>& cells, const CvConfig& cfg) {
  std::vector<SummaryRow> rows;
  for (Method method : cfg.methods) {
    for (double p : cfg.holdout_fractions) {
      for (int k = 1; k <= cfg.k_max; ++k) {
        std::vector<double> r2, rf, ent, mi;
        for (const auto& c : cells) {
          if (c.method != method || c.holdout != p || c.k != k) continue;
          r2.push_back(c.r2);
          rf.push_back(c.residual_fraction);
          ent.push_back(c.entropy);
          mi.push_back(c.mi);
        }
        SummaryRow s;
        s.method = method;
        s.holdout = p;
        s.k = k;
        s.n_folds = static_cast<int>(std::count_if(r2.begin(), r2.end(), [](double v) { return !std::isnan(v); }));
        std::tie(s.r2_mean, s.r2_std) = mean_std(r2);
        std::tie(s.residual_fraction_mean, s.residual_fraction_std) = mean_std(rf);
        std::tie(s.entropy_mean, s.entropy_std) = mean_std(ent);
        std::tie(s.mi_mean, s.mi_std) = mean_std(mi);
        rows.push_back(s);
      }
    }
  }
  return rows;
}

CvReport run_cv(const ScoreMatrix& m, const CvConfig& cfg, const CvOptions& opts) {
  cfg.validate();
  const int rows = m.rows();
  const auto sizes = fold_sizes(rows, cfg.folds);
  Rng fold_rng(derive_seed(cfg.seed, "fold-permutation"));
  const auto perm = random_permutation(rows, fold_rng);
  std::vector<int> fold_of(static_cast<std::size_t>(rows));
  {
    int offset = 0;
    for (int f = 0; f < cfg.folds; ++f) {
      for (int t = 0; t < sizes[static_cast<std::size_t>(f)]; ++t) fold_of[perm[offset + t]] = f;
      offset += sizes[static_cast<std::size_t>(f)];
    }
  }

  struct Task {
    std::size_t pi;
    int fold;
  };
  std::vector<Task> tasks;
  for (std::size_t pi = 0; pi < cfg.holdout_fractions.size(); ++pi) {
    for (int f = 0; f < cfg.folds; ++f) tasks.push_back({pi, f});
  }
  std::vector<TaskOutput> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::mutex progress_mu;

  auto execute = [&](std::size_t t) {
    const auto [pi, f] = tasks[t];
    std::vector<int> validation, pool;
    // Pool order follows the fold permutation so it does not depend on row order.
    for (int r : perm) (fold_of[r] == f ? validation : pool).push_back(r);
    try {
      results[t] = run_task(m, cfg, pi, f, validation, pool);
    } catch (...) {
      errors[t] = std::current_exception();
    }
    if (opts.progress) {
      std::lock_guard<std::mutex> lock(progress_mu);
      opts.progress(label(cfg.holdout_fractions[pi], f) + " done");
    }
  };

  const int threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(tasks.size())));
  if (threads == 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t) execute(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < tasks.size(); t = next++) execute(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Deterministic merge keyed by (method, holdout, fold, k).
  CvReport report;
  for (auto& r : results) {
    report.warnings.insert(report.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  for (Method method : cfg.methods) {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      for (const auto& c : results[t].cells) {
        if (c.method == method) report.cells.push_back(c);
      }
      for (const auto& o : results[t].orders) {
        if (o.method == method) report.selection_orders.push_back(o);
      }
    }
  }
  report.summary = summarize(report.cells, cfg);
  return report;
}

std::vector<ComparisonRow> compare_methods(const CvReport& report, const std::vector<Method>& required) {
  const std::vector<Method> canonical{Method::entropy, Method::mi, Method::random};
  std::vector<Method> present;
  for (Method m : canonical) {
    if (std::any_of(report.summary.begin(), report.summary.end(), [&](const SummaryRow& s) { return s.method == m; })) {
      present.push_back(m);
    }
  }
  for (Method m : required) {
    if (std::find(present.begin(), present.end(), m) == present.end()) {
      throw UsageError("compare_methods: method '" + to_string(m) + "' missing from report");
    }
  }
  if (present.size() < 2) throw UsageError("compare_methods: report needs at least two methods");

  std::map<std::pair<double, int>, std::map<Method, const SummaryRow*>> grid;
  for (const auto& s : report.summary) grid[{s.holdout, s.k}][s.method] = &s;

  std::vector<ComparisonRow> out;
  for (const auto& [key, by_method] : grid) {
    ComparisonRow row;
    row.holdout = key.first;
    row.k = key.second;
    for (Method m : present) {
      const auto it = by_method.find(m);
      row.methods.push_back(m);
      row.r2_mean.push_back(it == by_method.end() ? kNaN : it->second->r2_mean);
      row.r2_std.push_back(it == by_method.end() ? kNaN : it->second->r2_std);
    }
    for (std::size_t a = 0; a < present.size(); ++a) {
      for (std::size_t b = a + 1; b < present.size(); ++b) {
        row.differences.push_back({{present[a], present[b]}, row.r2_mean[a] - row.r2_mean[b]});
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

namespace {

std::string num(double v) { return std::isnan(v) ? std::string() : format_double(v); }

nlohmann::json jnum(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace

void write_cells_csv(std::ostream& out, const CvReport& report) {
  out << "method,holdout,fold,k,r2,r2_benchmark_mean,residual_fraction,entropy,mi,n_targets\n";
  for (const auto& c : report.cells) {
    out << to_string(c.method) << ',' << format_double(c.holdout) << ',' << c.fold << ',' << c.k << ','
        << num(c.r2) << ',' << num(c.r2_benchmark_mean) << ',' << num(c.residual_fraction) << ','
        << num(c.entropy) << ',' << num(c.mi) << ',' << c.n_targets << '\n';
  }
}

void write_orders_csv(std::ostream& out, const CvReport& report) {
  out << "method,holdout,fold,rank,benchmark\n";
  for (const auto& o : report.selection_orders) {
    for (std::size_t r = 0; r < o.benchmarks.size(); ++r) {
      out << to_string(o.method) << ',' << format_double(o.holdout) << ',' << o.fold << ',' << r + 1 << ','
          << o.benchmarks[r] << '\n';
    }
  }
}

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  if (rows.empty()) return;
  out << "holdout,k";
  for (Method m : rows.front().methods) out << ",r2_mean_" << to_string(m) << ",r2_std_" << to_string(m);
  for (const auto& d : rows.front().differences) {
    out << ",diff_" << to_string(d.first.first) << "_minus_" << to_string(d.first.second);
  }
  out << '\n';
  for (const auto& r : rows) {
    out << format_double(r.holdout) << ',' << r.k;
    for (std::size_t i = 0; i < r.methods.size(); ++i) out << ',' << num(r.r2_mean[i]) << ',' << num(r.r2_std[i]);
    for (const auto& d : r.differences) out << ',' << num(d.second);
    out << '\n';
  }
}

nlohmann::json summary_to_json(const CvReport& report) {
  nlohmann::json j;
  auto& rows = j["summary"] = nlohmann::json::array();
  for (const auto& s : report.summary) {
    rows.push_back({{"method", to_string(s.method)},
                    {"holdout", s.holdout},
                    {"k", s.k},
                    {"n_folds", s.n_folds},
                    {"r2_mean", jnum(s.r2_mean)},
                    {"r2_std", jnum(s.r2_std)},
                    {"residual_fraction_mean", jnum(s.residual_fraction_mean)},
                    {"residual_fraction_std", jnum(s.residual_fraction_std)},
                    {"entropy_mean", jnum(s.entropy_mean)},
                    {"entropy_std", jnum(s.entropy_std)},
                    {"mi_mean", jnum(s.mi_mean)},
                    {"mi_std", jnum(s.mi_std)}});
  }
  auto& orders = j["selection_orders"] = nlohmann::json::array();
  for (const auto& o : report.selection_orders) {
    orders.push_back({{"method", to_string(o.method)}, {"holdout", o.holdout}, {"fold", o.fold}, {"benchmarks", o.benchmarks}});
  }
  j["warnings"] = report.warnings;
  return j;
}

}  // namespace benchsel
