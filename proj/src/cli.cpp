#include "benchsel/cli.hpp"

#include "benchsel/covariance.hpp"
#include "benchsel/diagnostics.hpp"
#include "benchsel/error.hpp"
#include "benchsel/evaluation.hpp"
#include "benchsel/imputation.hpp"
#include "benchsel/score_matrix.hpp"
#include "benchsel/selection.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#ifndef BENCHSEL_VERSION
#define BENCHSEL_VERSION "unknown"
#endif

namespace benchsel {

namespace fs = std::filesystem;
using nlohmann::json;

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("SHA-256 initialisation failed");
  }
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

namespace {

// Everything a command needs to reproduce its outputs. Paths, --out,
// --threads and --verbose are deliberately absent.
struct Manifest {
  std::string command;
  json config = json::object();
  std::string input_digest;
  json extra_digests = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
  std::vector<std::string> outputs;

  json to_json() const {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["input_digest"] = input_digest;
    if (!extra_digests.empty()) j["extra_digests"] = extra_digests;
    j["tool_version"] = BENCHSEL_VERSION;
    j["seed"] = seed;
    j["warnings"] = warnings;
    j["outputs"] = outputs;
    return j;
  }
};

std::ofstream open_out(const fs::path& dir, const std::string& name, Manifest& man) {
  std::ofstream f(dir / name, std::ios::binary);
  if (!f) throw DataError("cannot write '" + (dir / name).string() + "'");
  f.precision(17);
  man.outputs.push_back(name);
  return f;
}

void write_json(const fs::path& dir, const std::string& name, const json& j) {
  std::ofstream f(dir / name, std::ios::binary);
  if (!f) throw DataError("cannot write '" + (dir / name).string() + "'");
  f << j.dump(2) << '\n';
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + out + "': " + ec.message());
  return dir;
}

std::string num(double v) { return std::isnan(v) ? std::string() : format_double(v); }

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd json_vec(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

// Fitted pipeline: optional logit transform, z-scoring, Gaussian model.
struct Fit {
  std::vector<std::string> benchmarks;
  std::optional<LogitParams> logit;
  ColumnStats stats;
  GaussianModel model;
  std::vector<std::string> warnings;
};

Fit fit_pipeline(const ScoreMatrix& raw, EstimatorPolicy policy, bool logit, double eps, bool scale = true) {
  Fit f;
  f.benchmarks = raw.benchmark_names();
  ScoreMatrix t = raw;
  if (logit) {
    f.logit = logit_params(raw, eps);
    t = logit_transform(raw, *f.logit);
  }
  f.stats = column_stats(t);
  if (!scale) {
    f.stats.stds.setOnes();
    f.stats.source = "centered";
  }
  const ScoreMatrix z = standardize(t, f.stats);
  switch (policy) {
    case EstimatorPolicy::automatic:
      f.model = z.fully_observed() ? estimate_full(z) : em_fit(z, EmConfig::defaults_for(z));
      break;
    case EstimatorPolicy::full:
      if (!z.fully_observed()) throw DataError("--estimator full requires a fully observed matrix");
      f.model = estimate_full(z);
      break;
    case EstimatorPolicy::em:
      f.model = em_fit(z, EmConfig::defaults_for(z));
      break;
  }
  if (f.model.estimator == Estimator::em && !f.model.converged) {
    f.warnings.push_back("EM stopped at max_iter without converging");
  }
  if (f.model.shrunk) f.warnings.push_back("covariance shrunk toward a scaled identity (fewer models than benchmarks)");
  return f;
}

json fit_to_json(const Fit& f) {
  json j;
  j["benchmarks"] = f.benchmarks;
  j["column_stats"] = {{"means", vec_json(f.stats.means)}, {"stds", vec_json(f.stats.stds)}};
  if (f.logit) {
    j["logit"] = {{"col_max", vec_json(f.logit->col_max)}, {"epsilon", f.logit->epsilon}};
  } else {
    j["logit"] = nullptr;
  }
  j["model"] = model_to_json(f.model);
  return j;
}

Fit fit_from_json(const json& j) {
  try {
    Fit f;
    f.benchmarks = j.at("benchmarks").get<std::vector<std::string>>();
    f.stats.means = json_vec(j.at("column_stats").at("means"));
    f.stats.stds = json_vec(j.at("column_stats").at("stds"));
    f.stats.source = "model";
    if (j.contains("logit") && !j.at("logit").is_null()) {
      f.logit = LogitParams{json_vec(j.at("logit").at("col_max")), j.at("logit").at("epsilon").get<double>()};
    }
    f.model = model_from_json(j.at("model"));
    const auto n = static_cast<Eigen::Index>(f.benchmarks.size());
    if (f.stats.means.size() != n || f.stats.stds.size() != n || f.model.dim() != n ||
        (f.logit && f.logit->col_max.size() != n)) {
      throw DataError("model file: inconsistent dimensions");
    }
    return f;
  } catch (const json::exception& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
}

void emit_warnings(std::ostream& err, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
}

// ---------------------------------------------------------------- spectrum

struct SpectrumArgs {
  std::string input;
  std::string estimator = "auto";
  std::string out = ".";
};

int cmd_spectrum(const SpectrumArgs& a, std::ostream& out, std::ostream& err) {
  const auto policy = estimator_policy_from_string(a.estimator);
  Manifest man;
  man.command = "spectrum";
  man.config = {{"estimator", a.estimator}};
  man.input_digest = file_digest(a.input);
  const ScoreMatrix m = load_csv_file(a.input);
  const Fit f = fit_pipeline(m, policy, false, 1e-3);
  man.warnings = f.warnings;
  const SpectrumReport s = spectrum(to_correlation(f.model.cov));

  const fs::path dir = prepare_out(a.out);
  {
    auto csv = open_out(dir, "spectrum.csv", man);
    csv << "k,eigenvalue,explained,residual_fraction\n";
    for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
      csv << i + 1 << ',' << format_double(s.eigenvalues(i)) << ',' << format_double(s.explained(i)) << ','
          << format_double(s.residual_fraction(i)) << '\n';
    }
  }
  json thresholds;
  for (double q : {0.90, 0.95, 0.99}) {
    const int k = s.components_for(q);
    thresholds[format_double(q)] = k;
    out << "k(" << static_cast<int>(std::lround(q * 100)) << "%) = " << k << '\n';
  }
  json j = man.to_json();
  j["estimator_used"] = to_string(f.model.estimator);
  j["em_iterations"] = f.model.em_iterations;
  j["components_for"] = thresholds;
  write_json(dir, "spectrum.json", j);
  emit_warnings(err, man.warnings);
  return kExitOk;
}

// ------------------------------------------------------------------ select

struct SelectArgs {
  std::string input;
  std::string objective = "entropy";
  std::optional<int> k;
  std::string costs;
  std::optional<double> budget;
  std::optional<double> shift_c;
  std::uint64_t seed = 0;
  bool lazy = false;
  bool logit = false;
  bool no_standardize = false;
  std::string estimator = "auto";
  std::string out = ".";
};

std::vector<double> load_costs(const std::string& path, const std::vector<std::string>& names) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::map<std::string, double> by_name;
  std::string line;
  bool header = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("costs line " + std::to_string(line_no) + ": expected 'benchmark,cost'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string name = trim(line.substr(0, comma));
    const std::string value = trim(line.substr(comma + 1));
    double c = 0.0;
    try {
      std::size_t used = 0;
      c = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw DataError("costs line " + std::to_string(line_no) + ": bad cost '" + value + "'");
    }
    if (!by_name.emplace(name, c).second) throw DataError("costs: duplicate benchmark '" + name + "'");
  }
  std::vector<double> costs;
  for (const auto& n : names) {
    const auto it = by_name.find(n);
    if (it == by_name.end()) throw DataError("costs: no cost for benchmark '" + n + "'");
    costs.push_back(it->second);
  }
  return costs;
}

int cmd_select(const SelectArgs& a, std::ostream& out, std::ostream& err) {
  const Objective obj = objective_from_string(a.objective);
  const auto policy = estimator_policy_from_string(a.estimator);
  if (a.budget && a.costs.empty()) throw UsageError("--budget requires --costs");
  if (obj == Objective::budgeted_entropy) {
    if (a.costs.empty() || !a.budget) throw UsageError("--objective budgeted requires --costs and --budget");
  } else {
    if (!a.costs.empty() || a.budget || a.shift_c) {
      throw UsageError("--costs, --budget and --shift-c apply only to --objective budgeted");
    }
    if (!a.k) throw UsageError("--k is required for --objective " + a.objective);
  }
  if (a.lazy && obj != Objective::entropy) throw UsageError("--lazy applies only to --objective entropy");

  Manifest man;
  man.command = "select";
  man.config = {{"objective", to_string(obj)}, {"estimator", a.estimator}, {"lazy", a.lazy}, {"logit", a.logit},
                {"standardize", !a.no_standardize}};
  if (a.k) man.config["k"] = *a.k;
  if (a.budget) man.config["budget"] = *a.budget;
  if (a.shift_c) man.config["shift_c"] = *a.shift_c;
  man.seed = a.seed;
  man.input_digest = file_digest(a.input);
  if (!a.costs.empty()) man.extra_digests["costs"] = file_digest(a.costs);

  const ScoreMatrix m = load_csv_file(a.input);
  const Fit f = fit_pipeline(m, policy, a.logit, 1e-3, !a.no_standardize);
  man.warnings = f.warnings;
  const Eigen::MatrixXd& sigma = f.model.cov;
  const int n = f.model.dim();

  SelectionResult r;
  std::vector<double> costs;
  switch (obj) {
    case Objective::entropy:
      r = a.lazy ? lazy_greedy_entropy(sigma, *a.k) : greedy_entropy(sigma, *a.k);
      break;
    case Objective::mi:
      r = greedy_mi(sigma, *a.k);
      for (std::size_t t = 0; t < r.gains.size(); ++t) {
        if (std::abs(r.gains[t]) <= 1e-10) {
          r.warnings.push_back("zero mutual-information gain at step " + std::to_string(t + 1) +
                               " (selected benchmark is uncorrelated with the rest)");
        }
      }
      break;
    case Objective::budgeted_entropy:
      costs = load_costs(a.costs, f.benchmarks);
      r = budgeted_entropy(sigma, CostModel{costs, *a.budget, a.shift_c});
      break;
    case Objective::random: {
      if (*a.k < 1 || *a.k > n) throw UsageError("--k must lie in [1, " + std::to_string(n) + "]");
      r = random_select(n, *a.k, a.seed);
      annotate_entropy_path(sigma, r);
      break;
    }
  }
  if (r.residual_trace.size() != r.order.size() + 1) {
    SelectionResult path = r;
    annotate_entropy_path(sigma, path);
    r.residual_trace = path.residual_trace;
  }
  man.warnings.insert(man.warnings.end(), r.warnings.begin(), r.warnings.end());

  const fs::path dir = prepare_out(a.out);
  {
    auto csv = open_out(dir, "selection.csv", man);
    csv << "rank,benchmark,index,gain,residual_trace";
    if (!costs.empty()) csv << ",cost";
    csv << '\n';
    for (std::size_t t = 0; t < r.order.size(); ++t) {
      const int idx = r.order[t];
      csv << t + 1 << ',' << f.benchmarks[static_cast<std::size_t>(idx)] << ',' << idx << ','
          << (t < r.gains.size() ? num(r.gains[t]) : std::string()) << ',' << num(r.residual_trace[t + 1]);
      if (!costs.empty()) csv << ',' << format_double(costs[static_cast<std::size_t>(idx)]);
      csv << '\n';
    }
  }
  json j = man.to_json();
  j["selection"] = selection_to_json(r, f.benchmarks);
  j["total_variance"] = sigma.trace();
  write_json(dir, "selection.json", j);

  out << "rank  benchmark  gain  residual_trace\n";
  out << "0  -  -  " << format_double(r.residual_trace.front()) << '\n';
  for (std::size_t t = 0; t < r.order.size(); ++t) {
    out << t + 1 << "  " << f.benchmarks[static_cast<std::size_t>(r.order[t])] << "  "
        << (t < r.gains.size() ? num(r.gains[t]) : std::string("-")) << "  " << num(r.residual_trace[t + 1]) << '\n';
  }
  emit_warnings(err, man.warnings);
  return kExitOk;
}

// ------------------------------------------------------------------ impute

struct ImputeArgs {
  std::string input;
  std::string model;
  std::string train;
  std::string selected;
  double ridge = kDefaultRidge;
  bool logit = false;
  std::string estimator = "auto";
  std::string out = ".";
};

std::vector<std::string> parse_selected(const std::string& spec) {
  std::string text = spec;
  if (!spec.empty() && spec.front() == '@') {
    std::ifstream in(spec.substr(1), std::ios::binary);
    if (!in) throw DataError("cannot open '" + spec.substr(1) + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  std::vector<std::string> names;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r");
    const auto e = cur.find_last_not_of(" \t\r");
    if (b != std::string::npos) names.push_back(cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (char c : text) {
    if (c == ',' || c == '\n') {
      flush();
    } else {
      cur += c;
    }
  }
  flush();
  return names;
}

int cmd_impute(const ImputeArgs& a, std::ostream& out, std::ostream& err) {
  if (a.model.empty() == a.train.empty()) throw UsageError("exactly one of --model or --train is required");
  if (!a.model.empty() && a.logit) throw UsageError("--logit is taken from the model file; do not pass it with --model");
  if (!(a.ridge >= 0.0)) throw UsageError("--ridge must be >= 0");
  const auto policy = estimator_policy_from_string(a.estimator);

  Manifest man;
  man.command = "impute";
  man.config = {{"ridge", a.ridge}, {"logit", a.logit}, {"estimator", a.estimator}};
  man.input_digest = file_digest(a.input);

  Fit f;
  if (!a.model.empty()) {
    man.extra_digests["model"] = file_digest(a.model);
    std::ifstream in(a.model, std::ios::binary);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError(std::string("model file: ") + e.what());
    }
    f = fit_from_json(j.contains("fit") ? j.at("fit") : j);
  } else {
    man.extra_digests["train"] = file_digest(a.train);
    f = fit_pipeline(load_csv_file(a.train), policy, a.logit, 1e-3);
  }
  man.warnings = f.warnings;

  const auto names = parse_selected(a.selected);
  if (names.empty()) throw UsageError("--selected names no benchmarks");
  std::vector<int> selected;
  for (const auto& nme : names) {
    const auto it = std::find(f.benchmarks.begin(), f.benchmarks.end(), nme);
    if (it == f.benchmarks.end()) throw DataError("selected benchmark '" + nme + "' is not in the model");
    selected.push_back(static_cast<int>(it - f.benchmarks.begin()));
  }
  man.config["selected"] = names;

  const ScoreTable table = load_table_file(a.input);
  // Map model columns onto input columns by name.
  const auto n = f.benchmarks.size();
  std::vector<std::optional<std::size_t>> src(n);
  for (std::size_t c = 0; c < n; ++c) {
    const auto it = std::find(table.benchmarks.begin(), table.benchmarks.end(), f.benchmarks[c]);
    if (it != table.benchmarks.end()) src[c] = static_cast<std::size_t>(it - table.benchmarks.begin());
  }
  for (int s : selected) {
    if (!src[static_cast<std::size_t>(s)]) {
      throw DataError("selected benchmark '" + f.benchmarks[static_cast<std::size_t>(s)] + "' is not in the input header");
    }
  }
  for (const auto& b : table.benchmarks) {
    if (std::find(f.benchmarks.begin(), f.benchmarks.end(), b) == f.benchmarks.end()) {
      man.warnings.push_back("input benchmark '" + b + "' is unknown to the model and passed through unchanged");
    }
  }

  auto to_z = [&](std::size_t c, double s) {
    double t = s;
    if (f.logit) t = logit_score(s, f.logit->col_max(static_cast<Eigen::Index>(c)), f.logit->epsilon);
    return (t - f.stats.means(static_cast<Eigen::Index>(c))) / f.stats.stds(static_cast<Eigen::Index>(c));
  };

  const fs::path dir = prepare_out(a.out);
  auto est = open_out(dir, "imputed.csv", man);
  auto sd = open_out(dir, "impute_sd.csv", man);
  for (auto* o : {&est, &sd}) {
    *o << table.row_label;
    for (const auto& b : f.benchmarks) *o << ',' << b;
    *o << '\n';
  }
  long imputed = 0;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    PartialRow z(n);
    PartialRow raw(n);
    std::vector<int> targets;
    for (std::size_t c = 0; c < n; ++c) {
      if (src[c]) raw[c] = table.rows[i][*src[c]];
      if (raw[c]) {
        z[c] = to_z(c, *raw[c]);
      } else {
        targets.push_back(static_cast<int>(c));
      }
    }
    const auto imp = impute_row(z, selected, targets, f.model, a.ridge);
    if (imp.used_condition.empty() && !targets.empty()) {
      man.warnings.push_back("row '" + table.models[i] + "' has no observed selected benchmark; imputed marginal means");
    }
    std::vector<double> value(n), sdev(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      if (raw[c]) value[c] = *raw[c];
    }
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto c = static_cast<Eigen::Index>(targets[t]);
      const double mu = f.stats.means(c);
      const double sc = f.stats.stds(c);
      const double zsd = std::sqrt(std::max(0.0, imp.cond_var[t]));
      const double fval = mu + sc * imp.predicted[t];
      if (f.logit) {
        const double cmax = f.logit->col_max(c);
        const double s = inverse_logit_score(fval, cmax);
        value[static_cast<std::size_t>(c)] = s;
        // Delta method through the scaled sigmoid.
        const double p = s / cmax;
        sdev[static_cast<std::size_t>(c)] = cmax * p * (1.0 - p) * sc * zsd;
      } else {
        value[static_cast<std::size_t>(c)] = fval;
        sdev[static_cast<std::size_t>(c)] = sc * zsd;
      }
      ++imputed;
    }
    est << table.models[i];
    sd << table.models[i];
    for (std::size_t c = 0; c < n; ++c) {
      est << ',' << format_double(value[c]);
      sd << ',' << format_double(sdev[c]);
    }
    est << '\n';
    sd << '\n';
  }
  est.close();
  sd.close();
  json j = man.to_json();
  j["imputed_cells"] = imputed;
  write_json(dir, "impute.json", j);
  out << "imputed " << imputed << " cells in " << table.rows.size() << " rows\n";
  emit_warnings(err, man.warnings);
  return kExitOk;
}

// --------------------------------------------------------------------- fit

struct FitArgs {
  std::string input;
  std::string estimator = "auto";
  bool logit = false;
  bool no_standardize = false;
  std::string out = ".";
};

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  const auto policy = estimator_policy_from_string(a.estimator);
  Manifest man;
  man.command = "fit";
  man.config = {{"estimator", a.estimator}, {"logit", a.logit}, {"standardize", !a.no_standardize}};
  man.input_digest = file_digest(a.input);
  const Fit f = fit_pipeline(load_csv_file(a.input), policy, a.logit, 1e-3, !a.no_standardize);
  man.warnings = f.warnings;
  const fs::path dir = prepare_out(a.out);
  {
    auto csv = open_out(dir, "fit_stats.csv", man);
    csv << "benchmark,mean,std,col_max\n";
    for (std::size_t c = 0; c < f.benchmarks.size(); ++c) {
      const auto e = static_cast<Eigen::Index>(c);
      csv << f.benchmarks[c] << ',' << format_double(f.stats.means(e)) << ',' << format_double(f.stats.stds(e)) << ','
          << (f.logit ? format_double(f.logit->col_max(e)) : std::string()) << '\n';
    }
  }
  json j = man.to_json();
  j["fit"] = fit_to_json(f);
  write_json(dir, "model.json", j);
  out << "fitted " << to_string(f.model.estimator) << " model over " << f.benchmarks.size() << " benchmarks\n";
  emit_warnings(err, man.warnings);
  return kExitOk;
}

// ---------------------------------------------------------------------- cv

struct CvArgs {
  std::string input;
  int folds = 10;
  std::vector<double> holdouts;
  int kmax = 15;
  std::string methods = "entropy,mi,random";
  std::uint64_t seed = 0;
  std::string estimator = "auto";
  double ridge = kDefaultRidge;
  bool logit = false;
  int threads = 1;
  bool verbose = false;
  std::string out = ".";
};

int cmd_cv(const CvArgs& a, std::ostream& out, std::ostream& err) {
  CvConfig cfg;
  cfg.folds = a.folds;
  if (!a.holdouts.empty()) cfg.holdout_fractions = a.holdouts;
  cfg.k_max = a.kmax;
  cfg.methods.clear();
  for (const auto& name : parse_selected(a.methods)) cfg.methods.push_back(method_from_string(name));
  cfg.seed = a.seed;
  cfg.estimator_policy = estimator_policy_from_string(a.estimator);
  cfg.ridge = a.ridge;
  cfg.logit_mode = a.logit;
  cfg.validate();
  if (a.threads < 1) throw UsageError("--threads must be >= 1");

  Manifest man;
  man.command = "cv";
  man.config = cfg.to_json();
  man.seed = a.seed;
  man.input_digest = file_digest(a.input);
  const ScoreMatrix m = load_csv_file(a.input);

  CvOptions opts;
  opts.threads = a.threads;
  if (a.verbose) opts.progress = [&err](const std::string& s) { err << s << '\n'; };
  const CvReport report = run_cv(m, cfg, opts);
  man.warnings = report.warnings;

  const fs::path dir = prepare_out(a.out);
  {
    auto f = open_out(dir, "cv_cells.csv", man);
    write_cells_csv(f, report);
  }
  {
    auto f = open_out(dir, "cv_orders.csv", man);
    write_orders_csv(f, report);
  }
  if (cfg.methods.size() >= 2) {
    auto f = open_out(dir, "cv_compare.csv", man);
    write_comparison_csv(f, compare_methods(report));
  }
  json j = man.to_json();
  const json s = summary_to_json(report);
  j["summary"] = s.at("summary");
  j["selection_orders"] = s.at("selection_orders");
  write_json(dir, "cv_summary.json", j);

  for (const auto& row : report.summary) {
    if (row.k != 1 && row.k != cfg.k_max) continue;
    out << to_string(row.method) << " holdout=" << format_double(row.holdout) << " k=" << row.k
        << " r2=" << num(row.r2_mean) << " (sd " << num(row.r2_std) << ")\n";
  }
  if (!man.warnings.empty()) err << man.warnings.size() << " warning(s); see cv_summary.json\n";
  return kExitOk;
}

// --------------------------------------------------------------- normality

struct NormalityArgs {
  std::string input;
  double alpha = 0.05;
  std::string correction = "bh";
  std::uint64_t seed = 0;
  std::string out = ".";
};

int cmd_normality(const NormalityArgs& a, std::ostream& out, std::ostream& err) {
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
  const Correction corr = correction_from_string(a.correction);
  Manifest man;
  man.command = "normality";
  man.config = {{"alpha", a.alpha}, {"correction", to_string(corr)}};
  man.seed = a.seed;
  man.input_digest = file_digest(a.input);
  const ScoreMatrix m = load_csv_file(a.input);
  const NormalityReport r = normality_report(m, a.alpha, corr, a.seed);
  for (const auto& s : r.skipped) man.warnings.push_back("skipped " + s);
  if (!r.mardia_note.empty()) man.warnings.push_back(r.mardia_note);

  const fs::path dir = prepare_out(a.out);
  int rejected = 0;
  {
    auto csv = open_out(dir, "normality.csv", man);
    csv << "benchmark,n,w,p,rejected,subsampled\n";
    for (const auto& e : r.shapiro) {
      csv << e.benchmark << ',' << e.n << ',' << format_double(e.w) << ',' << format_double(e.p) << ','
          << (e.rejected ? 1 : 0) << ',' << (e.subsampled ? 1 : 0) << '\n';
      rejected += e.rejected ? 1 : 0;
    }
  }
  json j = man.to_json();
  j["skipped"] = r.skipped;
  j["rejected"] = rejected;
  j["tested"] = r.shapiro.size();
  j["mardia"] = mardia_to_json(r);
  write_json(dir, "normality.json", j);
  out << rejected << " of " << r.shapiro.size() << " benchmarks reject normality at alpha=" << format_double(a.alpha)
      << " (" << to_string(corr) << ")\n";
  emit_warnings(err, man.warnings);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Benchmark subset selection and score imputation under a Gaussian model", "benchsel"};
  app.set_version_flag("--version", BENCHSEL_VERSION);
  app.require_subcommand(1);

  SpectrumArgs sp;
  auto* c_sp = app.add_subcommand("spectrum", "Eigen-spectrum of the benchmark correlation matrix");
  c_sp->add_option("input", sp.input, "Score matrix CSV")->required();
  c_sp->add_option("--estimator", sp.estimator, "auto|full|em")->check(CLI::IsMember({"auto", "full", "em"}));
  c_sp->add_option("--out", sp.out, "Output directory");

  SelectArgs se;
  auto* c_se = app.add_subcommand("select", "Greedy benchmark selection");
  c_se->add_option("input", se.input, "Score matrix CSV")->required();
  c_se->add_option("--objective", se.objective, "entropy|mi|budgeted|random")
      ->check(CLI::IsMember({"entropy", "mi", "budgeted", "random"}));
  c_se->add_option("--k", se.k, "Number of benchmarks");
  c_se->add_option("--costs", se.costs, "CSV with columns benchmark,cost");
  c_se->add_option("--budget", se.budget, "Total cost budget");
  c_se->add_option("--shift-c", se.shift_c, "Modular shift added to entropy marginals");
  c_se->add_option("--seed", se.seed, "Seed for --objective random");
  c_se->add_flag("--lazy", se.lazy, "Lazy greedy evaluation");
  c_se->add_flag("--logit", se.logit, "Fit in logit space");
  c_se->add_flag("--no-standardize", se.no_standardize, "Select on the centered covariance instead of correlations");
  c_se->add_option("--estimator", se.estimator, "auto|full|em")->check(CLI::IsMember({"auto", "full", "em"}));
  c_se->add_option("--out", se.out, "Output directory");

  ImputeArgs im;
  auto* c_im = app.add_subcommand("impute", "Conditional-mean completion of missing scores");
  c_im->add_option("input", im.input, "CSV of models to complete")->required();
  c_im->add_option("--model", im.model, "model.json written by 'fit'");
  c_im->add_option("--train", im.train, "Training score matrix CSV");
  c_im->add_option("--selected", im.selected, "Comma-separated benchmark names or @file")->required();
  c_im->add_option("--ridge", im.ridge, "Ridge added to the conditioning block");
  c_im->add_flag("--logit", im.logit, "Fit in logit space (with --train)");
  c_im->add_option("--estimator", im.estimator, "auto|full|em (with --train)")
      ->check(CLI::IsMember({"auto", "full", "em"}));
  c_im->add_option("--out", im.out, "Output directory");

  FitArgs fi;
  auto* c_fi = app.add_subcommand("fit", "Fit and save the Gaussian model");
  c_fi->add_option("input", fi.input, "Score matrix CSV")->required();
  c_fi->add_option("--estimator", fi.estimator, "auto|full|em")->check(CLI::IsMember({"auto", "full", "em"}));
  c_fi->add_flag("--logit", fi.logit, "Fit in logit space");
  c_fi->add_flag("--no-standardize", fi.no_standardize, "Model the centered scores without rescaling");
  c_fi->add_option("--out", fi.out, "Output directory");

  CvArgs cv;
  auto* c_cv = app.add_subcommand("cv", "Cross-validated comparison of selection methods");
  c_cv->add_option("input", cv.input, "Score matrix CSV")->required();
  c_cv->add_option("--folds", cv.folds, "Number of folds");
  c_cv->add_option("--holdout", cv.holdouts, "Holdout fraction (repeatable)")->allow_extra_args(false);
  c_cv->add_option("--kmax", cv.kmax, "Largest subset size");
  c_cv->add_option("--methods", cv.methods, "Comma-separated: entropy,mi,random");
  c_cv->add_option("--seed", cv.seed, "Root seed");
  c_cv->add_option("--estimator", cv.estimator, "auto|full|em")->check(CLI::IsMember({"auto", "full", "em"}));
  c_cv->add_option("--ridge", cv.ridge, "Imputation ridge");
  c_cv->add_flag("--logit", cv.logit, "Fit and predict in logit space");
  c_cv->add_option("--threads", cv.threads, "Worker threads");
  c_cv->add_flag("--verbose", cv.verbose, "Per-fold progress on stderr");
  c_cv->add_option("--out", cv.out, "Output directory");

  NormalityArgs no;
  auto* c_no = app.add_subcommand("normality", "Shapiro-Wilk and Mardia normality diagnostics");
  c_no->add_option("input", no.input, "Score matrix CSV")->required();
  c_no->add_option("--alpha", no.alpha, "Significance level");
  c_no->add_option("--correction", no.correction, "bh|bonferroni|none")
      ->check(CLI::IsMember({"bh", "bonferroni", "none"}));
  c_no->add_option("--seed", no.seed, "Seed for subsampling long columns");
  c_no->add_option("--out", no.out, "Output directory");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_sp->parsed()) return cmd_spectrum(sp, out, err);
    if (c_se->parsed()) return cmd_select(se, out, err);
    if (c_im->parsed()) return cmd_impute(im, out, err);
    if (c_fi->parsed()) return cmd_fit(fi, out, err);
    if (c_cv->parsed()) return cmd_cv(cv, out, err);
    if (c_no->parsed()) return cmd_normality(no, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace benchsel
