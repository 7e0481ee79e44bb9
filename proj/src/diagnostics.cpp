#include "benchsel/diagnostics.hpp"

#include "benchsel/covariance.hpp"
#include "benchsel/error.hpp"
#include "benchsel/rng.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace benchsel {

namespace {

double poly(const double* c, int nord, double x) {
  double r = c[nord - 1];
  for (int i = nord - 2; i >= 0; --i) r = r * x + c[i];
  return r;
}

double normal_upper(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

}  // namespace

ShapiroWilkResult shapiro_wilk(std::vector<double> x) {
  const int n = static_cast<int>(x.size());
  if (n < 3 || n > kShapiroMaxN) {
    throw DataError("shapiro_wilk: sample size " + std::to_string(n) + " outside [3, 5000]");
  }
  std::sort(x.begin(), x.end());
  const double range = x.back() - x.front();
  if (!(range > 1e-19 * std::max(1.0, std::abs(x.back())))) {
    throw DataError("shapiro_wilk: all values are equal");
  }

  // Coefficients for the lower half; the upper half mirrors them with a
  // sign flip.
  const int half = n / 2;
  std::vector<double> a(static_cast<std::size_t>(half));
  if (n == 3) {
    a[0] = std::numbers::sqrt2 / 2.0;
  } else {
    static constexpr double c1[6] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
    static constexpr double c2[6] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
    const boost::math::normal std_normal;
    std::vector<double> m(static_cast<std::size_t>(half));
    double summ2 = 0.0;
    for (int i = 0; i < half; ++i) {
      m[i] = boost::math::quantile(std_normal, (i + 1 - 0.375) / (n + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(static_cast<double>(n));
    const double a1 = poly(c1, 6, rsn) - m[0] / ssumm2;
    int first = 1;
    double fac;
    if (n > 5) {
      first = 2;
      const double a2 = -m[1] / ssumm2 + poly(c2, 6, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) /
                      (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[1] = a2;
    } else {
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
    }
    a[0] = a1;
    for (int i = first; i < half; ++i) a[i] = -m[i] / fac;
  }

  // W as the squared correlation between ordered data and coefficients;
  // 1 - W is formed directly to keep precision when W is near 1.
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double ssa = 0.0, ssx = 0.0, sax = 0.0;
  for (int i = 0; i < n; ++i) {
    const int j = n - 1 - i;
    double ai = 0.0;
    if (i < half) {
      ai = -a[i];
    } else if (j < half) {
      ai = a[j];
    }
    const double xi = (x[i] - mean) / range;
    ssa += ai * ai;
    ssx += xi * xi;
    sax += ai * xi;
  }
  const double ssassx = std::sqrt(ssa * ssx);
  const double w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
  ShapiroWilkResult res;
  res.w = std::clamp(1.0 - w1, 0.0, 1.0);

  if (n == 3) {
    const double pi6 = 6.0 / std::numbers::pi;
    const double stqr = std::numbers::pi / 3.0;
    res.p = std::clamp(pi6 * (std::asin(std::sqrt(res.w)) - stqr), 0.0, 1.0);
    return res;
  }
  static constexpr double g[2] = {-2.273, 0.459};
  static constexpr double c3[4] = {0.5440, -0.39978, 0.025054, -6.714e-4};
  static constexpr double c4[4] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double c5[4] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double c6[3] = {-0.4803, -0.082676, 0.0030302};
  double y = std::log(w1);
  const double an = n;
  double mu, sigma;
  if (n <= 11) {
    const double gamma = poly(g, 2, an);
    if (y >= gamma) {
      res.p = 1e-99;
      return res;
    }
    y = -std::log(gamma - y);
    mu = poly(c3, 4, an);
    sigma = std::exp(poly(c4, 4, an));
  } else {
    const double xx = std::log(an);
    mu = poly(c5, 4, xx);
    sigma = std::exp(poly(c6, 3, xx));
  }
  res.p = std::clamp(normal_upper((y - mu) / sigma), 0.0, 1.0);
  return res;
}

MardiaResult mardia(const Eigen::MatrixXd& x) {
  const auto m = x.rows();
  const auto n = x.cols();
  if (n < 1 || m <= n) throw DataError("mardia: needs more observations than variables");
  if (!x.allFinite()) throw DataError("mardia: input has missing or non-finite entries");

  const Eigen::MatrixXd y = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd s = y.transpose() * y / static_cast<double>(m);

  // Whitened rows z_i with z_i . z_j = d_ij.
  MardiaResult r;
  Eigen::MatrixXd z;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) {
    z = llt.matrixL().solve(y.transpose()).transpose();
  } else {
    r.pseudo_inverse = true;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    const double tol = 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
    Eigen::VectorXd scale = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (es.eigenvalues()(i) > tol) scale(i) = 1.0 / std::sqrt(es.eigenvalues()(i));
    }
    z = y * es.eigenvectors() * scale.asDiagonal();
  }

  const Eigen::Index block = 256;
  double sum_cubes = 0.0;
  for (Eigen::Index start = 0; start < m; start += block) {
    const Eigen::Index len = std::min(block, m - start);
    const Eigen::MatrixXd g = z.middleRows(start, len) * z.transpose();
    sum_cubes += g.array().cube().sum();
  }
  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  r.beta1 = sum_cubes / (md * md);
  r.beta2 = z.rowwise().squaredNorm().array().square().sum() / md;

  r.skew_df = nd * (nd + 1.0) * (nd + 2.0) / 6.0;
  r.skew_stat = md * r.beta1 / 6.0;
  r.p_skew = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.skew_df),
                                                      std::max(r.skew_stat, 0.0)));
  const double null_mean = nd * (nd + 2.0);
  r.kurt_stat = (r.beta2 - null_mean) / std::sqrt(8.0 * null_mean / md);
  r.p_kurt = std::min(1.0, 2.0 * normal_upper(std::abs(r.kurt_stat)));
  return r;
}

std::string to_string(Correction c) {
  switch (c) {
    case Correction::bh: return "bh";
    case Correction::bonferroni: return "bonferroni";
    case Correction::none: return "none";
  }
  return "unknown";
}

Correction correction_from_string(const std::string& s) {
  if (s == "bh") return Correction::bh;
  if (s == "bonferroni") return Correction::bonferroni;
  if (s == "none") return Correction::none;
  throw UsageError("unknown correction '" + s + "'");
}

std::vector<bool> benjamini_hochberg(const std::vector<double>& pvals, double alpha) {
  const std::size_t m = pvals.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
  std::size_t last = 0;  // number of rejections
  for (std::size_t r = 0; r < m; ++r) {
    if (pvals[idx[r]] <= static_cast<double>(r + 1) / static_cast<double>(m) * alpha) last = r + 1;
  }
  std::vector<bool> out(m, false);
  for (std::size_t r = 0; r < last; ++r) out[idx[r]] = true;
  return out;
}

std::vector<bool> bonferroni(const std::vector<double>& pvals, double alpha) {
  std::vector<bool> out(pvals.size());
  for (std::size_t i = 0; i < pvals.size(); ++i) {
    out[i] = pvals[i] <= alpha / static_cast<double>(pvals.size());
  }
  return out;
}

std::vector<bool> apply_correction(const std::vector<double>& pvals, double alpha, Correction c) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
  switch (c) {
    case Correction::bh: return benjamini_hochberg(pvals, alpha);
    case Correction::bonferroni: return bonferroni(pvals, alpha);
    case Correction::none: break;
  }
  std::vector<bool> out(pvals.size());
  for (std::size_t i = 0; i < pvals.size(); ++i) out[i] = pvals[i] <= alpha;
  return out;
}

NormalityReport normality_report(const ScoreMatrix& m, double alpha, Correction correction,
                                 std::uint64_t seed) {
  NormalityReport rep;
  rep.alpha = alpha;
  rep.correction = correction;
  std::vector<double> pvals;
  for (int j = 0; j < m.cols(); ++j) {
    const auto& name = m.benchmark_names()[static_cast<std::size_t>(j)];
    auto v = m.column_values(j);
    ShapiroEntry e;
    e.benchmark = name;
    if (v.size() < 3) {
      rep.skipped.push_back(name + ": fewer than 3 observations");
      continue;
    }
    if (std::all_of(v.begin(), v.end(), [&](double t) { return t == v.front(); })) {
      rep.skipped.push_back(name + ": constant column");
      continue;
    }
    if (static_cast<int>(v.size()) > kShapiroMaxN) {
      Rng rng(derive_seed(seed, "shapiro-subsample", static_cast<std::uint64_t>(j)));
      for (int i = 0; i < kShapiroMaxN; ++i) {
        const auto pick = i + static_cast<int>(uniform_below(rng, v.size() - static_cast<std::size_t>(i)));
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(pick)]);
      }
      v.resize(kShapiroMaxN);
      e.subsampled = true;
    }
    try {
      const auto sw = shapiro_wilk(v);
      e.n = static_cast<int>(v.size());
      e.w = sw.w;
      e.p = sw.p;
    } catch (const DataError& err) {
      rep.skipped.push_back(name + ": " + err.what());
      continue;
    }
    pvals.push_back(e.p);
    rep.shapiro.push_back(e);
  }
  const auto rejected = apply_correction(pvals, alpha, correction);
  for (std::size_t i = 0; i < rep.shapiro.size(); ++i) rep.shapiro[i].rejected = rejected[i];

  if (m.rows() <= m.cols()) {
    rep.mardia_note = "skipped: needs more models than benchmarks";
    return rep;
  }
  try {
    Eigen::MatrixXd data;
    if (m.fully_observed()) {
      data = m.dense();
      rep.mardia_input = "raw";
    } else {
      const auto stats = column_stats(m);
      const auto z = standardize(m, stats);
      const auto model = em_fit(z, EmConfig::defaults_for(z));
      data = complete_matrix(z, model);
      rep.mardia_input = "completed-data";
    }
    rep.mardia = mardia(data);
    rep.mardia_available = true;
    if (rep.mardia.pseudo_inverse) rep.mardia_note = "singular covariance; pseudo-inverse used";
  } catch (const std::exception& err) {
    rep.mardia_note = std::string("skipped: ") + err.what();
  }
  return rep;
}

nlohmann::json mardia_to_json(const NormalityReport& r) {
  nlohmann::json j;
  j["available"] = r.mardia_available;
  j["input"] = r.mardia_input;
  j["note"] = r.mardia_note;
  if (r.mardia_available) {
    j["beta1"] = r.mardia.beta1;
    j["beta2"] = r.mardia.beta2;
    j["skew_stat"] = r.mardia.skew_stat;
    j["skew_df"] = r.mardia.skew_df;
    j["p_skew"] = r.mardia.p_skew;
    j["kurt_stat"] = r.mardia.kurt_stat;
    j["p_kurt"] = r.mardia.p_kurt;
    j["pseudo_inverse"] = r.mardia.pseudo_inverse;
  }
  return j;
}

}  // namespace benchsel
