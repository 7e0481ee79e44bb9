#include "benchsel/error.hpp"
#include "benchsel/selection.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace benchsel;

namespace {

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

TEST(GreedyEntropy, DiagonalAndTies) {
  Eigen::MatrixXd d = Eigen::Vector3d(3, 2, 1).asDiagonal();
  EXPECT_EQ(greedy_entropy(d, 2).order, (std::vector<int>{0, 1}));
  EXPECT_EQ(greedy_entropy(Eigen::MatrixXd::Identity(3, 3), 2).order, (std::vector<int>{0, 1}));
  Eigen::MatrixXd rev = Eigen::Vector4d(1, 2, 3, 4).asDiagonal();
  EXPECT_EQ(greedy_entropy(rev, 4).order, (std::vector<int>{3, 2, 1, 0}));
}

TEST(GreedyEntropy, MatchesPivotedCholeskyOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = oracle::random_spd(8, 100 + seed);
    const int k = 5;
    const auto r = greedy_entropy(s, k);
    const auto o = oracle::pivoted_cholesky(s, k);
    ASSERT_EQ(r.order, o.order);
    ASSERT_EQ(r.residual_trace.size(), static_cast<std::size_t>(k + 1));
    EXPECT_NEAR(r.residual_trace[k], (s - o.l * o.l.transpose()).trace(), 1e-8);
    EXPECT_NEAR(r.residual_trace[0], s.trace(), 1e-12);
    EXPECT_NEAR(sum(r.gains), oracle::entropy(s, r.order), 1e-8);
    EXPECT_NEAR(sum(r.gains), entropy_value(s, r.order), 1e-8);
    EXPECT_NEAR(residual_trace(s, r.order), r.residual_trace[k], 1e-8);
  }
}

TEST(GreedyEntropy, TruncatesOnRankDeficientInput) {
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(5, 1.0, 2.0);
  const Eigen::MatrixXd s = v * v.transpose();  // rank 1
  const auto r = greedy_entropy(s, 3);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.order.size(), 1u);
  EXPECT_EQ(r.order[0], 4);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(GreedyEntropy, RejectsBadInput) {
  EXPECT_THROW(greedy_entropy(Eigen::MatrixXd::Identity(3, 3), 0), UsageError);
  EXPECT_THROW(greedy_entropy(Eigen::MatrixXd::Identity(3, 3), 4), UsageError);
  EXPECT_THROW(greedy_entropy(Eigen::MatrixXd::Identity(3, 2), 1), UsageError);
  Eigen::Matrix2d a;
  a << 1, 0.3, 0.1, 1;
  EXPECT_THROW(greedy_entropy(a, 1), UsageError);
}

TEST(GreedyMi, IdentityGivesZeroGainsInIndexOrder) {
  const auto r = greedy_mi(Eigen::MatrixXd::Identity(5, 5), 3);
  EXPECT_EQ(r.order, (std::vector<int>{0, 1, 2}));
  for (double g : r.gains) EXPECT_EQ(g, 0.0);
}

TEST(GreedyMi, TwoByTwoClosedForm) {
  Eigen::Matrix2d s;
  s << 1, 0.8, 0.8, 1;
  const auto r = greedy_mi(s, 1);
  EXPECT_EQ(r.order, (std::vector<int>{0}));
  EXPECT_NEAR(r.gains[0], -0.5 * std::log(1 - 0.64), 1e-12);
  EXPECT_NEAR(r.gains[0], 0.5108, 1e-4);
  EXPECT_THROW(greedy_mi(s, 2), UsageError);
}

TEST(GreedyMi, AccumulatedGainsMatchLogDet) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = oracle::random_spd(7, 200 + seed);
    const auto r = greedy_mi(s, 6);
    double acc = 0.0;
    for (std::size_t t = 0; t < r.order.size(); ++t) {
      acc += r.gains[t];
      const std::vector<int> prefix(r.order.begin(), r.order.begin() + t + 1);
      EXPECT_NEAR(acc, oracle::mutual_information(s, prefix), 1e-8);
      EXPECT_NEAR(mi_value(s, prefix), oracle::mutual_information(s, prefix), 1e-9);
    }
  }
}

TEST(GreedyMi, PicksMaximalGainEachStep) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = oracle::random_spd(6, 300 + seed);
    const auto r = greedy_mi(s, 4);
    std::vector<int> a;
    for (int t = 0; t < 4; ++t) {
      const double base = oracle::mutual_information(s, a);
      double best = -1e300;
      for (int j : oracle::complement(6, a)) {
        auto b = a;
        b.push_back(j);
        best = std::max(best, oracle::mutual_information(s, b) - base);
      }
      EXPECT_NEAR(r.gains[t], best, 1e-9);
      a.push_back(r.order[t]);
    }
  }
}

TEST(LazyGreedy, IdenticalToEager) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = oracle::random_spd(15, 400 + seed);
    const auto eager = greedy_entropy(s, 8);
    const auto lazy = lazy_greedy_entropy(s, 8);
    EXPECT_EQ(lazy.order, eager.order);
    EXPECT_EQ(lazy.gains, eager.gains);
    ASSERT_EQ(lazy.residual_trace.size(), eager.residual_trace.size());
    for (std::size_t t = 0; t < eager.residual_trace.size(); ++t) {
      EXPECT_NEAR(lazy.residual_trace[t], eager.residual_trace[t], 1e-10);
    }
  }
}

TEST(LazyGreedy, EvaluationCounts) {
  Eigen::MatrixXd d = (Eigen::VectorXd(5) << 5, 4, 3, 2, 1).finished().asDiagonal();
  const auto r = lazy_greedy_entropy(d, 3);
  EXPECT_EQ(r.order, (std::vector<int>{0, 1, 2}));
  EXPECT_LE(r.evaluations, 5L * 3L);
  EXPECT_GE(r.evaluations, 5L);

  // Fixed-seed regression value: naive greedy needs N + (N-1) + ... evaluations.
  const auto s = oracle::random_spd(50, 777);
  const auto lazy = lazy_greedy_entropy(s, 10);
  const auto eager = greedy_entropy(s, 10);
  EXPECT_EQ(lazy.order, eager.order);
  EXPECT_LT(static_cast<double>(lazy.evaluations), 0.5 * static_cast<double>(eager.evaluations));
}

TEST(Budgeted, UnitCostsReduceToGreedy) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = oracle::random_spd(9, 500 + seed);
    const auto r = budgeted_entropy(s, CostModel{std::vector<double>(9, 1.0), 4.0, std::nullopt});
    const auto g = greedy_entropy(s, 4);
    EXPECT_EQ(std::set<int>(r.order.begin(), r.order.end()), std::set<int>(g.order.begin(), g.order.end()));
    EXPECT_LE(r.total_cost, 4.0);
  }
}

TEST(Budgeted, SingletonBranchMatchesEnumeration) {
  // Element 0: cheap, low variance. Element 1: expensive, high variance,
  // exactly at budget. Element 2: filler that does not fit next to 1.
  Eigen::MatrixXd d = Eigen::Vector3d(1.0, 1e4, 1.0).asDiagonal();
  const std::vector<double> costs{0.1, 2.0, 1.95};
  const CostModel cm{costs, 2.0, 0.0};
  const auto r = budgeted_entropy(d, cm);
  double best = -1e300;
  std::vector<int> best_set;
  for (int mask = 1; mask < 8; ++mask) {
    std::vector<int> a;
    double c = 0.0;
    for (int j = 0; j < 3; ++j)
      if (mask & (1 << j)) {
        a.push_back(j);
        c += costs[j];
      }
    if (c > 2.0) continue;
    const double v = oracle::entropy(d, a);
    if (v > best) {
      best = v;
      best_set = a;
    }
  }
  EXPECT_EQ(std::set<int>(r.order.begin(), r.order.end()), std::set<int>(best_set.begin(), best_set.end()));
  EXPECT_EQ(r.order, (std::vector<int>{1}));
  EXPECT_NEAR(sum(r.gains), best, 1e-9);
}

TEST(Budgeted, LargeBudgetTakesEverything) {
  const auto s = oracle::random_spd(6, 600);
  const std::vector<double> costs{1, 2, 3, 4, 5, 6};
  const auto r = budgeted_entropy(s, CostModel{costs, 100.0, 0.5});
  EXPECT_EQ(r.order.size(), 6u);
  std::vector<int> all{0, 1, 2, 3, 4, 5};
  EXPECT_NEAR(sum(r.gains), oracle::entropy(s, all) + 6 * 0.5, 1e-9);
  EXPECT_DOUBLE_EQ(r.total_cost, 21.0);
  EXPECT_DOUBLE_EQ(r.shift_c, 0.5);
}

TEST(Budgeted, RejectsBadCosts) {
  const auto s = oracle::random_spd(3, 1);
  EXPECT_THROW(budgeted_entropy(s, CostModel{{1, 1}, 1.0, std::nullopt}), UsageError);
  EXPECT_THROW(budgeted_entropy(s, CostModel{{1, 0, 1}, 1.0, std::nullopt}), UsageError);
  EXPECT_THROW(budgeted_entropy(s, CostModel{{1, 1, 1}, -1.0, std::nullopt}), UsageError);
}

TEST(RandomSelect, Properties) {
  const auto a = random_select(7, 7, 42);
  std::vector<int> sorted = a.order;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(random_select(20, 5, 9).order, random_select(20, 5, 9).order);
  EXPECT_NE(random_select(20, 5, 9).order, random_select(20, 5, 10).order);
  EXPECT_TRUE(a.gains.empty());
  ASSERT_TRUE(a.seed.has_value());
  EXPECT_EQ(*a.seed, 42u);
}

TEST(RandomSelect, UniformFirstPick) {
  std::vector<int> count(5, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) ++count[random_select(5, 1, seed).order[0]];
  const double sd = std::sqrt(10000 * 0.2 * 0.8);
  for (int c : count) EXPECT_LE(std::abs(c - 2000), 5 * sd);
}

TEST(EntropyValue, Constants) {
  EXPECT_NEAR(entropy_value(Eigen::MatrixXd::Identity(3, 3), {1}), 0.5 * std::log(2 * M_PI * M_E), 1e-15);
  EXPECT_NEAR(kHalfLog2PiE, 1.4189385332046727, 1e-16);
  EXPECT_NEAR(entropy_value(Eigen::MatrixXd::Identity(4, 4), {0, 2, 3}), 3 * kHalfLog2PiE, 1e-14);
}

TEST(MiValue, Examples) {
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(4, 4);
  block.topLeftCorner(2, 2) = oracle::random_spd(2, 1);
  block.bottomRightCorner(2, 2) = oracle::random_spd(2, 2);
  EXPECT_NEAR(mi_value(block, {0, 1}), 0.0, 1e-12);
  Eigen::Matrix2d s;
  s << 1, 0.8, 0.8, 1;
  EXPECT_NEAR(mi_value(s, {0}), -0.5 * std::log(0.36), 1e-12);
  EXPECT_EQ(mi_value(s, {}), 0.0);
  EXPECT_EQ(mi_value(s, {0, 1}), 0.0);
  const auto r = oracle::random_spd(7, 3);
  oracle::for_each_subset(7, 3, [&](const std::vector<int>& a) {
    EXPECT_NEAR(mi_value(r, a), mi_value(r, oracle::complement(7, a)), 1e-9);
  });
}

TEST(ResidualTrace, Examples) {
  const auto s = oracle::random_spd(5, 8);
  EXPECT_NEAR(residual_trace(s, {}), s.trace(), 1e-14);
  Eigen::MatrixXd d = (Eigen::VectorXd(4) << 4, 3, 2, 1).finished().asDiagonal();
  EXPECT_NEAR(residual_trace(d, {0, 2}), 4.0, 1e-14);
  // Schur complement oracle.
  const std::vector<int> a{1, 3};
  const auto c = oracle::complement(5, a);
  const Eigen::MatrixXd schur = oracle::sub(s, c, c) - oracle::sub(s, c, a) * oracle::sub(s, a, a).inverse() * oracle::sub(s, a, c);
  EXPECT_NEAR(residual_trace(s, a), schur.trace(), 1e-10);
}

TEST(Spectrum, Examples) {
  const auto id = spectrum(Eigen::MatrixXd::Identity(10, 10));
  for (int k = 1; k <= 10; ++k) EXPECT_NEAR(id.explained(k - 1), k / 10.0, 1e-12);
  EXPECT_EQ(id.components_for(0.9), 9);
  EXPECT_EQ(id.components_for(0.95), 10);
  const auto one = spectrum(Eigen::MatrixXd::Ones(6, 6));
  EXPECT_NEAR(one.explained(0), 1.0, 1e-12);
  EXPECT_EQ(one.components_for(0.99), 1);
  const auto r = spectrum(oracle::random_spd(6, 1));
  for (int k = 1; k < 6; ++k) EXPECT_GE(r.eigenvalues(k - 1), r.eigenvalues(k));
  EXPECT_NEAR(r.explained(5), 1.0, 1e-12);
  EXPECT_NEAR(r.residual_fraction(2), 1.0 - r.explained(2), 1e-15);
}

TEST(AnnotatePath, MatchesGreedyGains) {
  const auto s = oracle::random_spd(8, 5);
  const auto g = greedy_entropy(s, 5);
  SelectionResult copy;
  copy.order = g.order;
  annotate_entropy_path(s, copy);
  ASSERT_EQ(copy.gains.size(), g.gains.size());
  for (std::size_t t = 0; t < g.gains.size(); ++t) EXPECT_NEAR(copy.gains[t], g.gains[t], 1e-12);
  for (std::size_t t = 0; t < g.residual_trace.size(); ++t) EXPECT_NEAR(copy.residual_trace[t], g.residual_trace[t], 1e-10);
}

TEST(Submodularity, EntropyAndMiDiminishingReturns) {
  // For A subset of B and x outside B: f(A + x) - f(A) >= f(B + x) - f(B).
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const int n = 6;
    const auto s = oracle::random_spd(n, 900 + seed);
    for (int bmask = 0; bmask < (1 << n); ++bmask) {
      for (int amask = bmask;; amask = (amask - 1) & bmask) {
        std::vector<int> a, b;
        for (int j = 0; j < n; ++j) {
          if (amask & (1 << j)) a.push_back(j);
          if (bmask & (1 << j)) b.push_back(j);
        }
        for (int x = 0; x < n; ++x) {
          if (bmask & (1 << x)) continue;
          auto ax = a, bx = b;
          ax.push_back(x);
          bx.push_back(x);
          const double ha = entropy_value(s, ax) - (a.empty() ? 0.0 : entropy_value(s, a));
          const double hb = entropy_value(s, bx) - (b.empty() ? 0.0 : entropy_value(s, b));
          ASSERT_GE(ha, hb - 1e-9);
          const double ma = mi_value(s, ax) - mi_value(s, a);
          const double mb = mi_value(s, bx) - mi_value(s, b);
          ASSERT_GE(ma, mb - 1e-9);
        }
        if (amask == 0) break;
      }
    }
  }
}
