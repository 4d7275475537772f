#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fmbench/survival.hpp"
#include "fmbench/synthetic.hpp"
#include "oracles.hpp"

using namespace fmbench;

namespace {

// Random records; times drawn from a small grid so ties occur.
std::vector<SurvivalRecord> random_records(int n, std::uint64_t seed, int time_levels = 8, bool tie_risks = false) {
  SplitMix64 g(seed);
  std::vector<SurvivalRecord> r(n);
  for (int i = 0; i < n; ++i) {
    r[i].subject_id = "s" + std::to_string(i);
    r[i].time = 1.0 + static_cast<double>(g.below(time_levels));
    r[i].event = g.uniform() < 0.7;
    r[i].risk = tie_risks ? static_cast<double>(g.below(4)) : g.normal();
  }
  r[0].event = 1;
  return r;
}

HeadConfig linear1() {
  HeadConfig c;
  c.kind = HeadKind::cls_linear;
  c.n_outputs = 1;
  return c;
}

// Exhaustive midpoint scan with the documented tie rule.
RiskThreshold brute_threshold(const std::vector<SurvivalRecord>& r) {
  std::set<double> distinct;
  for (const auto& x : r) distinct.insert(x.risk);
  const std::vector<double> d(distinct.begin(), distinct.end());
  RiskThreshold best;
  bool have = false;
  int best_imbalance = 0;
  for (std::size_t i = 0; i + 1 < d.size(); ++i) {
    const double t = d[i] + (d[i + 1] - d[i]) / 2;
    std::vector<SurvivalRecord> hi, lo;
    for (const auto& x : r) (x.risk > t ? hi : lo).push_back(x);
    double stat = 0;
    try {
      stat = logrank_statistic(hi, lo);
    } catch (const Error&) {
      continue;
    }
    const double o = oracle::logrank(hi, lo);
    EXPECT_EQ(stat, o);
    const int imbalance = std::abs(static_cast<int>(hi.size()) - static_cast<int>(lo.size()));
    if (!have || o > best.statistic || (o == best.statistic && imbalance < best_imbalance)) {
      best = {t, o, static_cast<int>(i), static_cast<int>(hi.size()), static_cast<int>(lo.size())};
      best_imbalance = imbalance;
      have = true;
    }
  }
  return best;
}

}  // namespace

TEST(CoxLoss, Examples) {
  EXPECT_EQ(cox_loss(std::vector<SurvivalRecord>{{"a", 5.0, 1, 3.7}}).loss, 0.0);
  const auto two = cox_loss(std::vector<SurvivalRecord>{{"a", 1.0, 1, 0.0}, {"b", 2.0, 0, 0.0}});
  EXPECT_NEAR(two.loss, std::log(2.0), 1e-15);
  try {
    cox_loss(std::vector<SurvivalRecord>{{"a", 1.0, 0, 0.0}, {"b", 2.0, 0, 0.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::no_event);
  }
}

TEST(CoxLoss, MatchesRiskSetOracleWithTies) {
  for (int t = 0; t < 50; ++t) {
    const auto r = random_records(6, 10 + t, 3);
    std::vector<double> times, eta;
    std::vector<int> ev;
    for (const auto& x : r) {
      times.push_back(x.time);
      ev.push_back(x.event);
      eta.push_back(x.risk);
    }
    std::vector<double> og;
    const double ol = oracle::cox_loss(times, ev, eta, &og);
    const CoxLoss got = cox_loss(r);
    ASSERT_NEAR(got.loss, ol, 1e-12);
    for (int i = 0; i < 6; ++i) {
      ASSERT_NEAR(got.gradient[i], og[i], 1e-12);
      auto up = eta, dn = eta;
      up[i] += 1e-5;
      dn[i] -= 1e-5;
      const double fd = (oracle::cox_loss(times, ev, up) - oracle::cox_loss(times, ev, dn)) / 2e-5;
      ASSERT_NEAR(got.gradient[i], fd, 1e-5);
    }
  }
}

TEST(CoxLoss, ShiftInvariant) {
  for (int t = 0; t < 30; ++t) {
    auto r = random_records(15, 100 + t);
    const double a = cox_loss(r).loss;
    for (auto& x : r) x.risk += 3.5 * (t - 15);
    EXPECT_LT(std::abs(cox_loss(r).loss - a), 1e-8);
  }
}

TEST(CIndex, Examples) {
  std::vector<SurvivalRecord> r;
  for (int i = 0; i < 6; ++i) r.push_back({"", 1.0 + i, 1, -static_cast<double>(i)});
  EXPECT_EQ(concordance_index(r), 1.0);
  for (auto& x : r) x.risk = 2.0;
  EXPECT_EQ(concordance_index(r), 0.5);
  for (auto& x : r) x.event = 0;
  try {
    concordance_index(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::undefined_pairs);
  }
}

TEST(CIndex, MatchesAllPairsOracle) {
  for (int t = 0; t < 100; ++t) {
    const auto r = random_records(10, 200 + t, 6, t % 2 == 0);
    EXPECT_EQ(concordance_index(r), oracle::c_index(r));
  }
}

TEST(CIndex, NegationComplements) {
  for (int t = 0; t < 50; ++t) {
    auto r = random_records(12, 300 + t);
    const double a = concordance_index(r);
    for (auto& x : r) x.risk = -x.risk;
    EXPECT_NEAR(a + concordance_index(r), 1.0, 1e-12);
  }
}

TEST(KaplanMeier, Examples) {
  std::vector<SurvivalRecord> cens{{"", 1, 0, 0}, {"", 2, 0, 0}};
  const auto c = kaplan_meier(cens);
  EXPECT_TRUE(c.steps.empty());
  EXPECT_EQ(c.survival_at(100.0), 1.0);
  const auto k = kaplan_meier(std::vector<SurvivalRecord>{{"", 2, 1, 0}, {"", 4, 1, 0}, {"", 6, 1, 0}});
  ASSERT_EQ(k.steps.size(), 3u);
  EXPECT_DOUBLE_EQ(k.steps[0].survival, 2.0 / 3);
  EXPECT_DOUBLE_EQ(k.steps[1].survival, 1.0 / 3);
  EXPECT_EQ(k.steps[2].survival, 0.0);
}

TEST(KaplanMeier, HandEnumeratedEightRecords) {
  const std::vector<SurvivalRecord> r{{"", 1, 1, 0}, {"", 2, 0, 0}, {"", 3, 1, 0}, {"", 3, 1, 0},
                                      {"", 4, 0, 0}, {"", 5, 1, 0}, {"", 6, 0, 0}, {"", 7, 1, 0}};
  const auto k = kaplan_meier(r);
  ASSERT_EQ(k.steps.size(), 4u);
  const double expect[4] = {7.0 / 8, 7.0 / 12, 7.0 / 18, 0.0};
  const int at_risk[4] = {8, 6, 3, 1};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(k.steps[i].survival, expect[i], 1e-15);
    EXPECT_EQ(k.steps[i].at_risk, at_risk[i]);
  }
  EXPECT_NEAR(k.survival_at(4.5), 7.0 / 12, 1e-15);
  EXPECT_EQ(k.survival_at(0.5), 1.0);
}

TEST(KaplanMeier, MatchesOracleAndMonotone) {
  for (int t = 0; t < 100; ++t) {
    const auto r = random_records(1 + t % 20, 400 + t);
    const auto k = kaplan_meier(r);
    const auto o = oracle::kaplan_meier(r);
    ASSERT_EQ(k.steps.size(), o.size());
    double prev = 1.0;
    for (std::size_t i = 0; i < o.size(); ++i) {
      EXPECT_EQ(k.steps[i].time, o[i].time);
      EXPECT_EQ(k.steps[i].survival, o[i].survival);
      EXPECT_EQ(k.steps[i].at_risk, o[i].at_risk);
      EXPECT_EQ(k.steps[i].events, o[i].events);
      EXPECT_LE(k.steps[i].survival, prev);
      EXPECT_GE(k.steps[i].survival, 0.0);
      prev = k.steps[i].survival;
    }
  }
}

TEST(LogRank, Examples) {
  const auto a = random_records(8, 1);
  EXPECT_NEAR(logrank_statistic(a, a), 0.0, 1e-24);
  std::vector<SurvivalRecord> early, late;
  for (int i = 0; i < 5; ++i) {
    early.push_back({"", 1.0 + i, 1, 0});
    late.push_back({"", 6.0 + i, 1, 0});
  }
  EXPECT_EQ(logrank_statistic(early, late), oracle::logrank(early, late));
  EXPECT_GT(logrank_statistic(early, late), kChiSquare1Critical05);
  try {
    logrank_statistic(early, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate);
  }
}

TEST(LogRank, MatchesRiskTableOracle) {
  for (int t = 0; t < 100; ++t) {
    auto r = random_records(4 + t % 17, 500 + t);
    std::vector<SurvivalRecord> a, b;
    for (std::size_t i = 0; i < r.size(); ++i) (i % 2 ? a : b).push_back(r[i]);
    double lib = 0;
    try {
      lib = logrank_statistic(a, b);
    } catch (const Error&) {
      continue;  // zero variance
    }
    EXPECT_EQ(lib, oracle::logrank(a, b));
  }
}

TEST(Threshold, Examples) {
  const std::vector<SurvivalRecord> r{{"", 1, 1, 1}, {"", 2, 1, 1}, {"", 8, 1, -1}, {"", 9, 0, -1}};
  const RiskThreshold t = select_risk_threshold(r);
  EXPECT_EQ(t.threshold, 0.0);
  EXPECT_EQ(t.n_high, 2);
  std::vector<SurvivalRecord> same(5, {"", 3, 1, 0.4});
  try {
    select_risk_threshold(same);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate);
  }
}

TEST(Threshold, MatchesExhaustiveScan) {
  for (int t = 0; t < 40; ++t) {
    auto r = random_records(10, 600 + t, 20);
    if (t < 10)  // monotone risk/time relation
      for (auto& x : r) x.risk = -x.time + 0.01 * (&x - r.data());
    const RiskThreshold got = select_risk_threshold(r);
    const RiskThreshold ref = brute_threshold(r);
    EXPECT_EQ(got.candidate_index, ref.candidate_index);
    EXPECT_EQ(got.threshold, ref.threshold);
    EXPECT_EQ(got.statistic, ref.statistic);
    EXPECT_EQ(got.n_high, ref.n_high);
  }
}

TEST(Threshold, InvariantUnderIncreasingTransform) {
  for (int t = 0; t < 30; ++t) {
    auto r = random_records(14, 700 + t, 30);
    const RiskThreshold a = select_risk_threshold(r);
    for (auto& x : r) x.risk = std::exp(2.0 * x.risk) + 5.0;
    const RiskThreshold b = select_risk_threshold(r);
    EXPECT_EQ(a.candidate_index, b.candidate_index);
    EXPECT_EQ(a.n_high, b.n_high);
    EXPECT_EQ(a.n_low, b.n_low);
    EXPECT_NEAR(a.statistic, b.statistic, 1e-12);
  }
}

TEST(Threshold, SplitByRisk) {
  const auto r = random_records(9, 3);
  const auto [hi, lo] = split_by_risk(r, 0.0);
  EXPECT_EQ(hi.size() + lo.size(), 9u);
  for (const auto& x : hi) EXPECT_GT(x.risk, 0.0);
  for (const auto& x : lo) EXPECT_LE(x.risk, 0.0);
}

TEST(CoxHead, SyntheticCohortReachesHighCIndex) {
  const auto cohort = synth::make_survival_cohort(200, 8, 4.0, 11);
  const TrainingSet tr = synth::cohort_training_set(cohort, Split::train);
  const TrainingSet va = synth::cohort_training_set(cohort, Split::val);
  TrainConfig tc;
  tc.seed = 0;
  const TrainedHead h = train_cox_head(tr, va, linear1(), tc);
  EXPECT_GE(h.val_score, 0.9);
  const TrainedHead h2 = train_cox_head(tr, va, linear1(), tc);
  EXPECT_EQ(h.weights, h2.weights);
  // the selected score is the validation c-index of the returned weights
  EXPECT_EQ(h.val_score, selection_score(h.config, h.weights, va, Selection::c_index));
}

TEST(CoxHead, GradientCheck) {
  const auto cohort = synth::make_survival_cohort(20, 5, 2.0, 3);
  const TrainingSet tr = synth::cohort_training_set(cohort, Split::train);
  SplitMix64 g(1);
  std::vector<double> w(parameter_count(linear1(), 5));
  for (double& v : w) v = g.normal() * 0.5;
  EXPECT_LT(gradient_check(linear1(), w, tr, Objective::cox), 1e-4);
}

TEST(CoxHead, AllCensoredTrainingIsNoEventError) {
  auto cohort = synth::make_survival_cohort(40, 4, 2.0, 5);
  for (auto& s : cohort)
    if (s.split == Split::train) s.event = 0;
  try {
    train_cox_head(synth::cohort_training_set(cohort, Split::train), synth::cohort_training_set(cohort, Split::val),
                   linear1(), TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::no_event);
  }
}

TEST(SurvivalRecords, Validation) {
  EXPECT_THROW(validate_survival_records(std::vector<SurvivalRecord>{{"a", 0.0, 1, 0}}), Error);
  EXPECT_THROW(validate_survival_records(std::vector<SurvivalRecord>{{"a", 1.0, 2, 0}}), Error);
  EXPECT_NO_THROW(validate_survival_records(std::vector<SurvivalRecord>{{"a", 1.0, 1, 0}}));
}
