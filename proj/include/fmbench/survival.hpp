#pragma once

#include <span>
#include <string>
#include <vector>

#include "fmbench/heads.hpp"

namespace fmbench {

struct SurvivalRecord {
  std::string subject_id;
  double time = 0.0;  // days, > 0
  int event = 0;      // 1 = event observed, 0 = censored
  double risk = 0.0;  // model output; larger means earlier expected event
};

void validate_survival_records(std::span<const SurvivalRecord> records);

struct CoxLoss {
  double loss = 0.0;
  std::vector<double> gradient;  // d loss / d risk
};

// Negative Cox partial log-likelihood, Breslow ties (tied events share one
// risk set of all subjects with time >= t).
CoxLoss cox_loss(std::span<const SurvivalRecord> records);
// Same on parallel arrays; writes the gradient into `grad` when non-empty.
double cox_loss(std::span<const double> times, std::span<const int> events, std::span<const double> risks,
                std::span<double> grad = {});

// Harrell's c-index: pair (i, j) is comparable when t_i < t_j and event_i = 1;
// concordant when risk_i > risk_j; tied risks earn half credit.
double concordance_index(std::span<const SurvivalRecord> records);

struct KaplanMeierStep {
  double time = 0.0;
  double survival = 1.0;  // S just after `time`
  int at_risk = 0;
  int events = 0;
};

struct KaplanMeierCurve {
  std::vector<KaplanMeierStep> steps;  // one per distinct event time, ascending
  double survival_at(double t) const;
};

KaplanMeierCurve kaplan_meier(std::span<const SurvivalRecord> records);

// Two-group log-rank chi-square, (sum(O_a - E_a))^2 / sum(V).
double logrank_statistic(std::span<const SurvivalRecord> group_a, std::span<const SurvivalRecord> group_b);

inline constexpr double kChiSquare1Critical05 = 3.841458820694124;

struct RiskThreshold {
  double threshold = 0.0;  // high-risk group: risk > threshold
  double statistic = 0.0;
  int candidate_index = 0;  // position among midpoints of sorted distinct risks
  int n_high = 0;
  int n_low = 0;
};

// Scans midpoints between consecutive distinct risks and keeps the split with
// the largest log-rank statistic; ties prefer the most balanced split, then
// the lower candidate index.
RiskThreshold select_risk_threshold(std::span<const SurvivalRecord> records);

// Splits records into (high, low) risk groups at a threshold.
std::pair<std::vector<SurvivalRecord>, std::vector<SurvivalRecord>> split_by_risk(
    std::span<const SurvivalRecord> records, double threshold);

// Linear (or pooled-linear) risk head on the Cox objective, selected by
// validation c-index across the learning-rate grid.
TrainedHead train_cox_head(const TrainingSet& train, const TrainingSet& val, const HeadConfig& config,
                           const TrainConfig& tc);

}  // namespace fmbench
