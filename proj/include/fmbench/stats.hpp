#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace fmbench {

// Mann-Whitney AUROC; tied scores earn half credit. labels are 0/1.
double auroc(std::span<const int> labels, std::span<const double> scores);
double accuracy(std::span<const int> labels, std::span<const int> predictions);
// Unweighted mean of per-class recall over the classes present in `labels`.
double balanced_accuracy(std::span<const int> labels, std::span<const int> predictions);

struct R2Rmse {
  double r2 = 0.0;  // x100
  double rmse = 0.0;
};
R2Rmse r2_rmse(std::span<const double> truth, std::span<const double> predictions);

double mean_of(std::span<const double> v);
// Population standard deviation (the few-shot error bars).
double std_of(std::span<const double> v);
// Linear interpolation between order statistics at q * (n - 1); `v` sorted.
double percentile_sorted(std::span<const double> v, double q);

// One row of a run: truth is a class id ("2"), a real ("61.5"), or "time;event"
// for survival. Classification rows hold one score per class.
struct RunRow {
  std::string sample_id;
  std::string truth;
  std::vector<double> scores;
};

struct RunResult {
  int run_id = 0;
  std::vector<RunRow> rows;
};

enum class MetricKind { accuracy, balanced_accuracy, auroc, r2, rmse, c_index };

std::string metric_name(MetricKind m);
MetricKind parse_metric(const std::string& s);
// rmse is the only metric where smaller is better.
bool higher_is_better(MetricKind m);

// Metric of one run over the given rows (indices into run.rows, repeats allowed).
double evaluate_metric(MetricKind metric, const RunResult& run, std::span<const std::size_t> rows);
double evaluate_metric(MetricKind metric, const RunResult& run);

struct MetricReport {
  std::string metric;
  double observed = 0.0;  // mean over runs on the full sample set
  double point = 0.0;     // mean of the bootstrap values
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_bootstrap = 0;
  long redraws = 0;
  std::map<std::string, double> p_values;
};

nlohmann::json to_json(const MetricReport& report);

// Percentile bootstrap of the mean-over-runs metric. Resamples where the metric
// is undefined are redrawn and counted.
MetricReport bootstrap_ci(std::span<const RunResult> runs, MetricKind metric, int n_bootstrap = 1000,
                          std::uint64_t seed = 0);

// Two-sided paired bootstrap: p = 2 min(#{d<=0}+1, #{d>=0}+1) / (B+1), capped at 1.
double paired_bootstrap_pvalue(std::span<const RunResult> runs_a, std::span<const RunResult> runs_b, MetricKind metric,
                               int n_bootstrap = 1000, std::uint64_t seed = 0);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) ... (1,1), nondecreasing in both
  double auroc = 0.0;
};

RocCurve roc_curve(std::span<const int> labels, std::span<const double> scores);
// Concatenates (label, positive-class score) rows of all runs into one curve.
RocCurve pooled_roc(std::span<const RunResult> runs);

// CSV: run_id,sample_id,truth,score[,score_1...]
std::vector<RunResult> read_run_results(const std::filesystem::path& path);
void write_run_results(std::span<const RunResult> runs, const std::filesystem::path& path);

}  // namespace fmbench
