#include "fmbench/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "fmbench/common.hpp"
#include "fmbench/kernels.hpp"
#include "fmbench/manifest.hpp"
#include "fmbench/survival.hpp"

namespace fmbench {

namespace fs = std::filesystem;

double auroc(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw Error(ErrorKind::shape, "auroc: labels and scores differ in length");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::int64_t pos = 0, neg = 0, doubled = 0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    std::int64_t p = 0, q = 0;
    while (end < order.size() && scores[order[end]] == scores[order[start]]) {
      const int y = labels[order[end]];
      if (y != 0 && y != 1) throw Error(ErrorKind::class_error, "auroc needs binary labels");
      (y ? p : q) += 1;
      ++end;
    }
    doubled += p * (2 * neg + q);
    pos += p;
    neg += q;
    start = end;
  }
  if (pos == 0 || neg == 0) throw Error(ErrorKind::class_error, "auroc needs both classes present");
  return static_cast<double>(doubled) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double accuracy(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size()) throw Error(ErrorKind::shape, "accuracy: length mismatch");
  if (labels.empty()) throw Error(ErrorKind::class_error, "accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += labels[i] == predictions[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double balanced_accuracy(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size()) throw Error(ErrorKind::shape, "balanced_accuracy: length mismatch");
  if (labels.empty()) throw Error(ErrorKind::class_error, "balanced accuracy of an empty set");
  std::map<int, std::pair<long, long>> per_class;  // hits, total
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& c = per_class[labels[i]];
    c.first += labels[i] == predictions[i];
    ++c.second;
  }
  double sum = 0.0;
  for (const auto& [cls, c] : per_class) sum += static_cast<double>(c.first) / static_cast<double>(c.second);
  return sum / static_cast<double>(per_class.size());
}

R2Rmse r2_rmse(std::span<const double> truth, std::span<const double> predictions) {
  if (truth.size() != predictions.size()) throw Error(ErrorKind::shape, "r2_rmse: length mismatch");
  if (truth.size() < 2) throw Error(ErrorKind::degenerate, "r2 needs at least two samples");
  const double mean = mean_of(truth);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - predictions[i]) * (truth[i] - predictions[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (!(ss_tot > 0.0)) throw Error(ErrorKind::degenerate, "truth has zero variance");
  return {100.0 * (1.0 - ss_res / ss_tot), std::sqrt(ss_res / static_cast<double>(truth.size()))};
}

double mean_of(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorKind::data, "mean of an empty list");
  double m = 0.0;
  for (double x : v) m += x;
  return m / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double percentile_sorted(std::span<const double> v, double q) {
  if (v.empty()) throw Error(ErrorKind::data, "percentile of an empty list");
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

std::string metric_name(MetricKind m) {
  switch (m) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::balanced_accuracy: return "balanced_accuracy";
    case MetricKind::auroc: return "auroc";
    case MetricKind::r2: return "r2";
    case MetricKind::rmse: return "rmse";
    case MetricKind::c_index: return "c_index";
  }
  return "accuracy";
}

MetricKind parse_metric(const std::string& s) {
  for (MetricKind m : {MetricKind::accuracy, MetricKind::balanced_accuracy, MetricKind::auroc, MetricKind::r2,
                       MetricKind::rmse, MetricKind::c_index})
    if (metric_name(m) == s) return m;
  throw Error(ErrorKind::config, "unknown metric '" + s + "'");
}

bool higher_is_better(MetricKind m) { return m != MetricKind::rmse; }

namespace {

// Truth and scores decoded once per run so resamples only gather.
struct PreparedRun {
  std::vector<int> labels;
  std::vector<int> predicted;
  std::vector<double> positive_score;
  std::vector<double> values;  // regression truth
  std::vector<double> first_score;
  std::vector<double> times;
  std::vector<int> events;
};

int parse_int_field(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw Error(ErrorKind::data, "cannot parse " + what + " '" + s + "' as an integer");
  return v;
}

double parse_double_field(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw Error(ErrorKind::data, "cannot parse " + what + " '" + s + "' as a number");
  return v;
}

PreparedRun prepare(MetricKind metric, const RunResult& run) {
  PreparedRun p;
  for (const auto& row : run.rows) {
    if (row.scores.empty()) throw Error(ErrorKind::data, "row '" + row.sample_id + "' has no score");
    for (double s : row.scores)
      if (!std::isfinite(s)) throw Error(ErrorKind::data, "row '" + row.sample_id + "' has a non-finite score");
    switch (metric) {
      case MetricKind::accuracy:
      case MetricKind::balanced_accuracy:
      case MetricKind::auroc: {
        p.labels.push_back(parse_int_field(row.truth, "truth"));
        p.predicted.push_back(static_cast<int>(std::max_element(row.scores.begin(), row.scores.end()) - row.scores.begin()));
        p.positive_score.push_back(row.scores.size() >= 2 ? row.scores[1] : row.scores[0]);
        break;
      }
      case MetricKind::r2:
      case MetricKind::rmse:
        p.values.push_back(parse_double_field(row.truth, "truth"));
        p.first_score.push_back(row.scores[0]);
        break;
      case MetricKind::c_index: {
        const auto semi = row.truth.find(';');
        if (semi == std::string::npos) throw Error(ErrorKind::data, "survival truth must be 'time;event'");
        p.times.push_back(parse_double_field(row.truth.substr(0, semi), "time"));
        p.events.push_back(parse_int_field(row.truth.substr(semi + 1), "event"));
        p.first_score.push_back(row.scores[0]);
        break;
      }
    }
  }
  return p;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t i : rows) out.push_back(v[i]);
  return out;
}

double evaluate_prepared(MetricKind metric, const PreparedRun& p, std::span<const std::size_t> rows) {
  switch (metric) {
    case MetricKind::accuracy: return accuracy(gather(p.labels, rows), gather(p.predicted, rows));
    case MetricKind::balanced_accuracy: return balanced_accuracy(gather(p.labels, rows), gather(p.predicted, rows));
    case MetricKind::auroc: return auroc(gather(p.labels, rows), gather(p.positive_score, rows));
    case MetricKind::r2: return r2_rmse(gather(p.values, rows), gather(p.first_score, rows)).r2;
    case MetricKind::rmse: return r2_rmse(gather(p.values, rows), gather(p.first_score, rows)).rmse;
    case MetricKind::c_index: {
      std::vector<SurvivalRecord> recs;
      recs.reserve(rows.size());
      for (std::size_t i : rows) recs.push_back({"", p.times[i], p.events[i], p.first_score[i]});
      return concordance_index(recs);
    }
  }
  return 0.0;
}

// Runs reordered onto the sample order of the first run.
struct AlignedRuns {
  std::vector<PreparedRun> prepared;
  std::vector<std::vector<std::size_t>> row_of;  // [run][canonical index] -> row
  std::vector<std::string> sample_ids;
};

AlignedRuns align(std::span<const RunResult> runs, MetricKind metric) {
  if (runs.empty()) throw Error(ErrorKind::alignment, "no runs given");
  AlignedRuns a;
  for (const auto& row : runs.front().rows) a.sample_ids.push_back(row.sample_id);
  if (a.sample_ids.empty()) throw Error(ErrorKind::alignment, "run has no rows");
  std::unordered_map<std::string, std::size_t> canonical;
  for (std::size_t i = 0; i < a.sample_ids.size(); ++i)
    if (!canonical.emplace(a.sample_ids[i], i).second)
      throw Error(ErrorKind::alignment, "duplicate sample_id '" + a.sample_ids[i] + "'");
  for (const auto& run : runs) {
    if (run.rows.size() != a.sample_ids.size())
      throw Error(ErrorKind::alignment, "run " + std::to_string(run.run_id) + " covers a different sample set");
    std::vector<std::size_t> map(a.sample_ids.size(), std::numeric_limits<std::size_t>::max());
    for (std::size_t r = 0; r < run.rows.size(); ++r) {
      auto it = canonical.find(run.rows[r].sample_id);
      if (it == canonical.end() || map[it->second] != std::numeric_limits<std::size_t>::max())
        throw Error(ErrorKind::alignment,
                    "run " + std::to_string(run.run_id) + ": unexpected sample_id '" + run.rows[r].sample_id + "'");
      map[it->second] = r;
    }
    a.row_of.push_back(std::move(map));
    a.prepared.push_back(prepare(metric, run));
  }
  return a;
}

double mean_over_runs(MetricKind metric, const AlignedRuns& a, std::span<const std::size_t> canonical_rows) {
  double sum = 0.0;
  std::vector<std::size_t> rows(canonical_rows.size());
  for (std::size_t r = 0; r < a.prepared.size(); ++r) {
    for (std::size_t i = 0; i < canonical_rows.size(); ++i) rows[i] = a.row_of[r][canonical_rows[i]];
    sum += evaluate_prepared(metric, a.prepared[r], rows);
  }
  return sum / static_cast<double>(a.prepared.size());
}

constexpr long kMaxRedrawsPerReplicate = 10000;

void draw(SplitMix64& rng, std::size_t n, std::vector<std::size_t>& out) {
  out.resize(n);
  for (auto& i : out) i = static_cast<std::size_t>(rng.below(n));
}

}  // namespace

double evaluate_metric(MetricKind metric, const RunResult& run, std::span<const std::size_t> rows) {
  return evaluate_prepared(metric, prepare(metric, run), rows);
}

double evaluate_metric(MetricKind metric, const RunResult& run) {
  std::vector<std::size_t> all(run.rows.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return evaluate_metric(metric, run, all);
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["metric"] = r.metric;
  j["observed"] = r.observed;
  j["point"] = r.point;
  j["ci_low"] = r.ci_low;
  j["ci_high"] = r.ci_high;
  j["n_bootstrap"] = r.n_bootstrap;
  j["redraws"] = r.redraws;
  j["p_values"] = r.p_values;
  return j;
}

MetricReport bootstrap_ci(std::span<const RunResult> runs, MetricKind metric, int n_bootstrap, std::uint64_t seed) {
  if (n_bootstrap < 1) throw Error(ErrorKind::config, "n_bootstrap must be >= 1");
  const AlignedRuns a = align(runs, metric);
  std::vector<std::size_t> all(a.sample_ids.size());
  std::iota(all.begin(), all.end(), std::size_t{0});

  MetricReport rep;
  rep.metric = metric_name(metric);
  rep.n_bootstrap = n_bootstrap;
  rep.observed = mean_over_runs(metric, a, all);

  const std::size_t n = a.sample_ids.size();
  std::vector<double> values(static_cast<std::size_t>(n_bootstrap));
  const kernels::ReplicateFn replicate = [&](SplitMix64& rng, long& redraws) -> double {
    std::vector<std::size_t> idx;
    for (long attempt = 0; attempt <= kMaxRedrawsPerReplicate; ++attempt) {
      draw(rng, n, idx);
      try {
        return mean_over_runs(metric, a, idx);
      } catch (const Error&) {
        ++redraws;
      }
    }
    return std::numeric_limits<double>::quiet_NaN();
  };
  rep.redraws = kernels::omp::bootstrap_replicates(n_bootstrap, seed, replicate, values);
  for (double v : values)
    if (std::isnan(v)) throw Error(ErrorKind::class_error, "metric '" + rep.metric + "' undefined on every redraw");

  rep.point = mean_of(values);
  std::sort(values.begin(), values.end());
  rep.ci_low = std::min(percentile_sorted(values, 0.025), rep.point);
  rep.ci_high = std::max(percentile_sorted(values, 0.975), rep.point);
  return rep;
}

double paired_bootstrap_pvalue(std::span<const RunResult> runs_a, std::span<const RunResult> runs_b, MetricKind metric,
                               int n_bootstrap, std::uint64_t seed) {
  if (n_bootstrap < 1) throw Error(ErrorKind::config, "n_bootstrap must be >= 1");
  const AlignedRuns a = align(runs_a, metric);
  AlignedRuns b = align(runs_b, metric);
  if (std::set<std::string>(a.sample_ids.begin(), a.sample_ids.end()) !=
      std::set<std::string>(b.sample_ids.begin(), b.sample_ids.end()))
    throw Error(ErrorKind::alignment, "compared models cover different sample sets");
  // reorder b's canonical indices onto a's sample order
  std::unordered_map<std::string, std::size_t> b_index;
  for (std::size_t i = 0; i < b.sample_ids.size(); ++i) b_index[b.sample_ids[i]] = i;
  for (auto& map : b.row_of) {
    std::vector<std::size_t> re(map.size());
    for (std::size_t i = 0; i < a.sample_ids.size(); ++i) re[i] = map[b_index[a.sample_ids[i]]];
    map = std::move(re);
  }

  const std::size_t n = a.sample_ids.size();
  std::vector<double> diffs(static_cast<std::size_t>(n_bootstrap));
  const kernels::ReplicateFn replicate = [&](SplitMix64& rng, long& redraws) -> double {
    std::vector<std::size_t> idx;
    for (long attempt = 0; attempt <= kMaxRedrawsPerReplicate; ++attempt) {
      draw(rng, n, idx);
      try {
        return mean_over_runs(metric, a, idx) - mean_over_runs(metric, b, idx);
      } catch (const Error&) {
        ++redraws;
      }
    }
    return std::numeric_limits<double>::quiet_NaN();
  };
  kernels::omp::bootstrap_replicates(n_bootstrap, seed, replicate, diffs);
  long le = 0, ge = 0;
  for (double d : diffs) {
    if (std::isnan(d)) throw Error(ErrorKind::class_error, "metric undefined on every redraw");
    le += d <= 0.0;
    ge += d >= 0.0;
  }
  const double p = 2.0 * static_cast<double>(std::min(le + 1, ge + 1)) / static_cast<double>(n_bootstrap + 1);
  return std::min(1.0, p);
}

RocCurve roc_curve(std::span<const int> labels, std::span<const double> scores) {
  RocCurve c;
  c.auroc = auroc(labels, scores);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double neg = static_cast<double>(labels.size()) - pos;
  long tp = 0, fp = 0;
  c.points.push_back({0.0, 0.0});
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    while (end < order.size() && scores[order[end]] == scores[order[start]]) {
      (labels[order[end]] ? tp : fp) += 1;
      ++end;
    }
    c.points.push_back({fp / neg, tp / pos});
    start = end;
  }
  c.points.back() = {1.0, 1.0};
  return c;
}

RocCurve pooled_roc(std::span<const RunResult> runs) {
  std::vector<int> labels;
  std::vector<double> scores;
  for (const auto& run : runs) {
    const PreparedRun p = prepare(MetricKind::auroc, run);
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
    scores.insert(scores.end(), p.positive_score.begin(), p.positive_score.end());
  }
  return roc_curve(labels, scores);
}

std::vector<RunResult> read_run_results(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const int c_run = t.column("run_id"), c_id = t.column("sample_id"), c_truth = t.column("truth");
  if (c_run < 0 || c_id < 0 || c_truth < 0) throw Error(ErrorKind::format, path.string() + ": missing run_id/sample_id/truth column");
  std::vector<int> score_cols;
  for (int c = 0; c < static_cast<int>(t.header.size()); ++c)
    if (t.header[c].rfind("score", 0) == 0) score_cols.push_back(c);
  if (score_cols.empty()) throw Error(ErrorKind::format, path.string() + ": no score column");
  std::map<int, RunResult> by_run;
  for (const auto& row : t.rows) {
    const int run_id = parse_int_field(row.at(c_run), "run_id");
    RunRow r;
    r.sample_id = row.at(c_id);
    r.truth = row.at(c_truth);
    for (int c : score_cols)
      if (!row.at(c).empty()) r.scores.push_back(parse_double_field(row[c], "score"));
    auto& run = by_run[run_id];
    run.run_id = run_id;
    run.rows.push_back(std::move(r));
  }
  std::vector<RunResult> out;
  for (auto& [id, run] : by_run) out.push_back(std::move(run));
  return out;
}

void write_run_results(std::span<const RunResult> runs, const fs::path& path) {
  std::size_t n_scores = 1;
  for (const auto& run : runs)
    for (const auto& row : run.rows) n_scores = std::max(n_scores, row.scores.size());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorKind::io, "cannot write " + path.string());
  f << "run_id,sample_id,truth,score";
  for (std::size_t k = 1; k < n_scores; ++k) f << ",score_" << k;
  f << '\n';
  char buf[64];
  for (const auto& run : runs)
    for (const auto& row : run.rows) {
      f << run.run_id << ',' << csv_escape(row.sample_id) << ',' << csv_escape(row.truth);
      for (std::size_t k = 0; k < n_scores; ++k) {
        f << ',';
        if (k < row.scores.size()) {
          std::snprintf(buf, sizeof buf, "%.17g", row.scores[k]);
          f << buf;
        }
      }
      f << '\n';
    }
}

}  // namespace fmbench
