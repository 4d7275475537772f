#include "fmbench/survival.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "fmbench/common.hpp"

namespace fmbench {

void validate_survival_records(std::span<const SurvivalRecord> records) {
  for (const auto& r : records) {
    if (!(r.time > 0.0) || !std::isfinite(r.time))
      throw Error(ErrorKind::data, "subject '" + r.subject_id + "': time must be positive");
    if (r.event != 0 && r.event != 1) throw Error(ErrorKind::data, "subject '" + r.subject_id + "': event must be 0 or 1");
    if (!std::isfinite(r.risk)) throw Error(ErrorKind::data, "subject '" + r.subject_id + "': non-finite risk");
  }
}

double cox_loss(std::span<const double> times, std::span<const int> events, std::span<const double> risks,
                std::span<double> grad) {
  const std::size_t n = times.size();
  if (events.size() != n || risks.size() != n) throw Error(ErrorKind::shape, "cox_loss: array lengths differ");
  if (!grad.empty() && grad.size() != n) throw Error(ErrorKind::shape, "cox_loss: gradient buffer size mismatch");
  if (std::count(events.begin(), events.end(), 1) == 0) throw Error(ErrorKind::no_event, "cox_loss needs at least one event");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });
  const double shift = *std::max_element(risks.begin(), risks.end());

  // Walk times in descending order; each tied group joins the risk set before
  // its events are scored (Breslow).
  struct Group {
    double log_s;
    int deaths;
  };
  std::vector<Group> groups;
  std::vector<std::size_t> group_of(n);
  double sum = 0.0, loss = 0.0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    while (end < n && times[order[end]] == times[order[start]]) {
      sum += std::exp(risks[order[end]] - shift);
      ++end;
    }
    const double log_s = std::log(sum) + shift;
    int deaths = 0;
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t i = order[k];
      group_of[i] = groups.size();
      if (events[i]) {
        loss -= risks[i] - log_s;
        ++deaths;
      }
    }
    groups.push_back({log_s, deaths});
    start = end;
  }
  if (!grad.empty()) {
    // d/d eta_k = -e_k + exp(eta_k) * sum over event groups with t_g <= t_k of d_g / S_g.
    // Groups are stored in descending time, so accumulate from the back.
    std::vector<double> hazard(groups.size());
    double acc = 0.0;
    for (std::size_t g = groups.size(); g-- > 0;) {
      acc += groups[g].deaths * std::exp(-groups[g].log_s + shift);
      hazard[g] = acc;
    }
    for (std::size_t k = 0; k < n; ++k)
      grad[k] = -static_cast<double>(events[k]) + std::exp(risks[k] - shift) * hazard[group_of[k]];
  }
  return loss;
}

CoxLoss cox_loss(std::span<const SurvivalRecord> records) {
  validate_survival_records(records);
  std::vector<double> times, risks;
  std::vector<int> events;
  for (const auto& r : records) {
    times.push_back(r.time);
    events.push_back(r.event);
    risks.push_back(r.risk);
  }
  CoxLoss out;
  out.gradient.resize(records.size());
  out.loss = cox_loss(times, events, risks, out.gradient);
  return out;
}

double concordance_index(std::span<const SurvivalRecord> records) {
  const std::size_t n = records.size();
  std::vector<double> sorted_risks;
  for (const auto& r : records) sorted_risks.push_back(r.risk);
  std::sort(sorted_risks.begin(), sorted_risks.end());
  sorted_risks.erase(std::unique(sorted_risks.begin(), sorted_risks.end()), sorted_risks.end());
  const std::size_t m = sorted_risks.size();
  auto rank_of = [&](double v) {
    return static_cast<std::size_t>(std::lower_bound(sorted_risks.begin(), sorted_risks.end(), v) - sorted_risks.begin()) + 1;
  };

  // Fenwick tree over risk ranks, filled with subjects of strictly later time.
  std::vector<std::int64_t> tree(m + 1, 0);
  auto add = [&](std::size_t i) {
    for (; i <= m; i += i & (~i + 1)) ++tree[i];
  };
  auto prefix = [&](std::size_t i) {
    std::int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree[i];
    return s;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].time > records[b].time; });
  std::int64_t doubled_score = 0, pairs = 0, inserted = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    while (end < n && records[order[end]].time == records[order[start]].time) ++end;
    for (std::size_t k = start; k < end; ++k) {
      const auto& r = records[order[k]];
      if (!r.event) continue;
      const std::size_t rank = rank_of(r.risk);
      const std::int64_t below = prefix(rank - 1);
      const std::int64_t equal = prefix(rank) - below;
      doubled_score += 2 * below + equal;
      pairs += inserted;
    }
    for (std::size_t k = start; k < end; ++k) add(rank_of(records[order[k]].risk));
    inserted += static_cast<std::int64_t>(end - start);
    start = end;
  }
  if (pairs == 0) throw Error(ErrorKind::undefined_pairs, "c-index: no comparable pairs");
  return static_cast<double>(doubled_score) / (2.0 * static_cast<double>(pairs));
}

double KaplanMeierCurve::survival_at(double t) const {
  double s = 1.0;
  for (const auto& step : steps) {
    if (step.time > t) break;
    s = step.survival;
  }
  return s;
}

KaplanMeierCurve kaplan_meier(std::span<const SurvivalRecord> records) {
  if (records.empty()) throw Error(ErrorKind::data, "kaplan_meier needs at least one record");
  std::vector<SurvivalRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
  KaplanMeierCurve curve;
  double s = 1.0;
  const int n = static_cast<int>(sorted.size());
  for (int start = 0; start < n;) {
    int end = start, deaths = 0;
    while (end < n && sorted[end].time == sorted[start].time) deaths += sorted[end++].event;
    if (deaths > 0) {
      const int at_risk = n - start;
      s *= 1.0 - static_cast<double>(deaths) / at_risk;
      curve.steps.push_back({sorted[start].time, s, at_risk, deaths});
    }
    start = end;
  }
  return curve;
}

double logrank_statistic(std::span<const SurvivalRecord> group_a, std::span<const SurvivalRecord> group_b) {
  if (group_a.empty() || group_b.empty()) throw Error(ErrorKind::degenerate, "log-rank needs two nonempty groups");
  std::vector<double> event_times;
  for (auto g : {group_a, group_b})
    for (const auto& r : g)
      if (r.event) event_times.push_back(r.time);
  if (event_times.empty()) throw Error(ErrorKind::no_event, "log-rank needs at least one event");
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

  double o_minus_e = 0.0, var = 0.0;
  for (double t : event_times) {
    int na = 0, nb = 0, da = 0, db = 0;
    for (const auto& r : group_a) {
      na += r.time >= t;
      da += r.event && r.time == t;
    }
    for (const auto& r : group_b) {
      nb += r.time >= t;
      db += r.event && r.time == t;
    }
    const double n = na + nb, d = da + db;
    o_minus_e += da - d * na / n;
    if (n > 1) var += d * (na / n) * (nb / n) * (n - d) / (n - 1);
  }
  if (!(var > 0.0)) throw Error(ErrorKind::degenerate, "log-rank variance is zero");
  return o_minus_e * o_minus_e / var;
}

std::pair<std::vector<SurvivalRecord>, std::vector<SurvivalRecord>> split_by_risk(
    std::span<const SurvivalRecord> records, double threshold) {
  std::pair<std::vector<SurvivalRecord>, std::vector<SurvivalRecord>> out;
  for (const auto& r : records) (r.risk > threshold ? out.first : out.second).push_back(r);
  return out;
}

RiskThreshold select_risk_threshold(std::span<const SurvivalRecord> records) {
  validate_survival_records(records);
  std::vector<SurvivalRecord> sorted(records.begin(), records.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.risk < b.risk; });
  const int n = static_cast<int>(sorted.size());
  // boundaries: first index of each new distinct risk
  std::vector<int> cuts;
  for (int i = 1; i < n; ++i)
    if (sorted[i].risk != sorted[i - 1].risk) cuts.push_back(i);
  if (cuts.empty()) throw Error(ErrorKind::degenerate, "all risks identical: no candidate threshold");

  RiskThreshold best;
  bool found = false;
  for (int k = 0; k < static_cast<int>(cuts.size()); ++k) {
    const int cut = cuts[k];
    const std::span<const SurvivalRecord> low(sorted.data(), static_cast<std::size_t>(cut));
    const std::span<const SurvivalRecord> high(sorted.data() + cut, static_cast<std::size_t>(n - cut));
    double stat = 0.0;
    try {
      stat = logrank_statistic(high, low);
    } catch (const Error&) {
      continue;  // split without variance carries no evidence
    }
    const int imbalance = std::abs((n - cut) - cut);
    const int best_imbalance = std::abs(best.n_high - best.n_low);
    const bool better = !found || stat > best.statistic ||
                        (stat == best.statistic && imbalance < best_imbalance);
    if (better) {
      const double a = sorted[cut - 1].risk, b = sorted[cut].risk;
      best = {a + (b - a) / 2.0, stat, k, n - cut, cut};
      found = true;
    }
  }
  if (!found) throw Error(ErrorKind::degenerate, "no candidate threshold yields a defined log-rank statistic");
  return best;
}

TrainedHead train_cox_head(const TrainingSet& train, const TrainingSet& val, const HeadConfig& config,
                           const TrainConfig& tc) {
  if (config.n_outputs != 1) throw Error(ErrorKind::config, "a Cox head has exactly one output");
  return train_head(train, val, config, tc, Objective::cox, Selection::c_index);
}

}  // namespace fmbench
