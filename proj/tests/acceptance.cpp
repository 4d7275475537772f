// Acceptance checks AC1-AC10. One PASS/FAIL line per criterion; exit code 1 if
// any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "fmbench/bench.hpp"
#include "fmbench/synthetic.hpp"
#include "oracles.hpp"

using namespace fmbench;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Records the first failing check with a message.
struct Checker {
  Outcome out;
  void require(bool ok, const std::string& what) {
    if (!ok && out.pass) {
      out.pass = false;
      out.detail = what;
    }
  }
};

std::string fmtd(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::vector<SurvivalRecord> random_records(int n, SplitMix64& g) {
  std::vector<SurvivalRecord> r(n);
  for (int i = 0; i < n; ++i) {
    r[i].subject_id = "s" + std::to_string(i);
    r[i].time = 1.0 + static_cast<double>(g.below(8));
    r[i].event = g.uniform() < 0.7;
    r[i].risk = g.below(3) == 0 ? static_cast<double>(g.below(3)) : g.normal();
  }
  // one comparable pair at least
  r[0].event = 1;
  r[0].time = 0.5;
  r[n - 1].time = 9.0;
  return r;
}

// ---- AC1 ----
Outcome ac1() {
  Checker c;
  SplitMix64 g(1);
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + static_cast<int>(g.below(19));
    std::vector<int> y(n), p(n);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      y[i] = static_cast<int>(g.below(3));
      p[i] = static_cast<int>(g.below(3));
      s[i] = static_cast<double>(g.below(6));  // ties on purpose
    }
    std::vector<int> yb(n);
    for (int i = 0; i < n; ++i) yb[i] = i % 2 == 0 ? 1 : static_cast<int>(g.below(2));
    yb[1] = 0;
    c.require(auroc(yb, s) == oracle::auroc(yb, s), "auroc instance " + std::to_string(t));
    c.require(balanced_accuracy(y, p) == oracle::balanced_accuracy(y, p), "balanced_accuracy instance " + std::to_string(t));

    std::vector<std::uint8_t> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = g.below(2);
      b[i] = g.below(2);
    }
    c.require(dice(a, b) == oracle::dice(a, b), "dice instance " + std::to_string(t));

    const auto r = random_records(n, g);
    c.require(concordance_index(r) == oracle::c_index(r), "c_index instance " + std::to_string(t));
    const auto km = kaplan_meier(r);
    const auto ok = oracle::kaplan_meier(r);
    bool same = km.steps.size() == ok.size();
    for (std::size_t i = 0; same && i < ok.size(); ++i)
      same = km.steps[i].time == ok[i].time && km.steps[i].survival == ok[i].survival &&
             km.steps[i].at_risk == ok[i].at_risk && km.steps[i].events == ok[i].events;
    c.require(same, "kaplan_meier instance " + std::to_string(t));

    std::vector<SurvivalRecord> ga, gb;
    for (int i = 0; i < n; ++i) (i % 2 ? ga : gb).push_back(r[i]);
    gb[0].event = 1;
    double lr = -1;
    try {
      lr = logrank_statistic(ga, gb);
    } catch (const Error&) {
      lr = -1;
    }
    const double olr = oracle::logrank(ga, gb);
    c.require(std::isfinite(olr) ? lr == olr : lr == -1, "logrank instance " + std::to_string(t));
  }
  if (c.out.pass) c.out.detail = "6 metrics x 100 instances";
  return c.out;
}

// ---- AC2 ----
HeadSample random_sample(int count, int d, SplitMix64& g) {
  HeadSample s;
  s.count = count;
  s.dim = d;
  s.tokens.resize(static_cast<std::size_t>(count) * d);
  for (double& v : s.tokens) v = g.normal();
  return s;
}

Outcome ac2() {
  Checker c;
  double worst = 0.0;
  SplitMix64 g(2);
  // cox_loss w.r.t. risks
  for (int t = 0; t < 20; ++t) {
    const auto r = random_records(12, g);
    std::vector<double> times, risks;
    std::vector<int> ev;
    for (const auto& x : r) {
      times.push_back(x.time);
      ev.push_back(x.event);
      risks.push_back(x.risk);
    }
    std::vector<double> grad(risks.size());
    cox_loss(times, ev, risks, grad);
    for (std::size_t i = 0; i < risks.size(); ++i) {
      const double h = 1e-5;
      auto up = risks, dn = risks;
      up[i] += h;
      dn[i] -= h;
      const double num = (cox_loss(times, ev, up) - cox_loss(times, ev, dn)) / (2 * h);
      const double rel = std::abs(grad[i] - num) / std::max({std::abs(grad[i]), std::abs(num), kGradientCheckFloor});
      worst = std::max(worst, rel);
      c.require(rel < 1e-4, "cox_loss point " + std::to_string(t) + " rel " + fmtd(rel, 8));
    }
  }
  struct Case {
    HeadConfig cfg;
    Objective obj;
    int tokens;
  };
  std::vector<Case> cases;
  {
    HeadConfig lin;
    lin.kind = HeadKind::cls_linear;
    lin.n_outputs = 3;
    cases.push_back({lin, Objective::cross_entropy, 1});
    HeadConfig att;
    att.kind = HeadKind::attention_pool;
    att.n_outputs = 3;
    cases.push_back({att, Objective::cross_entropy, 5});
    HeadConfig mlp;
    mlp.kind = HeadKind::mlp_regression;
    mlp.n_outputs = 1;
    mlp.hidden_dim = 8;
    cases.push_back({mlp, Objective::mse, 1});
    HeadConfig cox;
    cox.kind = HeadKind::cls_linear;
    cox.n_outputs = 1;
    cases.push_back({cox, Objective::cox, 1});
  }
  const int d = 6;
  for (const auto& k : cases) {
    for (int t = 0; t < 20; ++t) {
      TrainingSet ts;
      for (int i = 0; i < 10; ++i) {
        ts.inputs.push_back(random_sample(k.tokens, d, g));
        ts.labels.push_back(i % 3);
        ts.values.push_back(g.normal());
        ts.times.push_back(1.0 + static_cast<double>(g.below(6)));
        ts.events.push_back(i % 3 != 2);
      }
      std::vector<double> w(parameter_count(k.cfg, d));
      for (double& v : w) v = g.normal() * 0.5;
      if (k.cfg.kind == HeadKind::mlp_regression)  // running stats: mean 0, var 1
        for (int i = trainable_count(k.cfg, d); i < parameter_count(k.cfg, d); ++i)
          w[i] = ((i - trainable_count(k.cfg, d)) / k.cfg.hidden_dim) % 2;
      const double rel = gradient_check(k.cfg, w, ts, k.obj);
      worst = std::max(worst, rel);
      c.require(rel < 1e-4, head_kind_name(k.cfg.kind) + " point " + std::to_string(t) + " rel " + fmtd(rel, 8));
    }
  }
  if (c.out.pass) c.out.detail = "max rel error " + fmtd(worst, 8);
  return c.out;
}

// ---- AC3 ----
Outcome ac3() {
  Checker c;
  const int z = 32, hw = 64, dim = 16;
  const auto fixed = synth::smooth_feature_volume(z, hw, hw, dim, {0, 0, 0}, 3);
  const auto moving = synth::smooth_feature_volume(z, hw, hw, dim, {0, 2, 0}, 3);
  const auto def = deformable_register(fixed, moving, {});
  const double uy = def.field.mean_component(1), uz = def.field.mean_component(0), ux = def.field.mean_component(2);
  c.require(std::abs(uy - 2.0) <= 0.5 && std::abs(uz) <= 0.5 && std::abs(ux) <= 0.5,
            "mean displacement (" + fmtd(uz) + ", " + fmtd(uy) + ", " + fmtd(ux) + ")");

  const auto lf = synth::sphere_labels(z, hw, hw, 4, 4.0, {0, 0, 0}, 3);
  const auto lm = synth::sphere_labels(z, hw, hw, 4, 4.0, {0, 2, 0}, 3);
  RegistrationOptions o;
  o.rigid = false;  // the deformable stage has to do the work
  const auto pr = register_pair(fixed, moving, lf, lm, o);
  const double gain = pr.mean_dsc - pr.mean_dsc_before;
  c.require(gain >= 0.15, "DSC gain " + fmtd(gain));

  const auto same = register_pair(fixed, fixed, lf, lf, o);
  c.require(same.std_log_j <= 0.05, "identity stdLogJ " + fmtd(same.std_log_j, 6));
  if (c.out.pass)
    c.out.detail = "u_y " + fmtd(uy) + ", DSC " + fmtd(pr.mean_dsc_before) + " -> " + fmtd(pr.mean_dsc) +
                   ", identity stdLogJ " + fmtd(same.std_log_j, 6);
  return c.out;
}

// ---- AC4 ----
Outcome ac4() {
  Checker c;
  const kernels::GridDims g{12, 12, 12};
  c.require(std_log_jacobian(g, std::vector<double>(g.cells() * 3, 0.0)).std_log_j == 0.0, "zero field");
  std::vector<double> lin(g.cells() * 3), rnd(g.cells() * 3);
  SplitMix64 r(4);
  for (int zz = 0; zz < g.z; ++zz)
    for (int y = 0; y < g.y; ++y)
      for (int x = 0; x < g.x; ++x) {
        const auto i = g.index(zz, y, x) * 3;
        lin[i] = 0.15 * zz;
        lin[i + 1] = 0.15 * y;
        lin[i + 2] = 0.15 * x;
      }
  for (double& v : rnd) v = r.uniform(-0.3, 0.3);
  const double s_lin = std_log_jacobian(g, lin).std_log_j;
  c.require(std::abs(s_lin) <= 1e-9, "linear scaling " + fmtd(s_lin, 12));
  const auto det = oracle::jacobian_dets(g.z, g.y, g.x, rnd);
  std::vector<double> logs;
  for (double j : det)
    if (j > kFoldThreshold) logs.push_back(std::log(j));
  double mean = 0, var = 0;
  for (double l : logs) mean += l / logs.size();
  for (double l : logs) var += (l - mean) * (l - mean) / logs.size();
  const double got = std_log_jacobian(g, rnd).std_log_j;
  c.require(std::abs(got - std::sqrt(var)) <= 1e-6, "random field " + fmtd(got, 9) + " vs " + fmtd(std::sqrt(var), 9));
  if (c.out.pass) c.out.detail = "random field stdLogJ " + fmtd(got, 6);
  return c.out;
}

// ---- AC5 ----
Outcome ac5() {
  Checker c;
  const int n = 512;
  std::vector<std::uint8_t> sq(static_cast<std::size_t>(n) * n, 0);
  for (int y = 231; y < 281; ++y)
    for (int x = 231; x < 281; ++x) sq[static_cast<std::size_t>(y) * n + x] = 1;
  std::array<double, 4> sum{};
  for (int s = 0; s < 10000; ++s) {
    const auto b = synth_box_prompt(sq, n, n, static_cast<std::uint64_t>(s));
    for (int k = 0; k < 4; ++k) {
      c.require(b.offsets[k] >= -5 && b.offsets[k] <= 20, "offset out of range");
      sum[k] += b.offsets[k];
    }
  }
  std::string means;
  for (int k = 0; k < 4; ++k) {
    const double m = sum[k] / 10000.0;
    c.require(std::abs(m - 7.5) <= 0.3, "side " + std::to_string(k) + " mean " + fmtd(m));
    means += (k ? "/" : "") + fmtd(m, 3);
  }
  // points: random disks inside a 64 x 64 image
  SplitMix64 g(5);
  const int h = 64;
  int fallbacks = 0;
  for (int s = 0; s < 10000; ++s) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(h) * h, 0);
    const double r = 4.0 + g.uniform(0.0, 12.0), cy = g.uniform(r + 1, h - r - 1), cx = g.uniform(r + 1, h - r - 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < h; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m[static_cast<std::size_t>(y) * h + x] = 1;
    const auto p = synth_point_prompt(m, h, h, g.next());
    if (p.fallback) {
      ++fallbacks;
      continue;
    }
    c.require(oracle::distance_to_background(m, h, h, p.point.y, p.point.x) > 2,
              "point " + std::to_string(s) + " too close to background");
  }
  c.require(fallbacks == 0, std::to_string(fallbacks) + " point prompts fell back");
  if (c.out.pass) c.out.detail = "box side means " + means;
  return c.out;
}

// ---- AC6 ----
RunResult bernoulli_run(int run_id, int n, double p, SplitMix64& g) {
  RunResult r;
  r.run_id = run_id;
  for (int i = 0; i < n; ++i) {
    const int y = static_cast<int>(g.below(2));
    const int pred = g.uniform() < p ? y : 1 - y;
    r.rows.push_back({"x" + std::to_string(i), std::to_string(y), {pred == 0 ? 0.9 : 0.1, pred == 1 ? 0.9 : 0.1}});
  }
  return r;
}

Outcome ac6() {
  Checker c;
  SplitMix64 g(6);
  int covered = 0;
  for (int d = 0; d < 200; ++d) {
    const std::vector<RunResult> runs{bernoulli_run(0, 300, 0.7, g)};
    const auto rep = bootstrap_ci(runs, MetricKind::accuracy, 1000, static_cast<std::uint64_t>(d));
    covered += rep.ci_low <= 0.7 && 0.7 <= rep.ci_high;
  }
  const double coverage = covered / 200.0;
  c.require(coverage >= 0.90 && coverage <= 0.98, "coverage " + fmtd(coverage));

  const std::vector<RunResult> a{bernoulli_run(0, 200, 0.7, g)};
  c.require(paired_bootstrap_pvalue(a, a, MetricKind::accuracy, 1000, 1) == 1.0, "identical runs p != 1");
  RunResult good, bad;
  for (int i = 0; i < 200; ++i) {
    const int y = i % 2;
    good.rows.push_back({"x" + std::to_string(i), std::to_string(y), {y == 0 ? 0.9 : 0.1, y == 1 ? 0.9 : 0.1}});
    bad.rows.push_back({"x" + std::to_string(i), std::to_string(y), {y == 0 ? 0.1 : 0.9, y == 1 ? 0.1 : 0.9}});
  }
  const std::vector<RunResult> ga{good}, gb{bad};
  const double p = paired_bootstrap_pvalue(ga, gb, MetricKind::accuracy, 1000, 1);
  c.require(std::abs(p - 2.0 / 1001.0) < 1e-12, "separated runs p " + fmtd(p, 6));

  std::vector<int> y;
  std::vector<double> s;
  RunResult one;
  for (int i = 0; i < 60; ++i) {
    y.push_back(static_cast<int>(g.below(2)));
    s.push_back(std::round(g.uniform() * 10) / 10);
    one.rows.push_back({"x" + std::to_string(i), std::to_string(y.back()), {1.0 - s.back(), s.back()}});
  }
  const std::vector<RunResult> five(5, one);
  const double pooled = pooled_roc(five).auroc, single = auroc(y, s);
  c.require(pooled == single, "pooled ROC " + fmtd(pooled, 12) + " vs " + fmtd(single, 12));
  if (c.out.pass) c.out.detail = "coverage " + fmtd(coverage, 3) + ", separated p " + fmtd(p, 5);
  return c.out;
}

// ---- AC7 / AC8 shared corpus ----
struct ToyCorpus {
  fs::path dir, manifest, features;
  TaskSpec spec;
};

ToyCorpus toy_corpus(const fs::path& dir) {
  synth::ClassCorpusOptions o;
  o.n_classes = 5;
  o.per_class = 200;
  o.size = 64;
  o.seed = 7;
  o.noise = 1.0;  // enough that k=1 is not already perfect
  ToyCorpus t;
  t.dir = dir;
  t.manifest = synth::write_class_corpus(dir, o);
  t.features = dir / "features.fmfd";
  extract_features(read_manifest(t.manifest), *make_encoder("toy:seed=7,dim=32"), t.features);
  const nlohmann::json j = {{"task_id", "toy5"},      {"kind", "image_cls"},  {"manifest", "manifest.csv"},
                            {"metric", "accuracy"},   {"n_runs", 5},          {"n_bootstrap", 200},
                            {"train", {{"epochs", 30}}}};
  t.spec = parse_task_spec(j, dir, 0);
  return t;
}

Outcome ac7(const ToyCorpus& t) {
  Checker c;
  const auto res = fewshot_sweep(t.spec, t.features, default_k_values());
  std::string curve;
  double best = 0.0;
  for (const auto& p : res.points) {
    c.require(p.mean >= best - 0.02, "k=" + std::to_string(p.k) + " mean " + fmtd(p.mean) + " drops below " + fmtd(best));
    best = std::max(best, p.mean);
    curve += (curve.empty() ? "" : " ") + std::to_string(p.k) + ":" + fmtd(p.mean, 3);
  }
  c.require(res.points.back().k == 40 && res.points.back().mean >= 0.95, "k=40 mean " + fmtd(res.points.back().mean));
  if (c.out.pass) c.out.detail = curve;
  return c.out;
}

Outcome ac8(const ToyCorpus& t) {
  Checker c;
  TaskSpec spec = t.spec;
  spec.metric = "balanced_accuracy";
  const std::vector<std::string> shared{"c0", "c1", "c2", "c3", "c4"};
  auto b = read_manifest(t.manifest);
  std::erase_if(b.rows, [](const ManifestRow& r) { return r.split != Split::test; });
  write_manifest(b, t.dir / "paired_b.csv");
  const auto paired = crossmodal_eval(spec, t.features, t.dir / "paired_b.csv", t.features, shared);
  c.require(std::abs(paired.gap) < 1e-6, "paired gap " + fmtd(paired.gap, 9));

  synth::ClassCorpusOptions o;
  o.n_classes = 5;
  o.per_class = 1000;
  o.size = 16;
  o.seed = 8;
  o.prefix = "b";
  o.train_frac = 0.0;
  o.val_frac = 0.0;
  const fs::path bdir = t.dir / "unrelated";
  const auto bman = synth::write_class_corpus(bdir, o);
  std::vector<std::string> ids;
  for (const auto& r : read_manifest(bman).rows) ids.push_back(r.sample_id);
  synth::write_random_feature_dump(ids, 32, 2, 9, bdir / "features.fmfd");
  const auto unrelated = crossmodal_eval(spec, t.features, bman, bdir / "features.fmfd", shared);
  const double ood = unrelated.out_of_distribution.observed;
  c.require(std::abs(ood - 0.2) <= 0.03, "unrelated OOD balanced accuracy " + fmtd(ood));
  if (c.out.pass) c.out.detail = "paired gap " + fmtd(paired.gap, 9) + ", unrelated OOD " + fmtd(ood);
  return c.out;
}

// ---- AC9 ----
Outcome ac9() {
  Checker c;
  const auto cohort = synth::make_survival_cohort(200, 8, 4.0, 9);
  const TrainingSet tr = synth::cohort_training_set(cohort, Split::train);
  const TrainingSet va = synth::cohort_training_set(cohort, Split::val);
  HeadConfig cfg;
  cfg.kind = HeadKind::cls_linear;
  cfg.n_outputs = 1;
  TrainConfig tc;
  const TrainedHead h = train_cox_head(tr, va, cfg, tc);
  const auto risks = predict(h, va.inputs);
  std::vector<SurvivalRecord> recs;
  for (std::size_t i = 0; i < risks.size(); ++i)
    recs.push_back({"v" + std::to_string(i), va.times[i], va.events[i], risks[i]});
  const double ci = concordance_index(recs);
  c.require(ci >= 0.9, "validation c-index " + fmtd(ci));
  const auto thr = select_risk_threshold(recs);
  const auto [high, low] = split_by_risk(recs, thr.threshold);
  const double stat = logrank_statistic(high, low);
  c.require(stat > kChiSquare1Critical05, "log-rank " + fmtd(stat));
  c.require(std::abs(stat - oracle::logrank(high, low)) < 1e-9, "log-rank disagrees with oracle");
  if (c.out.pass)
    c.out.detail = "c-index " + fmtd(ci) + ", log-rank " + fmtd(stat, 2) + " (" + std::to_string(high.size()) + "/" +
                   std::to_string(low.size()) + ")";
  return c.out;
}

// ---- AC10 ----
int cli(const std::string& args) {
  const std::string cmd = std::string(FMBENCH_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      out[fs::relative(e.path(), dir).generic_string()] = std::string(std::istreambuf_iterator<char>(in), {});
    }
  return out;
}

// Every command, run under `root`. Paths stay relative to `root` so outputs
// that echo paths are comparable between the two trees.
std::string pipeline(const fs::path& root) {
  const std::string r = root.string() + "/";
  const std::vector<std::string> steps = {
      "synth classes --per-class 20 --out " + r + "c",
      "synth classes --masks --per-class 5 --out " + r + "m",
      "synth survival --per-class 60 --out " + r + "s",
      "synth registration --out " + r + "g",
      "extract --manifest " + r + "c/manifest.csv --encoder toy:seed=7,dim=32 --out " + r + "c/features.fmfd",
      "run --task " + r + "c/task.json --out " + r + "out/run_a",
      "run --task " + r + "c/task.json --seed 3 --out " + r + "out/run_b",
      "run --task " + r + "s/task.json --out " + r + "out/surv",
      "fewshot --task " + r + "c/task.json --k 1,2,5 --out " + r + "out/fs",
      "crossmodal --task-a " + r + "c/task.json --manifest-b " + r + "c/manifest.csv --features-b " + r +
          "c/features.fmfd --shared " + r + "shared.txt --out " + r + "out/cm",
      "register --fixed " + r + "g/fixed.fmfd --moving " + r + "g/moving.fmfd --labels " + r + "g/fixed_labels.json," + r +
          "g/moving_labels.json --out " + r + "out/registration.json",
      "promptseg --manifest " + r + "m/manifest.csv --prompt box --out " + r + "out/promptseg_box.json",
      "promptseg --manifest " + r + "m/manifest.csv --prompt point --out " + r + "out/promptseg_point.json",
      "compare --a " + r + "out/run_a --b " + r + "out/run_b --bootstrap 500 --out " + r + "cmp.json",
      "report --in " + r + "out --out " + r + "report",
  };
  fs::create_directories(root);
  std::ofstream(root / "shared.txt") << "c0\nc1\nc2\n";
  for (const auto& s : steps)
    if (cli(s) != 0) return "command failed: " + s.substr(0, s.find(' '));
  return "";
}

Outcome ac10(const fs::path& base) {
  Checker c;
  const std::string e1 = pipeline(base / "one"), e2 = pipeline(base / "two");
  c.require(e1.empty() && e2.empty(), e1.empty() ? e2 : e1);
  if (!c.out.pass) return c.out;
  auto strip = [](std::string s, const std::string& root) {
    for (std::size_t p; (p = s.find(root)) != std::string::npos;) s.replace(p, root.size(), "<root>");
    return s;
  };
  const auto a = tree(base / "one"), b = tree(base / "two");
  c.require(a.size() == b.size(), "different file sets");
  int svgs = 0, runs = 0;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    if (it == b.end()) {
      c.require(false, "missing " + k);
      continue;
    }
    // cmp.json records the run directories it read
    const bool same = strip(v, (base / "one").string()) == strip(it->second, (base / "two").string());
    c.require(same, "differs: " + k);
    svgs += k.ends_with(".svg");
    runs += k.find("/run_") != std::string::npos && k.ends_with(".csv");
  }
  if (c.out.pass)
    c.out.detail = std::to_string(a.size()) + " files identical (" + std::to_string(runs) + " run files, " +
                   std::to_string(svgs) + " SVGs)";
  return c.out;
}

}  // namespace

int main() {
  const fs::path base = fs::temp_directory_path() / ("fmbench_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(base);
  fs::create_directories(base);

  std::optional<ToyCorpus> toy;
  auto corpus = [&]() -> const ToyCorpus& {
    if (!toy) toy = toy_corpus(base / "toy");
    return *toy;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"metric oracle equivalence", ac1},
      {"gradient correctness", ac2},
      {"registration recovery", ac3},
      {"stdLogJ analytic cases", ac4},
      {"prompt law reproduction", ac5},
      {"statistics protocol", ac6},
      {"few-shot protocol", [&] { return ac7(corpus()); }},
      {"cross-modality harness", [&] { return ac8(corpus()); }},
      {"survival pipeline", ac9},
      {"determinism", [&] { return ac10(base / "cli"); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("AC%zu %s %s: %s [%.1fs]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(base, ec);
  return failed == 0 ? 0 : 1;
}
