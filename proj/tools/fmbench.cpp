// fmbench command-line front end.

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fmbench/bench.hpp"
#include "fmbench/common.hpp"
#include "fmbench/encoder.hpp"
#include "fmbench/feature_dump.hpp"
#include "fmbench/prompts.hpp"
#include "fmbench/registration.hpp"
#include "fmbench/report.hpp"
#include "fmbench/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fmbench;

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size()) throw Error(ErrorKind::config, "not an integer list: " + s);
    out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorKind::config, "empty integer list");
  return out;
}

std::uint64_t seed_or_default(const std::optional<std::uint64_t>& s) { return s ? *s : default_seed(); }

void print_summary(const MetricReport& r) {
  std::printf("%s observed %.4f point %.4f CI [%.4f, %.4f] (B=%d)\n", r.metric.c_str(), r.observed, r.point, r.ci_low,
              r.ci_high, r.n_bootstrap);
}

// ---- hidden plugin stand-ins used by tests and demos

int toy_plugin(std::uint64_t seed, int dim, const fs::path& list) {
  std::vector<FeatureMap> maps;
  for (const auto& e : read_plugin_list(list)) {
    const RasterVolume v = load_volume(e.sidecar);
    FeatureMap m = toy_encode(extract_slice(v, SliceAxis::z, 0), seed, dim);
    m.sample_id = e.sample_id;
    maps.push_back(std::move(m));
  }
  const fs::path out = list.parent_path() / "toy_plugin_out.fmfd";
  write_feature_dump(maps, out);
  std::cout << "encoded " << maps.size() << " slices\n" << out.string() << "\n";
  return 0;
}

int segment_plugin(const fs::path& image, const fs::path& prompt, const fs::path& out) {
  const RasterVolume v = load_volume(image);
  const Slice2D s = extract_slice(v, SliceAxis::z, 0);
  std::ifstream in(prompt);
  std::stringstream text;
  text << in.rdbuf();
  const auto mask = ReferenceSegmenter().segment(s, prompt_from_json(text.str()));
  RasterVolume m(1, s.height, s.width);
  for (std::size_t i = 0; i < mask.size(); ++i) m.data[i] = mask[i];
  write_volume(m, out);
  return 0;
}

void write_task_json(const fs::path& dir, const json& j) { write_json(j, dir / "task.json"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmbench: frozen-encoder evaluation harness"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;

  // extract
  auto* extract = app.add_subcommand("extract", "Encode every manifest slice into a feature dump");
  std::string ex_manifest, ex_encoder, ex_out;
  extract->add_option("--manifest", ex_manifest, "Imaging manifest CSV")->required();
  extract->add_option("--encoder", ex_encoder, "toy:seed=7,dim=64 or plugin:cmd=...,dim=...")->required();
  extract->add_option("--out", ex_out, "Output .fmfd")->required();

  // run
  auto* run = app.add_subcommand("run", "Train and evaluate a task over n_runs seeds");
  std::string run_task_path, run_features, run_out;
  run->add_option("--task", run_task_path, "Task spec JSON")->required();
  run->add_option("--features", run_features, "Feature dump (default: the spec's features key)");
  run->add_option("--out", run_out, "Output directory")->required();
  run->add_option("--seed", seed, "Base seed (default FMBENCH_SEED or 0)");

  // fewshot
  auto* fewshot = app.add_subcommand("fewshot", "Few-shot sweep over k items per class");
  std::string fs_task, fs_features, fs_k = "1,2,5,10,20,40", fs_out;
  fewshot->add_option("--task", fs_task, "Task spec JSON")->required();
  fewshot->add_option("--features", fs_features, "Feature dump");
  fewshot->add_option("--k", fs_k, "Comma-separated k values")->capture_default_str();
  fewshot->add_option("--out", fs_out, "Output directory for fewshot.json and fewshot.svg");
  fewshot->add_option("--seed", seed, "Base seed");

  // crossmodal
  auto* cross = app.add_subcommand("crossmodal", "Train on modality A, evaluate on A and B");
  std::string cm_task, cm_features_a, cm_manifest_b, cm_features_b, cm_shared, cm_out;
  cross->add_option("--task-a", cm_task, "Task spec JSON for modality A")->required();
  cross->add_option("--features-a", cm_features_a, "Feature dump for A (default: the spec's features key)");
  cross->add_option("--manifest-b", cm_manifest_b, "Manifest for modality B")->required();
  cross->add_option("--features-b", cm_features_b, "Feature dump for B")->required();
  cross->add_option("--shared", cm_shared, "Shared class list, one per line")->required();
  cross->add_option("--out", cm_out, "Output directory for crossmodal.json");
  cross->add_option("--seed", seed, "Base seed");

  // register
  auto* reg = app.add_subcommand("register", "Feature-based registration of two volumes");
  std::string rg_fixed, rg_moving, rg_labels, rg_out, rg_fixed_id, rg_moving_id;
  double rg_lambda = 1.0;
  int rg_iters = 500;
  bool rg_no_rigid = false, rg_no_deform = false;
  reg->add_option("--fixed", rg_fixed, "Feature dump of the fixed volume")->required();
  reg->add_option("--moving", rg_moving, "Feature dump of the moving volume")->required();
  reg->add_option("--labels", rg_labels, "FIXED_LABELS,MOVING_LABELS label volumes")->required();
  reg->add_option("--out", rg_out, "Output JSON")->required();
  reg->add_option("--fixed-id", rg_fixed_id, "Volume id inside the fixed dump");
  reg->add_option("--moving-id", rg_moving_id, "Volume id inside the moving dump");
  reg->add_option("--lambda", rg_lambda, "Smoothness weight")->capture_default_str();
  reg->add_option("--iters", rg_iters, "Maximum optimiser iterations")->capture_default_str();
  reg->add_flag("--no-rigid", rg_no_rigid, "Skip the rigid initialisation");
  reg->add_flag("--no-deform", rg_no_deform, "Rigid only");

  // promptseg
  auto* prompt = app.add_subcommand("promptseg", "Prompted segmentation with synthesised prompts");
  std::string ps_manifest, ps_segmenter = "reference", ps_kind = "box", ps_out;
  prompt->add_option("--manifest", ps_manifest, "Manifest with mask_path per row")->required();
  prompt->add_option("--segmenter", ps_segmenter, "'reference' or a command taking image prompt out")
      ->capture_default_str();
  prompt->add_option("--prompt", ps_kind, "box or point")->capture_default_str();
  prompt->add_option("--out", ps_out, "Output JSON");
  prompt->add_option("--seed", seed, "Prompt seed");

  // compare
  auto* compare = app.add_subcommand("compare", "Paired bootstrap between two run directories");
  std::string cp_a, cp_b, cp_metric, cp_out;
  int cp_boot = 1000;
  compare->add_option("--a", cp_a, "Run directory A")->required();
  compare->add_option("--b", cp_b, "Run directory B")->required();
  compare->add_option("--bootstrap", cp_boot, "Bootstrap replicates")->capture_default_str();
  compare->add_option("--metric", cp_metric, "Metric (default: from A's task_report.json)");
  compare->add_option("--out", cp_out, "Output JSON");
  compare->add_option("--seed", seed, "Bootstrap seed");

  // report
  auto* report = app.add_subcommand("report", "Aggregate results into report.json and SVG plots");
  std::string rp_in, rp_out;
  report->add_option("--in", rp_in, "Results directory")->required();
  report->add_option("--out", rp_out, "Output directory")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic demo corpus");
  std::string sy_kind, sy_out;
  int sy_classes = 3, sy_per_class = 50, sy_size = 64, sy_dim = 32;
  bool sy_masks = false;
  synth->add_option("kind", sy_kind, "classes | regression | survival | registration")->required();
  synth->add_option("--out", sy_out, "Output directory")->required();
  synth->add_option("--classes", sy_classes, "Number of classes")->capture_default_str();
  synth->add_option("--per-class", sy_per_class, "Items per class (or subjects)")->capture_default_str();
  synth->add_option("--size", sy_size, "Image side")->capture_default_str();
  synth->add_option("--dim", sy_dim, "Feature dimension")->capture_default_str();
  synth->add_flag("--masks", sy_masks, "Add region masks");
  synth->add_option("--seed", seed, "Corpus seed");

  auto* toy = app.add_subcommand("toy-plugin", "Encoder plugin stand-in");
  toy->group("");
  std::uint64_t tp_seed = 7;
  int tp_dim = 32;
  std::string tp_list;
  toy->add_option("--seed", tp_seed);
  toy->add_option("--dim", tp_dim);
  toy->add_option("list", tp_list)->required();

  auto* segp = app.add_subcommand("segment-plugin", "Segmenter plugin stand-in");
  segp->group("");
  std::string sp_image, sp_prompt, sp_out;
  segp->add_option("image", sp_image)->required();
  segp->add_option("prompt", sp_prompt)->required();
  segp->add_option("out", sp_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*extract) {
      const Manifest m = read_manifest(ex_manifest);
      const auto enc = make_encoder(ex_encoder);
      extract_features(m, *enc, ex_out);
      std::printf("wrote %s\n", ex_out.c_str());
    } else if (*run) {
      const TaskSpec spec = read_task_spec(run_task_path, seed_or_default(seed));
      fs::path features = run_features;
      if (features.empty()) {
        if (!spec.features) throw Error(ErrorKind::config, "no --features and no features key in the task spec");
        features = *spec.features;
      }
      const TaskResult res = run_task(spec, features);
      write_task_outputs(res, run_out);
      print_summary(res.report);
    } else if (*fewshot) {
      const TaskSpec spec = read_task_spec(fs_task, seed_or_default(seed));
      fs::path features = fs_features.empty() && spec.features ? *spec.features : fs::path(fs_features);
      if (features.empty()) throw Error(ErrorKind::config, "no --features and no features key in the task spec");
      const auto res = fewshot_sweep(spec, features, parse_int_list(fs_k));
      if (!fs_out.empty()) {
        write_json(res.to_json(), fs::path(fs_out) / "fewshot.json");
        svg::FewShotSeries s;
        for (const auto& p : res.points) {
          s.k.push_back(p.k);
          s.mean.push_back(p.mean);
          s.std.push_back(p.std);
        }
        svg::write_text(svg::fewshot_plot(s, res.metric, res.task_id), fs::path(fs_out) / "fewshot.svg");
      }
      for (const auto& p : res.points) std::printf("k=%d %s %.4f +- %.4f\n", p.k, res.metric.c_str(), p.mean, p.std);
    } else if (*cross) {
      const TaskSpec spec = read_task_spec(cm_task, seed_or_default(seed));
      fs::path fa = cm_features_a.empty() && spec.features ? *spec.features : fs::path(cm_features_a);
      if (fa.empty()) throw Error(ErrorKind::config, "no --features-a and no features key in the task spec");
      const auto res = crossmodal_eval(spec, fa, cm_manifest_b, cm_features_b, read_class_list(cm_shared));
      if (!cm_out.empty()) write_json(res.to_json(), fs::path(cm_out) / "crossmodal.json");
      print_summary(res.in_distribution);
      print_summary(res.out_of_distribution);
      std::printf("gap %.6f\n", res.gap);
    } else if (*reg) {
      const auto comma = rg_labels.find(',');
      if (comma == std::string::npos) throw Error(ErrorKind::config, "--labels takes FIXED_LABELS,MOVING_LABELS");
      const FeatureVolume fixed = load_feature_volume(rg_fixed, rg_fixed_id);
      const FeatureVolume moving = load_feature_volume(rg_moving, rg_moving_id);
      const LabelMask lf = load_label_volume(rg_labels.substr(0, comma));
      const LabelMask lm = load_label_volume(rg_labels.substr(comma + 1));
      RegistrationOptions opt;
      opt.deformable.reg_lambda = rg_lambda;
      opt.deformable.iters = rg_iters;
      opt.rigid = !rg_no_rigid;
      opt.deform = !rg_no_deform;
      const PairResult r = register_pair(fixed, moving, lf, lm, opt);
      write_json(to_json(r), rg_out);
      std::printf("mean DSC %.4f (before %.4f) stdLogJ %.4f\n", r.mean_dsc, r.mean_dsc_before, r.std_log_j);
    } else if (*prompt) {
      const Manifest m = read_manifest(ps_manifest);
      std::string spec = ps_segmenter;
      if (spec != "reference" && spec.rfind("plugin:", 0) != 0) spec = "plugin:" + spec;
      const auto seg = make_segmenter(spec);
      const auto res = evaluate_prompted(m, *seg, parse_prompt_kind(ps_kind), seed_or_default(seed));
      if (!ps_out.empty()) write_json(to_json(res), ps_out);
      std::printf("%s prompts: mean DSC %.4f over %zu instances (%d fallback)\n", ps_kind.c_str(), res.overall,
                  res.instances.size(), res.n_fallback);
    } else if (*compare) {
      std::optional<MetricKind> mk;
      if (!cp_metric.empty()) mk = parse_metric(cp_metric);
      const json j = compare_runs(cp_a, cp_b, mk, cp_boot, seed_or_default(seed));
      if (!cp_out.empty()) write_json(j, cp_out);
      std::printf("%s: A %.4f B %.4f p=%.4f\n", j["metric"].get<std::string>().c_str(), j["observed_a"].get<double>(),
                  j["observed_b"].get<double>(), j["p_value"].get<double>());
    } else if (*report) {
      const json j = report_emit(rp_in, rp_out);
      std::printf("report: %zu task(s), %zu plot(s)\n", j["tasks"].size(), j["plots"].size());
    } else if (*synth) {
      const std::uint64_t s = seed_or_default(seed);
      const fs::path out = sy_out;
      if (sy_kind == "classes") {
        synth::ClassCorpusOptions o;
        o.n_classes = sy_classes;
        o.per_class = sy_per_class;
        o.size = sy_size;
        o.seed = s;
        o.with_masks = sy_masks;
        synth::write_class_corpus(out, o);
        json t = {{"task_id", sy_masks ? "synthetic_masks" : "synthetic_classes"}, {"kind", sy_masks ? "mask_cls" : "image_cls"},
                  {"manifest", "manifest.csv"},     {"metric", "balanced_accuracy"},
                  {"features", "features.fmfd"},    {"train", {{"epochs", 30}}}};
        write_task_json(out, t);
      } else if (sy_kind == "regression") {
        synth::write_regression_corpus(out, sy_per_class, sy_size, s);
        write_task_json(out, {{"task_id", "synthetic_regression"}, {"kind", "regression"}, {"manifest", "manifest.csv"},
                              {"metric", "r2"}, {"features", "features.fmfd"}, {"train", {{"epochs", 30}}}});
      } else if (sy_kind == "survival") {
        synth::write_survival_corpus(out, sy_per_class, sy_dim, 4.0, s);
        write_task_json(out, {{"task_id", "synthetic_survival"}, {"kind", "survival"}, {"manifest", "survival.csv"},
                              {"metric", "c_index"}, {"features", "features.fmfd"}, {"train", {{"epochs", 30}}}});
      } else if (sy_kind == "registration") {
        const int z = 8, hw = sy_size / 4;
        const std::array<double, 3> none{0, 0, 0}, shift{0, 2, 0};
        const auto fixed = synth::smooth_feature_volume(z, hw, hw, sy_dim, none, s);
        const auto moving = synth::smooth_feature_volume(z, hw, hw, sy_dim, shift, s);
        auto fm = synth::volume_to_maps(fixed), mm = synth::volume_to_maps(moving);
        for (auto& m : fm) m.volume_id = "fixed";
        for (auto& m : mm) m.volume_id = "moving";
        fs::create_directories(out);
        write_feature_dump(fm, out / "fixed.fmfd");
        write_feature_dump(mm, out / "moving.fmfd");
        write_volume(label_mask_to_volume(synth::sphere_labels(z, hw, hw, 2, 3.0, none, s)), out / "fixed_labels.json");
        write_volume(label_mask_to_volume(synth::sphere_labels(z, hw, hw, 2, 3.0, shift, s)),
                     out / "moving_labels.json");
      } else {
        throw Error(ErrorKind::config, "unknown synth kind '" + sy_kind + "'");
      }
      std::printf("wrote %s corpus to %s\n", sy_kind.c_str(), sy_out.c_str());
    } else if (*toy) {
      return toy_plugin(tp_seed, tp_dim, tp_list);
    } else if (*segp) {
      return segment_plugin(sp_image, sp_prompt, sp_out);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fmbench: %s\n", e.what());
    return 2;
  }
  return 0;
}
