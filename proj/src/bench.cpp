#include "fmbench/bench.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fmbench/common.hpp"
#include "fmbench/report.hpp"

namespace fmbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": " + e.what());
  }
}

bool is_cls(TaskKind k) { return k == TaskKind::image_cls || k == TaskKind::mask_cls || k == TaskKind::volume_cls; }

void softmax_inplace(std::span<double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double& x : v) z += (x = std::exp(x - m));
  for (double& x : v) x /= z;
}

}  // namespace

std::uint64_t default_seed() {
  const char* env = std::getenv("FMBENCH_SEED");
  if (!env || !*env) return 0;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || *end != '\0' || env[0] == '-')
    throw Error(ErrorKind::config, std::string("FMBENCH_SEED is not a non-negative integer: ") + env);
  return v;
}

std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::image_cls: return "image_cls";
    case TaskKind::mask_cls: return "mask_cls";
    case TaskKind::volume_cls: return "volume_cls";
    case TaskKind::regression: return "regression";
    case TaskKind::survival: return "survival";
    case TaskKind::registration: return "registration";
    case TaskKind::prompted_seg: return "prompted_seg";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  for (auto k : {TaskKind::image_cls, TaskKind::mask_cls, TaskKind::volume_cls, TaskKind::regression,
                 TaskKind::survival, TaskKind::registration, TaskKind::prompted_seg})
    if (task_kind_name(k) == s) return k;
  throw Error(ErrorKind::config, "unknown task kind '" + s + "'");
}

bool TaskSpec::is_classification() const { return is_cls(kind); }

void TaskSpec::validate() const {
  if (task_id.empty()) throw Error(ErrorKind::config, "task_id is empty");
  if (n_runs < 1) throw Error(ErrorKind::config, "n_runs must be >= 1");
  if (n_bootstrap < 1) throw Error(ErrorKind::config, "n_bootstrap must be >= 1");
  bool ok = false;
  if (is_cls(kind)) ok = metric == "accuracy" || metric == "balanced_accuracy" || metric == "auroc";
  else if (kind == TaskKind::regression) ok = metric == "r2" || metric == "rmse";
  else if (kind == TaskKind::survival) ok = metric == "c_index";
  else ok = metric == "dsc";
  if (!ok) throw Error(ErrorKind::config, "metric '" + metric + "' does not fit task kind " + task_kind_name(kind));
  if (metric == "auroc" && !classes.empty() && classes.size() != 2)
    throw Error(ErrorKind::config, "auroc needs exactly two classes");
  std::set<std::string> uniq(classes.begin(), classes.end());
  if (uniq.size() != classes.size()) throw Error(ErrorKind::config, "duplicate class names");
  if (head_given) head.validate();
  train.validate();
}

TaskSpec parse_task_spec(const json& j, const fs::path& base_dir, std::uint64_t seed) {
  if (!j.is_object()) throw Error(ErrorKind::config, "task spec must be a JSON object");
  static const std::set<std::string> known = {"task_id", "kind",  "manifest",    "metric",   "classes", "head",
                                              "train",   "n_runs", "n_bootstrap", "features", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw Error(ErrorKind::config, "unknown task spec key '" + key + "'");
  TaskSpec s;
  try {
    s.task_id = j.at("task_id").get<std::string>();
    s.kind = parse_task_kind(j.at("kind").get<std::string>());
    s.manifest = base_dir / j.at("manifest").get<std::string>();
    s.metric = j.value("metric", is_cls(s.kind)                   ? std::string("accuracy")
                                 : s.kind == TaskKind::regression ? std::string("r2")
                                 : s.kind == TaskKind::survival   ? std::string("c_index")
                                                                  : std::string("dsc"));
    if (j.contains("classes")) s.classes = j.at("classes").get<std::vector<std::string>>();
    if (j.contains("head")) {
      const auto& h = j.at("head");
      s.head_given = true;
      s.head.kind = parse_head_kind(h.at("kind").get<std::string>());
      if (h.contains("pooling")) s.head.pooling = parse_pool_mode(h.at("pooling").get<std::string>());
      else if (s.head.is_pooled()) s.head.pooling = PoolMode::mean;
      s.head.hidden_dim = h.value("hidden_dim", s.head.kind == HeadKind::mlp_regression ? 64 : 0);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (t.contains("lr_grid")) s.train.lr_grid = t.at("lr_grid").get<std::vector<double>>();
      s.train.epochs = t.value("epochs", s.train.epochs);
      s.train.batch_size = t.value("batch_size", s.train.batch_size);
      s.train.momentum = t.value("momentum", s.train.momentum);
    }
    s.n_runs = j.value("n_runs", 5);
    s.n_bootstrap = j.value("n_bootstrap", 1000);
    s.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : seed;
    if (j.contains("features")) s.features = base_dir / j.at("features").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("task spec: ") + e.what());
  }
  s.train.seed = s.seed;
  s.validate();
  return s;
}

TaskSpec read_task_spec(const fs::path& path, std::uint64_t seed) {
  return parse_task_spec(read_json_file(path), path.parent_path(), seed);
}

// ---------------------------------------------------------------- extraction

void extract_features(const Manifest& manifest, const Encoder& encoder, const fs::path& out) {
  const auto& desc = encoder.descriptor();
  std::map<std::string, RasterVolume> cache;
  std::vector<Slice2D> slices;
  std::vector<std::string> ids;
  std::vector<std::string> volume_ids;
  for (const auto& row : manifest.rows) {
    const std::string key = manifest.resolve(row.volume_path).string();
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, load_volume(key, row.modality)).first;
    const RasterVolume& vol = it->second;
    const int n = row.acq_axis == SliceAxis::z ? vol.depth : row.acq_axis == SliceAxis::y ? vol.height : vol.width;
    std::vector<int> zs;
    if (row.z_index) {
      zs.push_back(*row.z_index);
    } else {
      for (int z = 0; z < n; ++z) zs.push_back(z);
    }
    for (int z : zs) {
      if (z < 0 || z >= n) throw Error(ErrorKind::shape, row.sample_id + ": slice index out of range");
      Slice2D sl = preprocess_slice(extract_slice(vol, row.acq_axis, z), {desc.input_resolution, row.window});
      sl.volume_id = row.volume_path;
      sl.z_index = z;
      slices.push_back(std::move(sl));
      ids.push_back(row.z_index ? row.sample_id : volume_slice_record_id(row.sample_id, z));
      volume_ids.push_back(row.sample_id);
    }
  }
  auto maps = encoder.encode_batch(slices);
  if (maps.size() != slices.size()) throw Error(ErrorKind::protocol, "encoder returned a wrong number of maps");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (!seen.insert(ids[i]).second) throw Error(ErrorKind::data, "duplicate record id " + ids[i]);
    maps[i].sample_id = ids[i];
    maps[i].volume_id = volume_ids[i];
    maps[i].z_index = slices[i].z_index;
  }
  write_feature_dump(maps, out, desc);
}

// ---------------------------------------------------------------- split guard

SplitGuard::SplitGuard(std::vector<TaskItem> items) : items_(std::move(items)) {}

void SplitGuard::check(Split s) const {
  if (s == Split::test && !unlocked_)
    throw Error(ErrorKind::split_leakage, "test-split targets requested before final evaluation");
}

std::vector<std::size_t> SplitGuard::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (items_[i].split == s) out.push_back(i);
  return out;
}

std::vector<HeadSample> SplitGuard::inputs(Split s) const {
  std::vector<HeadSample> out;
  for (const auto& it : items_)
    if (it.split == s) out.push_back(it.input);
  return out;
}

std::vector<std::string> SplitGuard::sample_ids(Split s) const {
  std::vector<std::string> out;
  for (const auto& it : items_)
    if (it.split == s) out.push_back(it.sample_id);
  return out;
}

TrainingSet SplitGuard::labelled(Split s) const {
  const auto idx = indices(s);
  return labelled(idx);
}

TrainingSet SplitGuard::labelled(std::span<const std::size_t> idx) const {
  TrainingSet t;
  for (std::size_t i : idx) {
    const TaskItem& it = items_.at(i);
    check(it.split);
    t.inputs.push_back(it.input);
    t.labels.push_back(it.label);
    t.values.push_back(it.value);
    t.times.push_back(it.time);
    t.events.push_back(it.event);
  }
  return t;
}

std::vector<std::string> SplitGuard::truths(Split s) const {
  check(s);
  std::vector<std::string> out;
  for (const auto& it : items_)
    if (it.split == s) out.push_back(it.truth);
  return out;
}

const TaskItem& SplitGuard::item(std::size_t i) const { return items_.at(i); }

// ---------------------------------------------------------------- loading

HeadConfig effective_head(const TaskSpec& spec, bool has_masks, int n_classes) {
  HeadConfig h = spec.head;
  if (!spec.head_given) {
    h = HeadConfig{};
    if (spec.kind == TaskKind::survival) {
      h.kind = has_masks ? HeadKind::mask_pool_linear : HeadKind::patch_pool_linear;
      h.pooling = PoolMode::mean;
    } else if (spec.kind == TaskKind::regression) {
      h.kind = HeadKind::mlp_regression;
      h.hidden_dim = 64;
    } else if (spec.kind == TaskKind::mask_cls) {
      h.kind = HeadKind::mask_pool_linear;
      h.pooling = PoolMode::mean;
    }
  }
  h.n_outputs = is_cls(spec.kind) ? n_classes : 1;
  if (is_cls(spec.kind) && h.kind == HeadKind::mlp_regression)
    throw Error(ErrorKind::config, "mlp_regression head on a classification task");
  h.validate();
  return h;
}

namespace {

struct RowSource {
  std::string sample_id;
  std::string record;  // feature lookup id
  Split split = Split::train;
  std::string group_id;
  std::string label;         // classification / regression
  double time = 0.0;         // survival
  int event = 0;
  fs::path mask_path;        // empty = none
  std::optional<int> mask_label;
  SliceAxis axis = SliceAxis::z;
};

// Dump records by base id for "<id>@z" names, ordered by z.
std::map<std::string, std::vector<std::pair<int, std::string>>> volume_index(const FeatureDumpReader& r) {
  std::map<std::string, std::vector<std::pair<int, std::string>>> out;
  for (const auto& id : r.sample_ids()) {
    const auto at = id.rfind('@');
    if (at == std::string::npos || at + 1 >= id.size()) continue;
    const std::string tail = id.substr(at + 1);
    if (!std::all_of(tail.begin(), tail.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
    out[id.substr(0, at)].emplace_back(std::stoi(tail), id);
  }
  for (auto& [_, v] : out) std::sort(v.begin(), v.end());
  return out;
}

std::vector<std::string> records_for(const std::string& id, const FeatureDumpReader& r,
                                     const std::map<std::string, std::vector<std::pair<int, std::string>>>& vi) {
  if (r.contains(id)) return {id};
  std::vector<std::string> out;
  if (auto it = vi.find(id); it != vi.end())
    for (const auto& [_, rec] : it->second) out.push_back(rec);
  return out;
}

class MaskCache {
 public:
  const LabelMask& get(const fs::path& p) {
    auto it = masks_.find(p.string());
    if (it == masks_.end()) it = masks_.emplace(p.string(), load_label_volume(p)).first;
    return it->second;
  }

 private:
  std::map<std::string, LabelMask> masks_;
};

PatchSet slice_patches(const LabelMask& mask3d, const RowSource& src, int z, const EncoderDescriptor& d) {
  LabelMask m = extract_mask_slice(mask3d, src.axis, z);
  int label = 1;
  if (src.mask_label) label = *src.mask_label;
  else
    for (auto& v : m.data) v = v != 0 ? 1 : 0;
  m = resize_nearest(m, d.input_resolution, d.input_resolution);
  try {
    return mask_to_patch_mask(m, PatchGrid::make(d.input_resolution, d.patch_size), label);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::empty_mask) return {};
    throw;
  }
}

HeadSample build_input(const RowSource& src, const std::vector<std::string>& records, const FeatureDumpReader& reader,
                       const HeadConfig& head, MaskCache& masks) {
  std::vector<FeatureMap> maps;
  for (const auto& rec : records) maps.push_back(reader.read(rec));
  std::vector<PatchSet> sets;
  if (head.uses_mask()) {
    if (src.mask_path.empty()) throw Error(ErrorKind::data, src.sample_id + ": mask head but no mask_path");
    const LabelMask& m3 = masks.get(src.mask_path);
    for (const auto& fm : maps) sets.push_back(slice_patches(m3, src, fm.z_index, reader.descriptor()));
  }
  try {
    return prepare_head_input(maps, head, sets);
  } catch (const Error& e) {
    throw Error(e.kind(), "sample " + src.sample_id + ": " + e.what());
  }
}

std::vector<RowSource> read_sources(const TaskSpec& spec) {
  std::vector<RowSource> out;
  if (spec.kind == TaskKind::survival) {
    const auto m = read_survival_manifest(spec.manifest);
    for (const auto& r : m.rows) {
      RowSource s;
      s.sample_id = r.subject_id;
      s.record = r.feature_ref;
      s.split = r.split;
      s.group_id = r.group_id;
      s.time = r.time_days;
      s.event = r.event;
      if (!r.mask_path.empty()) s.mask_path = m.base_dir / r.mask_path;
      s.mask_label = r.mask_label;
      out.push_back(std::move(s));
    }
  } else {
    const auto m = read_manifest(spec.manifest);
    for (const auto& r : m.rows) {
      RowSource s;
      s.sample_id = r.sample_id;
      s.record = r.sample_id;
      s.split = r.split;
      s.group_id = r.group_id;
      s.label = r.label;
      if (!r.mask_path.empty()) s.mask_path = m.resolve(r.mask_path);
      s.mask_label = r.mask_label;
      s.axis = r.acq_axis;
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace

TaskData load_task_data(const TaskSpec& spec, const FeatureDumpReader& reader, LabelRestriction restriction) {
  if (spec.kind == TaskKind::registration || spec.kind == TaskKind::prompted_seg)
    throw Error(ErrorKind::config, task_kind_name(spec.kind) + " tasks run through the register/promptseg commands");
  auto sources = read_sources(spec);

  std::vector<std::string> classes = spec.classes;
  if (is_cls(spec.kind)) {
    if (restriction != LabelRestriction::none) {
      std::set<std::string> allowed(classes.begin(), classes.end());
      std::vector<RowSource> kept;
      for (auto& s : sources) {
        if (allowed.count(s.label)) {
          kept.push_back(std::move(s));
        } else if (restriction == LabelRestriction::strict) {
          throw Error(ErrorKind::restriction, "class '" + s.label + "' of " + s.sample_id + " is not a shared class");
        }
      }
      sources = std::move(kept);
    }
    if (classes.empty()) {
      std::set<std::string> seen;
      for (const auto& s : sources)
        if (s.split != Split::test) seen.insert(s.label);
      classes.assign(seen.begin(), seen.end());
    }
    if (classes.size() < 2) throw Error(ErrorKind::class_error, "a classification task needs at least two classes");
    if (spec.metric == "auroc" && classes.size() != 2) throw Error(ErrorKind::config, "auroc needs exactly two classes");
  }
  if (sources.empty()) throw Error(ErrorKind::data, "task manifest has no usable rows");

  std::vector<std::pair<std::string, Split>> groups;
  for (const auto& s : sources) groups.emplace_back(s.group_id, s.split);
  check_group_disjoint(groups);

  // coverage first, so the error lists every absent id
  const auto vi = volume_index(reader);
  std::vector<std::vector<std::string>> records(sources.size());
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    records[i] = records_for(sources[i].record, reader, vi);
    if (records[i].empty()) missing.push_back(sources[i].record);
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " sample(s) absent from the feature dump:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw Error(ErrorKind::coverage, msg);
  }

  bool has_masks = false;
  for (const auto& s : sources) has_masks = has_masks || !s.mask_path.empty();
  TaskData out{SplitGuard({}), effective_head(spec, has_masks, static_cast<int>(classes.size())), classes};

  std::map<std::string, int> class_index;
  for (std::size_t c = 0; c < classes.size(); ++c) class_index[classes[c]] = static_cast<int>(c);

  MaskCache masks;
  std::vector<TaskItem> items;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& s = sources[i];
    if ((spec.kind == TaskKind::image_cls || spec.kind == TaskKind::mask_cls) && records[i].size() != 1)
      throw Error(ErrorKind::data, s.sample_id + " is a whole-volume row; use a volume_cls task");
    TaskItem it;
    it.sample_id = s.sample_id;
    it.split = s.split;
    it.group_id = s.group_id;
    if (is_cls(spec.kind)) {
      auto c = class_index.find(s.label);
      if (c == class_index.end())
        throw Error(ErrorKind::label, "label '" + s.label + "' of " + s.sample_id + " is not a task class");
      it.label = c->second;
      it.truth = std::to_string(it.label);
    } else if (spec.kind == TaskKind::regression) {
      std::size_t used = 0;
      try {
        it.value = std::stod(s.label, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != s.label.size() || !std::isfinite(it.value))
        throw Error(ErrorKind::data, s.sample_id + ": regression label '" + s.label + "' is not a number");
      it.truth = g17(it.value);
    } else {
      it.time = s.time;
      it.event = s.event;
      it.truth = g17(s.time) + ";" + std::to_string(s.event);
    }
    it.input = build_input(s, records[i], reader, out.head, masks);
    items.push_back(std::move(it));
  }
  out.guard = SplitGuard(std::move(items));
  return out;
}

// ---------------------------------------------------------------- training

namespace {

TrainedHead train_one(const TaskSpec& spec, const HeadConfig& head, const TrainingSet& train, const TrainingSet& val,
                      std::uint64_t seed) {
  TrainConfig tc = spec.train;
  tc.seed = seed;
  if (spec.kind == TaskKind::survival) return train_cox_head(train, val, head, tc);
  if (spec.kind == TaskKind::regression) return train_head(train, val, head, tc, Objective::mse, Selection::neg_mse);
  const Selection sel = spec.metric == "accuracy" ? Selection::accuracy : Selection::balanced_accuracy;
  return train_head(train, val, head, tc, Objective::cross_entropy, sel);
}

RunResult score_rows(int run_id, const TaskSpec& spec, const TrainedHead& head, const std::vector<HeadSample>& inputs,
                     const std::vector<std::string>& ids, const std::vector<std::string>& truths) {
  RunResult rr;
  rr.run_id = run_id;
  auto out = predict(head, inputs);
  const int n = head.config.n_outputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    RunRow row;
    row.sample_id = ids[i];
    row.truth = truths[i];
    row.scores.assign(out.begin() + static_cast<std::ptrdiff_t>(i * n), out.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    if (is_cls(spec.kind)) softmax_inplace(row.scores);
    rr.rows.push_back(std::move(row));
  }
  return rr;
}

std::vector<SurvivalRecord> survival_records(const SplitGuard& g, Split s, std::span<const double> risks) {
  std::vector<SurvivalRecord> out;
  const auto idx = g.indices(s);
  const auto data = g.labelled(idx);
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.push_back({g.item(idx[i]).sample_id, data.times[i], data.events[i], risks[i]});
  return out;
}

json km_json(const KaplanMeierCurve& c) {
  json a = json::array();
  for (const auto& s : c.steps) a.push_back({{"time", s.time}, {"survival", s.survival}, {"at_risk", s.at_risk}, {"events", s.events}});
  return a;
}

json head_json(const HeadConfig& h) {
  json j = {{"kind", head_kind_name(h.kind)}, {"n_outputs", h.n_outputs}, {"hidden_dim", h.hidden_dim}};
  j["pooling"] = h.pooling ? json(pool_mode_name(*h.pooling)) : json(nullptr);
  return j;
}

}  // namespace

TaskResult run_task(const TaskSpec& spec, const fs::path& features) {
  spec.validate();
  FeatureDumpReader reader(features);
  TaskData data = load_task_data(spec, reader);
  SplitGuard& g = data.guard;

  const TrainingSet train = g.labelled(Split::train);
  const TrainingSet val = g.labelled(Split::val);
  const auto test_inputs = g.inputs(Split::test);
  const auto test_ids = g.sample_ids(Split::test);
  if (test_inputs.empty()) throw Error(ErrorKind::data, "task has no test rows");

  TaskResult res;
  res.spec = spec;
  res.head = data.head;
  std::vector<TrainedHead> heads;
  std::vector<std::vector<double>> val_risks;
  for (int r = 0; r < spec.n_runs; ++r) {
    heads.push_back(train_one(spec, data.head, train, val, spec.seed + static_cast<std::uint64_t>(r)));
    res.summaries.push_back({r, spec.seed + static_cast<std::uint64_t>(r), heads.back().best_lr,
                             heads.back().val_score, static_cast<int>(train.size())});
    if (spec.kind == TaskKind::survival) {
      // threshold chosen on validation risks, before any test target is seen
      SurvivalRunExtras ex;
      const auto risks = predict(heads.back(), val.inputs);
      try {
        ex.threshold = select_risk_threshold(survival_records(g, Split::val, risks));
      } catch (const Error&) {
      }
      res.survival.push_back(std::move(ex));
    }
  }

  g.unlock_test();
  const auto truths = g.truths(Split::test);
  for (int r = 0; r < spec.n_runs; ++r) {
    res.runs.push_back(score_rows(r, spec, heads[r], test_inputs, test_ids, truths));
    if (spec.kind == TaskKind::survival && res.survival[r].threshold) {
      std::vector<double> risks;
      for (const auto& row : res.runs.back().rows) risks.push_back(row.scores[0]);
      const auto recs = survival_records(g, Split::test, risks);
      auto [high, low] = split_by_risk(recs, res.survival[r].threshold->threshold);
      auto& ex = res.survival[r];
      if (!high.empty()) ex.km_high = kaplan_meier(high);
      if (!low.empty()) ex.km_low = kaplan_meier(low);
      try {
        ex.test_logrank = logrank_statistic(high, low);
      } catch (const Error&) {
      }
    }
  }
  res.report = bootstrap_ci(res.runs, parse_metric(spec.metric), spec.n_bootstrap, spec.seed);
  return res;
}

json TaskResult::to_json() const {
  json j;
  j["type"] = "task";
  j["task_id"] = spec.task_id;
  j["kind"] = task_kind_name(spec.kind);
  j["metric"] = spec.metric;
  j["head"] = head_json(head);
  j["n_runs"] = static_cast<int>(runs.size());
  j["n_test_samples"] = runs.empty() ? 0 : static_cast<int>(runs[0].rows.size());
  j["report"] = fmbench::to_json(report);
  json rs = json::array();
  for (const auto& s : summaries)
    rs.push_back({{"run_id", s.run_id}, {"seed", s.seed}, {"best_lr", s.best_lr}, {"val_score", s.val_score},
                  {"n_train", s.n_train}});
  j["runs"] = rs;
  if (spec.is_classification() && head.n_outputs == 2) {
    const auto roc = pooled_roc(runs);
    json pts = json::array();
    for (const auto& p : roc.points) pts.push_back({p.fpr, p.tpr});
    j["roc"] = {{"auroc", roc.auroc}, {"points", pts}};
  }
  if (spec.kind == TaskKind::survival) {
    json sv = json::array();
    for (const auto& ex : survival) {
      json e;
      if (ex.threshold) {
        e["threshold"] = ex.threshold->threshold;
        e["val_logrank"] = ex.threshold->statistic;
      } else {
        e["threshold"] = nullptr;
        e["val_logrank"] = nullptr;
      }
      e["test_logrank"] = ex.test_logrank ? json(*ex.test_logrank) : json(nullptr);
      e["km_high"] = km_json(ex.km_high);
      e["km_low"] = km_json(ex.km_low);
      sv.push_back(e);
    }
    j["survival"] = sv;
  }
  return j;
}

void write_json(const json& j, const fs::path& path) {
  svg::write_text(j.dump(2) + "\n", path);
}

void write_task_outputs(const TaskResult& result, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  for (const auto& run : result.runs)
    write_run_results(std::span<const RunResult>(&run, 1), out_dir / ("run_" + std::to_string(run.run_id) + ".csv"));
  const json j = result.to_json();
  write_json(j, out_dir / "task_report.json");
  if (j.contains("roc")) svg::write_text(svg::roc_plot(pooled_roc(result.runs), result.spec.task_id), out_dir / "roc.svg");
  if (!result.survival.empty())
    svg::write_text(svg::km_plot({{"high risk", result.survival[0].km_high}, {"low risk", result.survival[0].km_low}},
                                 result.spec.task_id),
                    out_dir / "km.svg");
}

// ---------------------------------------------------------------- few-shot

std::vector<int> default_k_values() { return {1, 2, 5, 10, 20, 40}; }

FewShotResult fewshot_sweep(const TaskSpec& spec, const fs::path& features, const std::vector<int>& k_values) {
  spec.validate();
  if (!spec.is_classification()) throw Error(ErrorKind::config, "few-shot sweeps need a classification task");
  if (k_values.empty()) throw Error(ErrorKind::config, "no k values");
  for (int k : k_values)
    if (k < 1) throw Error(ErrorKind::config, "k values must be >= 1");
  FeatureDumpReader reader(features);
  TaskData data = load_task_data(spec, reader);
  SplitGuard& g = data.guard;

  // train labels are allowed; group train indices by class in manifest order
  const auto train_idx = g.indices(Split::train);
  const auto train_all = g.labelled(train_idx);
  const int n_classes = static_cast<int>(data.classes.size());
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < train_idx.size(); ++i) by_class[train_all.labels[i]].push_back(train_idx[i]);
  const int k_max = *std::max_element(k_values.begin(), k_values.end());
  for (int c = 0; c < n_classes; ++c)
    if (static_cast<int>(by_class[c].size()) < k_max)
      throw Error(ErrorKind::support, "class '" + data.classes[c] + "' has " + std::to_string(by_class[c].size()) +
                                          " training items, fewer than k=" + std::to_string(k_max));

  const TrainingSet val = g.labelled(Split::val);
  const auto test_inputs = g.inputs(Split::test);
  const auto test_ids = g.sample_ids(Split::test);
  if (test_inputs.empty()) throw Error(ErrorKind::data, "task has no test rows");

  FewShotResult res;
  res.task_id = spec.task_id;
  res.metric = spec.metric;
  std::vector<std::vector<TrainedHead>> heads;
  for (int k : k_values) {
    FewShotPoint pt;
    pt.k = k;
    heads.emplace_back();
    for (int r = 0; r < spec.n_runs; ++r) {
      const std::uint64_t seed = spec.seed + static_cast<std::uint64_t>(r);
      std::vector<std::size_t> chosen;
      for (int c = 0; c < n_classes; ++c) {
        auto pool = by_class[c];
        SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(c)));
        for (int i = 0; i < k; ++i) {
          const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
          std::swap(pool[i], pool[j]);
          chosen.push_back(pool[i]);
        }
      }
      std::sort(chosen.begin(), chosen.end());
      std::vector<std::string> ids;
      for (auto i : chosen) ids.push_back(g.item(i).sample_id);
      pt.sampled_ids.push_back(std::move(ids));
      heads.back().push_back(train_one(spec, data.head, g.labelled(chosen), val, seed));
    }
    res.points.push_back(std::move(pt));
  }

  g.unlock_test();
  const auto truths = g.truths(Split::test);
  const MetricKind mk = parse_metric(spec.metric);
  for (std::size_t p = 0; p < res.points.size(); ++p) {
    std::vector<RunResult> runs;
    for (int r = 0; r < spec.n_runs; ++r) {
      runs.push_back(score_rows(r, spec, heads[p][r], test_inputs, test_ids, truths));
      res.points[p].values.push_back(evaluate_metric(mk, runs.back()));
    }
    res.points[p].mean = mean_of(res.points[p].values);
    res.points[p].std = std_of(res.points[p].values);
    res.points[p].report = bootstrap_ci(runs, mk, spec.n_bootstrap, spec.seed);
  }
  return res;
}

json FewShotResult::to_json() const {
  json j;
  j["type"] = "fewshot";
  j["task_id"] = task_id;
  j["metric"] = metric;
  j["validation"] = "full validation split";
  json pts = json::array();
  for (const auto& p : points)
    pts.push_back({{"k", p.k}, {"values", p.values}, {"mean", p.mean}, {"std", p.std},
                   {"report", fmbench::to_json(p.report)}, {"sampled_ids", p.sampled_ids}});
  j["points"] = pts;
  return j;
}

// ---------------------------------------------------------------- cross-modality

std::vector<std::string> read_class_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t b = 0;
    while (b < line.size() && (line[b] == ' ' || line[b] == '\t')) ++b;
    line = line.substr(b);
    if (line.empty() || line[0] == '#') continue;
    if (!seen.insert(line).second) throw Error(ErrorKind::config, "duplicate class '" + line + "' in " + path.string());
    out.push_back(line);
  }
  if (out.size() < 2) throw Error(ErrorKind::class_error, path.string() + ": need at least two shared classes");
  return out;
}

CrossModalResult crossmodal_eval(const TaskSpec& spec_a, const fs::path& features_a, const fs::path& manifest_b,
                                 const fs::path& features_b, const std::vector<std::string>& shared) {
  if (!spec_a.is_classification()) throw Error(ErrorKind::config, "cross-modality evaluation needs a classification task");
  TaskSpec a = spec_a;
  a.classes = shared;
  a.validate();
  TaskSpec b = a;
  b.manifest = manifest_b;

  FeatureDumpReader reader_a(features_a);
  FeatureDumpReader reader_b(features_b);
  // both sides restricted before any training
  TaskData da = load_task_data(a, reader_a, LabelRestriction::filter);
  TaskData db = load_task_data(b, reader_b, LabelRestriction::strict);
  if (reader_a.descriptor().embed_dim != reader_b.descriptor().embed_dim)
    throw Error(ErrorKind::shape, "modality feature dimensions differ");

  const TrainingSet train = da.guard.labelled(Split::train);
  const TrainingSet val = da.guard.labelled(Split::val);
  std::vector<TrainedHead> heads;
  for (int r = 0; r < a.n_runs; ++r) heads.push_back(train_one(a, da.head, train, val, a.seed + static_cast<std::uint64_t>(r)));

  da.guard.unlock_test();
  db.guard.unlock_test();
  const Split b_split = db.guard.indices(Split::test).empty() ? Split::train : Split::test;
  std::vector<HeadSample> b_inputs;
  std::vector<std::string> b_ids, b_truths;
  for (std::size_t i = 0; i < db.guard.size(); ++i) {
    const auto& it = db.guard.item(i);
    if (b_split == Split::test && it.split != Split::test) continue;
    b_inputs.push_back(it.input);
    b_ids.push_back(it.sample_id);
    b_truths.push_back(it.truth);
  }
  const auto a_inputs = da.guard.inputs(Split::test);
  if (a_inputs.empty()) throw Error(ErrorKind::data, "modality A has no test rows");
  const auto a_ids = da.guard.sample_ids(Split::test);
  const auto a_truths = da.guard.truths(Split::test);

  CrossModalResult res;
  res.task_id = a.task_id;
  res.metric = a.metric;
  for (int r = 0; r < a.n_runs; ++r) {
    res.runs_a.push_back(score_rows(r, a, heads[r], a_inputs, a_ids, a_truths));
    res.runs_b.push_back(score_rows(r, a, heads[r], b_inputs, b_ids, b_truths));
  }
  const MetricKind mk = parse_metric(a.metric);
  res.in_distribution = bootstrap_ci(res.runs_a, mk, a.n_bootstrap, a.seed);
  res.out_of_distribution = bootstrap_ci(res.runs_b, mk, a.n_bootstrap, a.seed);
  res.gap = res.in_distribution.observed - res.out_of_distribution.observed;
  return res;
}

json CrossModalResult::to_json() const {
  return {{"type", "crossmodal"},
          {"task_id", task_id},
          {"metric", metric},
          {"in_distribution", fmbench::to_json(in_distribution)},
          {"out_of_distribution", fmbench::to_json(out_of_distribution)},
          {"gap", gap}};
}

// ---------------------------------------------------------------- compare

std::vector<RunResult> read_run_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::io, dir.string() + " is not a directory");
  std::vector<std::pair<long, fs::path>> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (!e.is_regular_file() || name.rfind("run_", 0) != 0 || e.path().extension() != ".csv") continue;
    const std::string num = name.substr(4, name.size() - 8);
    if (num.empty() || !std::all_of(num.begin(), num.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
    files.emplace_back(std::stol(num), e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::data, "no run_<r>.csv files in " + dir.string());
  std::vector<RunResult> runs;
  for (const auto& [_, p] : files)
    for (auto& r : read_run_results(p)) runs.push_back(std::move(r));
  return runs;
}

json compare_runs(const fs::path& dir_a, const fs::path& dir_b, std::optional<MetricKind> metric, int n_bootstrap,
                  std::uint64_t seed) {
  if (!metric) {
    const fs::path rep = dir_a / "task_report.json";
    if (!fs::exists(rep)) throw Error(ErrorKind::config, "no metric given and no task_report.json in " + dir_a.string());
    const json j = read_json_file(rep);
    if (!j.contains("metric") || !j["metric"].is_string()) throw Error(ErrorKind::format, rep.string() + ": no metric");
    metric = parse_metric(j["metric"].get<std::string>());
  }
  const auto a = read_run_dir(dir_a);
  const auto b = read_run_dir(dir_b);
  double ma = 0.0, mb = 0.0;
  for (const auto& r : a) ma += evaluate_metric(*metric, r);
  for (const auto& r : b) mb += evaluate_metric(*metric, r);
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  const double p = paired_bootstrap_pvalue(a, b, *metric, n_bootstrap, seed);
  return {{"type", "compare"},      {"metric", metric_name(*metric)}, {"a", dir_a.generic_string()},
          {"b", dir_b.generic_string()}, {"observed_a", ma},           {"observed_b", mb},
          {"difference", ma - mb},  {"p_value", p},                   {"n_bootstrap", n_bootstrap}};
}

// ---------------------------------------------------------------- registration / prompts

FeatureVolume load_feature_volume(const fs::path& dump, const std::string& volume_id) {
  auto maps = read_feature_dump(dump);
  std::set<std::string> vols;
  for (const auto& m : maps) vols.insert(m.volume_id);
  std::string want = volume_id;
  if (want.empty()) {
    if (vols.size() != 1)
      throw Error(ErrorKind::data, dump.string() + " holds " + std::to_string(vols.size()) + " volumes; name one");
    want = *vols.begin();
  }
  std::vector<FeatureMap> sel;
  for (auto& m : maps)
    if (m.volume_id == want) sel.push_back(std::move(m));
  if (sel.empty()) throw Error(ErrorKind::coverage, "volume '" + want + "' absent from " + dump.string());
  std::stable_sort(sel.begin(), sel.end(), [](const FeatureMap& x, const FeatureMap& y) { return x.z_index < y.z_index; });
  auto v = FeatureVolume::from_maps(sel);
  v.volume_id = want;
  return v;
}

json to_json(const PairResult& r) {
  json per = json::object();
  for (const auto& [label, d] : r.dsc_per_label) per[std::to_string(label)] = d;
  return {{"type", "registration"},
          {"fixed_id", r.fixed_id},
          {"moving_id", r.moving_id},
          {"dz", r.rigid.dz},
          {"dy", r.rigid.dy},
          {"dx", r.rigid.dx},
          {"rigid_score", r.rigid.score},
          {"dsc_per_label", per},
          {"mean_dsc", r.mean_dsc},
          {"mean_dsc_before", r.mean_dsc_before},
          {"stdlogj", r.std_log_j},
          {"folded_fraction", r.folded_fraction},
          {"iters_used", r.iters_used},
          {"mean_displacement",
           {r.field.mean_component(0), r.field.mean_component(1), r.field.mean_component(2)}}};
}

json to_json(const PromptEvalResult& r) {
  json inst = json::array();
  for (const auto& i : r.instances)
    inst.push_back({{"sample_id", i.sample_id},
                    {"label", i.label},
                    {"prompt", json::parse(prompt_to_json(i.prompt))},
                    {"fallback", i.fallback},
                    {"dsc", i.dsc}});
  json per = json::object();
  for (const auto& [label, d] : r.per_label) per[std::to_string(label)] = d;
  return {{"type", "promptseg"}, {"prompt", prompt_kind_name(r.kind)}, {"per_label", per},
          {"overall", r.overall},  {"n_fallback", r.n_fallback},        {"instances", inst}};
}

// ---------------------------------------------------------------- report

namespace {

// "<prefix><sanitised id>.svg", numbered on collision.
std::string plot_name(const std::string& prefix, const std::string& id, std::set<std::string>& used) {
  std::string s = prefix;
  for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  if (s == prefix) s += "task";
  std::string out = s + ".svg";
  for (int n = 2; !used.insert(out).second; ++n) out = s + "_" + std::to_string(n) + ".svg";
  return out;
}

template <class T>
T field(const json& j, const char* key, const std::string& src) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, src + ": bad or missing '" + key + "': " + e.what());
  }
}

KaplanMeierCurve km_from_json(const json& a, const std::string& src) {
  KaplanMeierCurve c;
  if (!a.is_array()) throw Error(ErrorKind::format, src + ": KM curve is not an array");
  for (const auto& s : a)
    c.steps.push_back({field<double>(s, "time", src), field<double>(s, "survival", src), field<int>(s, "at_risk", src),
                       field<int>(s, "events", src)});
  return c;
}

}  // namespace

json report_emit(const fs::path& in_dir, const fs::path& out_dir) {
  if (!fs::is_directory(in_dir)) throw Error(ErrorKind::io, in_dir.string() + " is not a directory");
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& e : fs::recursive_directory_iterator(in_dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    files.emplace_back(fs::relative(e.path(), in_dir).generic_string(), e.path());
  }
  std::sort(files.begin(), files.end());

  json tasks = json::array(), fewshots = json::array(), cross = json::array(), regs = json::array(),
       prompts = json::array(), comps = json::array();
  std::vector<svg::Bar> bars;
  std::vector<std::pair<std::string, std::string>> plots;  // name, svg
  std::set<std::string> used;
  long n_runs = 0, n_test = 0;
  std::string bar_metric;

  for (const auto& [rel, path] : files) {
    const json j = read_json_file(path);
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) continue;
    const std::string type = j["type"].get<std::string>();
    if (type == "task") {
      const auto& rep = j.at("report");
      json t = {{"source", rel},
                {"task_id", field<std::string>(j, "task_id", rel)},
                {"kind", field<std::string>(j, "kind", rel)},
                {"metric", field<std::string>(j, "metric", rel)},
                {"observed", field<double>(rep, "observed", rel)},
                {"point", field<double>(rep, "point", rel)},
                {"ci_low", field<double>(rep, "ci_low", rel)},
                {"ci_high", field<double>(rep, "ci_high", rel)},
                {"n_runs", field<int>(j, "n_runs", rel)},
                {"n_test_samples", field<int>(j, "n_test_samples", rel)}};
      n_runs += t["n_runs"].get<int>();
      n_test += t["n_test_samples"].get<int>();
      const std::string id = t["task_id"];
      bars.push_back({id, t["point"], t["ci_low"], t["ci_high"]});
      bar_metric = bar_metric.empty() || bar_metric == t["metric"] ? t["metric"].get<std::string>() : "score";
      if (j.contains("roc")) {
        RocCurve c;
        c.auroc = field<double>(j["roc"], "auroc", rel);
        for (const auto& p : j["roc"].at("points")) c.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        plots.emplace_back(plot_name("roc_", id, used), svg::roc_plot(c, id));
      }
      if (j.contains("survival") && !j["survival"].empty()) {
        const auto& s0 = j["survival"][0];
        plots.emplace_back(plot_name("km_", id, used), svg::km_plot({{"high risk", km_from_json(s0.at("km_high"), rel)},
                                                                 {"low risk", km_from_json(s0.at("km_low"), rel)}},
                                                                id));
      }
      tasks.push_back(t);
    } else if (type == "fewshot") {
      svg::FewShotSeries s;
      for (const auto& p : j.at("points")) {
        s.k.push_back(field<int>(p, "k", rel));
        s.mean.push_back(field<double>(p, "mean", rel));
        s.std.push_back(field<double>(p, "std", rel));
      }
      const std::string id = field<std::string>(j, "task_id", rel);
      fewshots.push_back({{"source", rel}, {"task_id", id}, {"metric", field<std::string>(j, "metric", rel)},
                          {"k", s.k}, {"mean", s.mean}, {"std", s.std}});
      plots.emplace_back(plot_name("fewshot_", id, used),
                         svg::fewshot_plot(s, j["metric"].get<std::string>(), id));
    } else if (type == "crossmodal") {
      cross.push_back({{"source", rel},
                       {"task_id", field<std::string>(j, "task_id", rel)},
                       {"metric", field<std::string>(j, "metric", rel)},
                       {"in_distribution", field<double>(j.at("in_distribution"), "observed", rel)},
                       {"out_of_distribution", field<double>(j.at("out_of_distribution"), "observed", rel)},
                       {"gap", field<double>(j, "gap", rel)}});
    } else if (type == "registration") {
      regs.push_back({{"source", rel},
                      {"fixed_id", field<std::string>(j, "fixed_id", rel)},
                      {"moving_id", field<std::string>(j, "moving_id", rel)},
                      {"mean_dsc", field<double>(j, "mean_dsc", rel)},
                      {"mean_dsc_before", field<double>(j, "mean_dsc_before", rel)},
                      {"stdlogj", field<double>(j, "stdlogj", rel)}});
    } else if (type == "promptseg") {
      prompts.push_back({{"source", rel},
                         {"prompt", field<std::string>(j, "prompt", rel)},
                         {"overall", field<double>(j, "overall", rel)},
                         {"n_instances", static_cast<int>(j.at("instances").size())}});
    } else if (type == "compare") {
      comps.push_back({{"source", rel},
                       {"metric", field<std::string>(j, "metric", rel)},
                       {"difference", field<double>(j, "difference", rel)},
                       {"p_value", field<double>(j, "p_value", rel)}});
    }
  }
  if (!bars.empty()) plots.emplace(plots.begin(), plot_name("", "tasks", used), svg::bar_plot(bars, bar_metric, "tasks"));

  json report;
  report["type"] = "report";
  report["tasks"] = tasks;
  report["fewshot"] = fewshots;
  report["crossmodal"] = cross;
  report["registration"] = regs;
  report["promptseg"] = prompts;
  report["comparisons"] = comps;
  report["totals"] = {{"n_tasks", static_cast<long>(tasks.size())}, {"n_runs", n_runs}, {"n_test_samples", n_test}};
  json names = json::array();
  for (const auto& [name, _] : plots) names.push_back(name);
  report["plots"] = names;

  fs::create_directories(out_dir);
  for (const auto& [name, text] : plots) svg::write_text(text, out_dir / name);
  write_json(report, out_dir / "report.json");
  return report;
}

}  // namespace fmbench
