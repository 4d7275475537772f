#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fmbench/encoder.hpp"
#include "fmbench/feature_dump.hpp"
#include "fmbench/heads.hpp"
#include "fmbench/manifest.hpp"
#include "fmbench/prompts.hpp"
#include "fmbench/registration.hpp"
#include "fmbench/stats.hpp"
#include "fmbench/survival.hpp"
#include "json.hpp"

namespace fmbench {

// Seed from FMBENCH_SEED, else 0.
std::uint64_t default_seed();

enum class TaskKind { image_cls, mask_cls, volume_cls, regression, survival, registration, prompted_seg };
std::string task_kind_name(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

struct TaskSpec {
  std::string task_id;
  TaskKind kind = TaskKind::image_cls;
  std::filesystem::path manifest;
  std::string metric = "accuracy";  // accuracy | balanced_accuracy | auroc | r2 | rmse | c_index | dsc
  std::vector<std::string> classes;
  HeadConfig head;
  bool head_given = false;  // survival picks a default head when false
  TrainConfig train;
  int n_runs = 5;
  int n_bootstrap = 1000;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> features;

  bool is_classification() const;
  void validate() const;
};

// Relative paths resolve against the spec file's directory.
TaskSpec parse_task_spec(const nlohmann::json& j, const std::filesystem::path& base_dir, std::uint64_t seed);
TaskSpec read_task_spec(const std::filesystem::path& path, std::uint64_t seed);

// Encodes every manifest slice (whole-volume rows: every slice along the
// acquisition axis, ids "<sample_id>@z") and writes a feature dump.
void extract_features(const Manifest& manifest, const Encoder& encoder, const std::filesystem::path& out);

struct TaskItem {
  std::string sample_id;
  Split split = Split::train;
  std::string group_id;
  HeadSample input;
  std::string truth;  // class index, value, or "time;event"
  int label = -1;
  double value = 0.0;
  double time = 0.0;
  int event = 0;
};

// Holds a task's items and refuses access to test targets until
// unlock_test() is called after training and selection.
class SplitGuard {
 public:
  explicit SplitGuard(std::vector<TaskItem> items);

  std::vector<std::size_t> indices(Split s) const;
  std::vector<HeadSample> inputs(Split s) const;
  std::vector<std::string> sample_ids(Split s) const;
  // Inputs with targets; split-leakage error for the test split while locked.
  TrainingSet labelled(Split s) const;
  TrainingSet labelled(std::span<const std::size_t> indices) const;
  std::vector<std::string> truths(Split s) const;
  const TaskItem& item(std::size_t i) const;

  void unlock_test() { unlocked_ = true; }
  bool test_unlocked() const { return unlocked_; }
  std::size_t size() const { return items_.size(); }

 private:
  void check(Split s) const;
  std::vector<TaskItem> items_;
  bool unlocked_ = false;
};

// Effective head for the task: n_outputs filled in, defaults when the spec
// names none (classification cls_linear, regression MLP, survival pooled linear).
HeadConfig effective_head(const TaskSpec& spec, bool has_masks, int n_classes);

struct TaskData {
  SplitGuard guard;
  HeadConfig head;
  std::vector<std::string> classes;  // class index order
};

// filter: drop rows whose label is outside spec.classes. strict: such rows are
// a restriction error. none: they are a label error.
enum class LabelRestriction { none, filter, strict };

// Loads the task's manifest, checks group disjointness and feature coverage,
// and reduces every row to its head input.
TaskData load_task_data(const TaskSpec& spec, const FeatureDumpReader& features,
                        LabelRestriction restriction = LabelRestriction::none);

struct RunSummary {
  int run_id = 0;
  std::uint64_t seed = 0;
  double best_lr = 0.0;
  double val_score = 0.0;
  int n_train = 0;
};

struct SurvivalRunExtras {
  std::optional<RiskThreshold> threshold;  // chosen on validation risks
  std::optional<double> test_logrank;
  KaplanMeierCurve km_high, km_low;
};

struct TaskResult {
  TaskSpec spec;
  HeadConfig head;
  std::vector<RunResult> runs;
  std::vector<RunSummary> summaries;
  std::vector<SurvivalRunExtras> survival;
  MetricReport report;
  nlohmann::json to_json() const;
};

TaskResult run_task(const TaskSpec& spec, const std::filesystem::path& features);
// Writes run_<r>.csv, task_report.json and the task's plots into `out_dir`.
void write_task_outputs(const TaskResult& result, const std::filesystem::path& out_dir);

struct FewShotPoint {
  int k = 0;
  std::vector<double> values;  // test metric per run
  double mean = 0.0;
  double std = 0.0;            // population standard deviation over runs
  MetricReport report;
  std::vector<std::vector<std::string>> sampled_ids;  // per run, manifest order
};

struct FewShotResult {
  std::string task_id;
  std::string metric;
  std::vector<FewShotPoint> points;
  nlohmann::json to_json() const;
};

std::vector<int> default_k_values();
FewShotResult fewshot_sweep(const TaskSpec& spec, const std::filesystem::path& features, const std::vector<int>& k_values);

struct CrossModalResult {
  std::string task_id;
  std::string metric;
  MetricReport in_distribution;
  MetricReport out_of_distribution;
  double gap = 0.0;  // observed(A) - observed(B)
  std::vector<RunResult> runs_a, runs_b;
  nlohmann::json to_json() const;
};

// Head trained on modality A (rows outside `shared` dropped), evaluated on the
// A test split and on manifest B, whose labels must all lie in `shared`.
CrossModalResult crossmodal_eval(const TaskSpec& spec_a, const std::filesystem::path& features_a,
                                 const std::filesystem::path& manifest_b, const std::filesystem::path& features_b,
                                 const std::vector<std::string>& shared);

std::vector<std::string> read_class_list(const std::filesystem::path& path);

// Paired bootstrap between two run directories of the same task. The metric
// defaults to the one named in dir_a's task_report.json.
nlohmann::json compare_runs(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                            std::optional<MetricKind> metric, int n_bootstrap, std::uint64_t seed);

std::vector<RunResult> read_run_dir(const std::filesystem::path& dir);

// One volume of a feature dump (records ordered by z). An empty id requires
// the dump to hold a single volume.
FeatureVolume load_feature_volume(const std::filesystem::path& dump, const std::string& volume_id = "");

nlohmann::json to_json(const PairResult& r);
nlohmann::json to_json(const PromptEvalResult& r);

// Aggregates every task_report.json / fewshot.json / crossmodal.json /
// registration.json / promptseg.json under `in_dir` into out/report.json and
// deterministic SVG plots. Returns the report.
nlohmann::json report_emit(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir);

// Sorted keys, 2-space indent, trailing newline.
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace fmbench
