#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmbench/encoder.hpp"
#include "fmbench/imaging.hpp"

namespace fmbench {

enum class HeadKind { cls_linear, patch_pool_linear, attention_pool, mask_pool_linear, mask_attention, mlp_regression };
enum class PoolMode { mean, max };

std::string head_kind_name(HeadKind k);
HeadKind parse_head_kind(const std::string& s);
std::string pool_mode_name(PoolMode m);
PoolMode parse_pool_mode(const std::string& s);

struct HeadConfig {
  HeadKind kind = HeadKind::cls_linear;
  std::optional<PoolMode> pooling;  // set iff kind is patch_pool_linear / mask_pool_linear
  int n_outputs = 1;
  int hidden_dim = 0;  // mlp_regression only

  bool uses_mask() const { return kind == HeadKind::mask_pool_linear || kind == HeadKind::mask_attention; }
  bool is_pooled() const { return kind == HeadKind::patch_pool_linear || kind == HeadKind::mask_pool_linear; }
  bool is_attention() const { return kind == HeadKind::attention_pool || kind == HeadKind::mask_attention; }
  void validate() const;
};

std::vector<double> default_lr_grid();

struct TrainConfig {
  std::vector<double> lr_grid = default_lr_grid();
  int epochs = 50;
  int batch_size = 256;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Objective { cross_entropy, mse, cox };
enum class Selection { accuracy, balanced_accuracy, neg_mse, c_index };

struct CandidateResult {
  double lr = 0.0;
  double val_score = 0.0;
  bool diverged = false;
};

struct TrainedHead {
  HeadConfig config;
  int input_dim = 0;
  std::vector<double> weights;
  double best_lr = 0.0;
  double val_score = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> epoch_losses;           // of the selected candidate
  std::vector<CandidateResult> candidates;    // one per lr in the grid
};

// Head input after the frozen-feature reduction: `count` rows of `dim` values.
// Linear and MLP heads see one pooled row; attention heads see every token of
// the region.
struct HeadSample {
  int count = 0;
  int dim = 0;
  std::vector<double> tokens;

  std::span<const double> row(int i) const {
    return {tokens.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
};

// Mean or componentwise max over all patch tokens, or over `region`.
std::vector<double> pool_tokens(const FeatureMap& map, PoolMode mode);
std::vector<double> pool_tokens(const FeatureMap& map, PoolMode mode, const PatchSet& region);

// Reduces one slice or a volume (list of slices) to the head's input. `masks`
// carries one patch set per slice for mask kinds and must be empty otherwise;
// slices whose set is empty are skipped. Volume pooling spans all slices'
// tokens; cls_linear and mlp_regression average the per-slice class tokens.
HeadSample prepare_head_input(std::span<const FeatureMap> slices, const HeadConfig& config,
                              std::span<const PatchSet> masks = {});

int parameter_count(const HeadConfig& config, int dim);
// Leading trainable entries; MLP heads append running normalisation statistics.
int trainable_count(const HeadConfig& config, int dim);
// Uniform in +-1/sqrt(fan_in) for matrices and the query, zero biases.
std::vector<double> init_weights(const HeadConfig& config, int dim, std::uint64_t seed);

// Inference-mode forward pass of one sample.
std::vector<double> head_output(const HeadConfig& config, std::span<const double> weights, const HeadSample& sample);

std::vector<double> head_forward(std::span<const FeatureMap> slices, const HeadConfig& config,
                                 std::span<const double> weights, std::span<const PatchSet> masks = {});

struct AttentionResult {
  std::vector<double> logits;
  std::vector<double> attention;  // one weight per token, on the simplex
  std::vector<double> pooled;     // attention-weighted value projection
};

AttentionResult attention_pool_forward(const HeadConfig& config, std::span<const double> weights,
                                       const HeadSample& sample);
// Attention over a single map's full grid (grid_h x grid_w, row-major).
AttentionResult attention_pool_forward(const FeatureMap& map, const HeadConfig& config,
                                       std::span<const double> weights);

// Targets aligned with `inputs`; only the field matching the objective is read.
struct TrainingSet {
  std::vector<HeadSample> inputs;
  std::vector<int> labels;       // cross_entropy
  std::vector<double> values;    // mse, row-major n x n_outputs
  std::vector<double> times;     // cox
  std::vector<int> events;       // cox

  std::size_t size() const { return inputs.size(); }
  TrainingSet subset(std::span<const std::size_t> indices) const;
};

// Training-mode objective on a batch (MLP normalisation uses batch
// statistics). Cox loss is normalised by the batch event count. When `grad` is
// non-empty it receives d loss / d weights.
double batch_loss(const HeadConfig& config, std::span<const double> weights, const TrainingSet& data,
                  std::span<const std::size_t> batch, Objective objective, std::span<double> grad = {});

double selection_score(const HeadConfig& config, std::span<const double> weights, const TrainingSet& data,
                       Selection selection);

// Fits one head per learning rate (SGD with momentum, cosine decay to zero)
// and keeps the best validation score; ties go to the smaller learning rate.
TrainedHead train_head(const TrainingSet& train, const TrainingSet& val, const HeadConfig& config,
                       const TrainConfig& tc, Objective objective, Selection selection);

// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over all
// trainable parameters, with central differences of step h.
inline constexpr double kGradientCheckFloor = 1e-6;
double gradient_check(const HeadConfig& config, std::span<const double> weights, const TrainingSet& data,
                      Objective objective, double h = 1e-4);

std::vector<double> predict(const TrainedHead& head, std::span<const HeadSample> inputs);

void write_trained_head(const TrainedHead& head, const std::filesystem::path& path);
TrainedHead read_trained_head(const std::filesystem::path& path);

}  // namespace fmbench
