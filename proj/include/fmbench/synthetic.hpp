#pragma once

// Deterministic synthetic corpora for tests, the acceptance suite and demos.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fmbench/heads.hpp"
#include "fmbench/imaging.hpp"
#include "fmbench/manifest.hpp"
#include "fmbench/registration.hpp"
#include "fmbench/survival.hpp"

namespace fmbench::synth {

// 16 x 16 pattern of class `cls`, values in [-1, 1].
std::vector<double> class_pattern(int cls, std::uint64_t seed);

struct ClassCorpusOptions {
  int n_classes = 3;
  int per_class = 50;
  int size = 64;         // square image side
  double noise = 0.3;    // Gaussian pixel noise
  double train_frac = 0.6;
  double val_frac = 0.2;
  std::uint64_t seed = 0;
  Modality modality = Modality::SYNTH;
  bool with_masks = false;  // class pattern only inside a masked square
  std::string prefix = "img";
};

// Writes one raw-raster image (and mask) per item plus manifest.csv; labels are
// "c0", "c1", ...; every item is its own group. Returns the manifest path.
std::filesystem::path write_class_corpus(const std::filesystem::path& dir, const ClassCorpusOptions& options);

// Regression corpus: image = v * pattern_a + (1 - v) * pattern_b + noise, label = 100 v.
std::filesystem::path write_regression_corpus(const std::filesystem::path& dir, int n, int size, std::uint64_t seed);

struct CohortSubject {
  std::vector<double> features;
  double time = 0.0;
  int event = 0;
  Split split = Split::train;
};

// Exponential event times with log-hazard beta * features[0]; uniform
// censoring times. Splits 60/20/20 in order.
std::vector<CohortSubject> make_survival_cohort(int n, int dim, double beta, std::uint64_t seed);
TrainingSet cohort_training_set(const std::vector<CohortSubject>& cohort, Split split);

// Feature dump (grid 1 x 1, class token = patch token = features) and survival
// manifest for the CLI. Returns the manifest path; the dump is features.fmfd.
std::filesystem::path write_survival_corpus(const std::filesystem::path& dir, int n, int dim, double beta,
                                            std::uint64_t seed);

// Smooth analytic feature field sampled at p - shift (grid units, z y x).
FeatureVolume smooth_feature_volume(int depth, int height, int width, int dim, std::array<double, 3> shift,
                                    std::uint64_t seed);
// Spheres of the given radius, labels 1..n_labels, centred away from borders, shifted by `shift`.
LabelMask sphere_labels(int depth, int height, int width, int n_labels, double radius, std::array<double, 3> shift,
                        std::uint64_t seed);
// Per-slice feature maps of a volume (sample ids "<volume_id>@z").
std::vector<FeatureMap> volume_to_maps(const FeatureVolume& v);

// Random unit-free features for an existing manifest's sample ids.
void write_random_feature_dump(const std::vector<std::string>& sample_ids, int dim, int grid, std::uint64_t seed,
                               const std::filesystem::path& path);

}  // namespace fmbench::synth
