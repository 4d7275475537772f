#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fmbench/encoder.hpp"
#include "fmbench/imaging.hpp"
#include "fmbench/kernels.hpp"

namespace fmbench {

// Per-slice feature maps of one volume stacked along z.
struct FeatureVolume {
  EncoderDescriptor descriptor;
  int depth = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<float> class_tokens;  // Z x D
  std::vector<float> patch_tokens;  // Z x H x W x D
  std::string volume_id;

  int dim() const { return descriptor.embed_dim; }
  kernels::GridDims dims() const { return {depth, grid_h, grid_w}; }
  std::span<const float> class_token(int z) const;
  std::span<const float> patch_token(int z, int y, int x) const;

  // Maps must be ordered by z and share one descriptor.
  static FeatureVolume from_maps(std::span<const FeatureMap> maps);
  void validate() const;
};

struct RigidEstimate {
  int dz = 0;
  int dy = 0;  // patch units
  int dx = 0;
  double score = 0.0;  // mean patch-token cosine over the overlap at the estimate
  bool operator==(const RigidEstimate&) const = default;
};

// fixed[z, y, x] is compared with moving[z + dz, y + dy, x + dx]. dz searches
// |dz| <= depth / 2 on class tokens, then (dy, dx) searches |d| <= extent / 4 on
// patch tokens. Ties keep the smallest offset.
RigidEstimate rigid_align(const FeatureVolume& fixed, const FeatureVolume& moving);

inline constexpr int kMinRigidOverlap = 3;

// Displacement per feature-grid cell in grid units, ordered (dz, dy, dx):
// the moving volume is sampled at p + u(p).
struct DisplacementField {
  kernels::GridDims dims;
  std::vector<double> u;  // cells x 3

  static DisplacementField constant(kernels::GridDims dims, double dz, double dy, double dx);
  double mean_component(int axis) const;
  double mean_abs() const;  // mean of |u| (Euclidean) over cells
  double max_norm() const;
};

struct DeformableOptions {
  double reg_lambda = 1.0;
  int iters = 500;
  double step = 0.5;
  double momentum = 0.9;
  double tolerance = 1e-5;  // relative loss change over `window` iterations
  int window = 10;
};

struct DeformableResult {
  DisplacementField field;
  std::vector<double> losses;  // loss after each iteration (index 0 = initial)
  int iters_used = 0;
};

// Loss = mean(1 - cos) + reg_lambda * sum of squared forward differences / cells.
double deformable_loss(const FeatureVolume& fixed, const FeatureVolume& moving, const DisplacementField& field,
                       double reg_lambda, std::vector<double>* grad = nullptr);

DeformableResult deformable_register(const FeatureVolume& fixed, const FeatureVolume& moving,
                                     const RigidEstimate& init, const DeformableOptions& options = {});

// Trilinear (half-pixel) upsampling of a feature-grid field to voxels, scaled
// to voxel units: N_voxels x 3.
std::vector<double> upsample_field(const DisplacementField& field, kernels::GridDims voxels);

enum class Interpolation { trilinear, nearest };

// out(p) = src(p + disp(p)); disp in voxels, zero outside.
RasterVolume warp(const RasterVolume& volume, std::span<const double> disp);
LabelMask warp(const LabelMask& mask, std::span<const double> disp);

// Binary dice of `label` in both masks; both empty gives 1.
double dice(const LabelMask& a, const LabelMask& b, int label);
double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

struct JacobianStats {
  double std_log_j = 0.0;
  double folded_fraction = 0.0;
};

inline constexpr double kFoldThreshold = 1e-6;
JacobianStats std_log_jacobian(kernels::GridDims voxels, std::span<const double> disp);

struct KeypointMatch {
  int source_cell = 0;
  int target_cell = 0;
  double score = 0.0;
};

std::vector<KeypointMatch> keypoint_match(const FeatureMap& source, const FeatureMap& target, int n, std::uint64_t seed);

struct PcaProjection {
  std::vector<std::array<double, 3>> scores;      // all cells of all maps, in input order
  std::vector<std::vector<double>> components;    // up to 3 unit vectors of length D
  std::vector<std::vector<std::array<double, 3>>> rgb;  // per map, per cell, in [0, 1]
};

PcaProjection pca_rgb(std::span<const FeatureMap> maps);

struct RegistrationOptions {
  DeformableOptions deformable;
  bool rigid = true;
  bool deform = true;
};

struct PairResult {
  std::string fixed_id;
  std::string moving_id;
  RigidEstimate rigid;
  std::map<int, double> dsc_per_label;
  double mean_dsc = 0.0;
  double mean_dsc_before = 0.0;
  double std_log_j = 0.0;
  double folded_fraction = 0.0;
  int iters_used = 0;
  DisplacementField field;
};

// Full pipeline: rigid, deformable, upsample, warp the moving labels and score
// against the fixed labels. Label volumes need one slice per feature slice.
PairResult register_pair(const FeatureVolume& fixed, const FeatureVolume& moving, const LabelMask& fixed_labels,
                         const LabelMask& moving_labels, const RegistrationOptions& options = {});

}  // namespace fmbench
