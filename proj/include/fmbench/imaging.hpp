#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fmbench {

enum class Modality { CT, MR, SYNTH };

std::string modality_name(Modality m);
Modality parse_modality(const std::string& s);

// 3D intensity grid stored z-major: index = (z * height + y) * width + x.
struct RasterVolume {
  int depth = 0;
  int height = 0;
  int width = 0;
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};  // (z, y, x)
  Modality modality = Modality::SYNTH;
  std::string volume_id;
  std::vector<float> data;

  RasterVolume() = default;
  RasterVolume(int d, int h, int w, float fill = 0.0f)
      : depth(d), height(h), width(w), data(static_cast<std::size_t>(d) * h * w, fill) {}

  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * height + y) * width + x;
  }
  float& at(int z, int y, int x) { return data[index(z, y, x)]; }
  float at(int z, int y, int x) const { return data[index(z, y, x)]; }
  std::size_t size() const { return data.size(); }

  // Throws data/shape errors when the type invariants do not hold.
  void validate() const;
};

struct Slice2D {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // row-major (y, x)
  std::string volume_id;
  int z_index = 0;

  Slice2D() = default;
  Slice2D(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// Label grid; a 2D mask is a mask with depth 1. Label 0 is background.
struct LabelMask {
  int depth = 1;
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> data;
  std::map<int, std::string> label_names;

  LabelMask() = default;
  LabelMask(int d, int h, int w, std::int32_t fill = 0)
      : depth(d), height(h), width(w), data(static_cast<std::size_t>(d) * h * w, fill) {}

  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * height + y) * width + x;
  }
  std::int32_t& at(int z, int y, int x) { return data[index(z, y, x)]; }
  std::int32_t at(int z, int y, int x) const { return data[index(z, y, x)]; }
  std::int32_t& at(int y, int x) { return data[index(0, y, x)]; }
  std::int32_t at(int y, int x) const { return data[index(0, y, x)]; }

  LabelMask slice(int z) const;
  bool contains(int label) const;
};

struct PatchGrid {
  int resolution = 512;
  int patch_size = 16;

  // Throws shape error unless patch_size divides resolution.
  static PatchGrid make(int resolution, int patch_size);
  int grid_h() const { return resolution / patch_size; }
  int grid_w() const { return resolution / patch_size; }
  int cells() const { return grid_h() * grid_w(); }
};

// Sorted, unique row-major patch indices (row * grid_w + col).
using PatchSet = std::vector<int>;

enum class SliceAxis { z, y, x };
SliceAxis parse_slice_axis(const std::string& s);

// Reads NIfTI-1 (.nii/.nii.gz) or the raw-raster format (JSON sidecar + f32le
// payload). The raw-raster path may name either the .json sidecar or the .raw
// payload. NIfTI has no modality field; `nifti_modality` is used for it.
RasterVolume load_volume(const std::filesystem::path& path,
                         Modality nifti_modality = Modality::SYNTH);

// Format chosen by extension: .nii/.nii.gz write NIfTI-1 float32, anything
// else writes the raw-raster pair.
void write_volume(const RasterVolume& volume, const std::filesystem::path& path);

LabelMask load_label_volume(const std::filesystem::path& path);
RasterVolume label_mask_to_volume(const LabelMask& mask);

Slice2D extract_slice(const RasterVolume& volume, SliceAxis axis, int index);
LabelMask extract_mask_slice(const LabelMask& mask, SliceAxis axis, int index);

// Half-pixel-center bilinear resampling with edge clamping.
Slice2D resize_bilinear(const Slice2D& slice, int out_h, int out_w);
// Half-pixel-center nearest-neighbour resampling for 2D label masks.
LabelMask resize_nearest(const LabelMask& mask2d, int out_h, int out_w);

inline constexpr double kZScoreEpsilon = 1e-8;
Slice2D z_score_normalize(const Slice2D& slice);

// Clip to [center - width/2, center + width/2].
Slice2D apply_window(const Slice2D& slice, double center, double width);

struct PreprocessOptions {
  int resolution = 512;
  std::optional<std::pair<double, double>> window;  // (center, width)
};

// Windowing (if requested), resize to resolution x resolution, then z-score.
Slice2D preprocess_slice(const Slice2D& slice, const PreprocessOptions& options);

// Patches containing at least one pixel equal to `label`.
PatchSet mask_to_patch_mask(const LabelMask& mask2d, const PatchGrid& grid, int label);

// Slice indices drawn without replacement with probability proportional to the
// number of `label` pixels per slice. n is clamped to the eligible count.
std::vector<int> sample_slices_weighted(const RasterVolume& volume, const LabelMask& mask3d,
                                        int label, int n, std::uint64_t seed);

}  // namespace fmbench
