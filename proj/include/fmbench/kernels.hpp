#pragma once

// Data-parallel inner loops. Each kernel exists twice with identical
// signatures: kernels::serial is the reference implementation the tests hold
// the OpenMP version to, kernels::omp is what the library calls. Reductions are
// written to per-element buffers and summed serially by the caller, so both
// versions produce bit-identical results for any thread count.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "fmbench/common.hpp"

namespace fmbench::kernels {

struct GridDims {
  int z = 1;
  int y = 1;
  int x = 1;
  std::size_t cells() const { return static_cast<std::size_t>(z) * y * x; }
  std::size_t index(int zz, int yy, int xx) const { return (static_cast<std::size_t>(zz) * y + yy) * x + xx; }
  bool operator==(const GridDims&) const = default;
};

// One bootstrap replicate: draws from `rng`, returns the statistic and adds the
// number of redrawn resamples to `redraws`.
using ReplicateFn = std::function<double(SplitMix64& rng, long& redraws)>;

namespace serial {
// out[n, :] = W * patches[n, :] + bias, W is D x K row-major.
void project_patches(std::span<const double> patches, std::span<const float> weights,
                     std::span<const float> bias, int k, int d, std::span<double> out);

// Per-cell (1 - cosine) between unit-norm fixed features and moving features trilinearly sampled at cell +
// u(cell), and its gradient with respect to u. Features are N x D, u and grad are N x 3 in (z, y, x).
void similarity_terms(GridDims dims, int d, std::span<const float> fixed_unit, std::span<const float> moving,
                      std::span<const double> field, std::span<double> cell_loss, std::span<double> cell_grad);

// out(p) = src(p + disp(p)); trilinear, zero outside the grid. disp is N x 3 in voxels.
void warp_trilinear(GridDims dims, std::span<const float> src, std::span<const double> disp,
                    std::span<float> out);
// Nearest-neighbour variant for label grids.
void warp_nearest(GridDims dims, std::span<const std::int32_t> src, std::span<const double> disp,
                  std::span<std::int32_t> out);

// det(I + grad u) by central differences on interior voxels, in z-major interior order.
void jacobian_determinants(GridDims dims, std::span<const double> disp, std::span<double> out);

// For each unit-norm query row, the index of the most cosine-similar unit-norm target row (lowest index on
// ties) and the clamped score.
void best_cosine_match(std::span<const float> queries, std::span<const float> targets, int d,
                       std::span<int> best_index, std::span<double> best_score);

// out[b] = replicate(SplitMix64(mix_seed(seed, b))); returns total redraws.
long bootstrap_replicates(int replicates, std::uint64_t seed, const ReplicateFn& replicate,
                          std::span<double> out);
}  // namespace serial

namespace omp {
// out[n, :] = W * patches[n, :] + bias, W is D x K row-major.
void project_patches(std::span<const double> patches, std::span<const float> weights,
                     std::span<const float> bias, int k, int d, std::span<double> out);

// Per-cell (1 - cosine) between unit-norm fixed features and moving features trilinearly sampled at cell +
// u(cell), and its gradient with respect to u. Features are N x D, u and grad are N x 3 in (z, y, x).
void similarity_terms(GridDims dims, int d, std::span<const float> fixed_unit, std::span<const float> moving,
                      std::span<const double> field, std::span<double> cell_loss, std::span<double> cell_grad);

// out(p) = src(p + disp(p)); trilinear, zero outside the grid. disp is N x 3 in voxels.
void warp_trilinear(GridDims dims, std::span<const float> src, std::span<const double> disp,
                    std::span<float> out);
// Nearest-neighbour variant for label grids.
void warp_nearest(GridDims dims, std::span<const std::int32_t> src, std::span<const double> disp,
                  std::span<std::int32_t> out);

// det(I + grad u) by central differences on interior voxels, in z-major interior order.
void jacobian_determinants(GridDims dims, std::span<const double> disp, std::span<double> out);

// For each unit-norm query row, the index of the most cosine-similar unit-norm target row (lowest index on
// ties) and the clamped score.
void best_cosine_match(std::span<const float> queries, std::span<const float> targets, int d,
                       std::span<int> best_index, std::span<double> best_score);

// out[b] = replicate(SplitMix64(mix_seed(seed, b))); returns total redraws.
long bootstrap_replicates(int replicates, std::uint64_t seed, const ReplicateFn& replicate,
                          std::span<double> out);
}  // namespace omp

// Interior voxel count used by jacobian_determinants.
std::size_t interior_count(GridDims dims);

}  // namespace fmbench::kernels
