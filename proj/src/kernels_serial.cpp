#include "kernel_bodies.hpp"

namespace fmbench::kernels::serial {

void project_patches(std::span<const double> patches, std::span<const float> weights,
                     std::span<const float> bias, int k, int d, std::span<double> out) {
  const auto n = static_cast<std::int64_t>(patches.size() / k);
  for (std::int64_t i = 0; i < n; ++i)
    detail::project_one(static_cast<std::size_t>(i), patches, weights, bias, k, d, out);
}

void similarity_terms(GridDims dims, int d, std::span<const float> fixed_unit, std::span<const float> moving,
                      std::span<const double> field, std::span<double> cell_loss, std::span<double> cell_grad) {
  if (d > detail::kMaxFeatureDim) throw Error(ErrorKind::shape, "feature dimension exceeds kernel limit");
  const auto n = static_cast<std::int64_t>(dims.cells());
  for (std::int64_t i = 0; i < n; ++i)
    detail::similarity_one(static_cast<std::size_t>(i), dims, d, fixed_unit, moving, field, cell_loss, cell_grad);
}

void warp_trilinear(GridDims dims, std::span<const float> src, std::span<const double> disp,
                    std::span<float> out) {
  const auto n = static_cast<std::int64_t>(dims.cells());
  for (std::int64_t i = 0; i < n; ++i) detail::warp_trilinear_one(static_cast<std::size_t>(i), dims, src, disp, out);
}

void warp_nearest(GridDims dims, std::span<const std::int32_t> src, std::span<const double> disp,
                  std::span<std::int32_t> out) {
  const auto n = static_cast<std::int64_t>(dims.cells());
  for (std::int64_t i = 0; i < n; ++i) detail::warp_nearest_one(static_cast<std::size_t>(i), dims, src, disp, out);
}

void jacobian_determinants(GridDims dims, std::span<const double> disp, std::span<double> out) {
  if (dims.z < 3 || dims.y < 3 || dims.x < 3) return;
  const int iz = dims.z - 2, iy = dims.y - 2, ix = dims.x - 2;
  const auto n = static_cast<std::int64_t>(iz) * iy * ix;
  for (std::int64_t i = 0; i < n; ++i) {
    const int z = static_cast<int>(i / (static_cast<std::int64_t>(iy) * ix));
    const int y = static_cast<int>((i / ix) % iy);
    const int x = static_cast<int>(i % ix);
    out[static_cast<std::size_t>(i)] = detail::jacobian_one(z + 1, y + 1, x + 1, dims, disp);
  }
}

void best_cosine_match(std::span<const float> queries, std::span<const float> targets, int d,
                       std::span<int> best_index, std::span<double> best_score) {
  const auto n = static_cast<std::int64_t>(queries.size() / d);
  for (std::int64_t q = 0; q < n; ++q)
    detail::best_match_one(static_cast<std::size_t>(q), queries, targets, d, best_index, best_score);
}

long bootstrap_replicates(int replicates, std::uint64_t seed, const ReplicateFn& replicate,
                          std::span<double> out) {
  long redraws = 0;
  for (int b = 0; b < replicates; ++b) {
    SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(b)));
    long local = 0;
    out[static_cast<std::size_t>(b)] = replicate(rng, local);
    redraws += local;
  }
  return redraws;
}

}  // namespace fmbench::kernels::serial

namespace fmbench::kernels {

std::size_t interior_count(GridDims dims) {
  if (dims.z < 3 || dims.y < 3 || dims.x < 3) return 0;
  return static_cast<std::size_t>(dims.z - 2) * (dims.y - 2) * (dims.x - 2);
}

}  // namespace fmbench::kernels
