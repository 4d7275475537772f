#pragma once

// Per-element bodies shared by the serial and OpenMP kernel loops.

#include <algorithm>
#include <array>
#include <cmath>

#include "fmbench/kernels.hpp"

namespace fmbench::kernels::detail {

// similarity_terms keeps per-cell scratch on the stack.
inline constexpr int kMaxFeatureDim = 2048;

inline void project_one(std::size_t n, std::span<const double> patches, std::span<const float> weights,
                        std::span<const float> bias, int k, int d, std::span<double> out) {
  const double* p = patches.data() + n * k;
  double* o = out.data() + n * d;
  for (int j = 0; j < d; ++j) {
    const float* w = weights.data() + static_cast<std::size_t>(j) * k;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) acc += static_cast<double>(w[i]) * p[i];
    o[j] = acc + bias[j];
  }
}

// Linear interpolation taps along one axis at continuous position p, clamped
// to [0, n-1]. deriv is 0 where the position was clamped.
struct AxisTaps {
  int i0 = 0;
  int i1 = 0;
  double t = 0.0;
  double deriv = 0.0;
};

inline AxisTaps clamped_taps(double p, int n) {
  AxisTaps a;
  if (n == 1) return a;
  bool clamped = false;
  if (p <= 0.0) {
    p = 0.0;
    clamped = true;
  } else if (p >= n - 1) {
    p = n - 1;
    clamped = true;
  }
  a.i0 = std::min(static_cast<int>(std::floor(p)), n - 2);
  a.i1 = a.i0 + 1;
  a.t = p - a.i0;
  a.deriv = clamped ? 0.0 : 1.0;
  return a;
}

inline void similarity_one(std::size_t cell, GridDims dims, int d, std::span<const float> fixed_unit,
                           std::span<const float> moving, std::span<const double> field,
                           std::span<double> cell_loss, std::span<double> cell_grad) {
  const int plane = dims.y * dims.x;
  const int z = static_cast<int>(cell / plane);
  const int y = static_cast<int>((cell % plane) / dims.x);
  const int x = static_cast<int>(cell % dims.x);
  const double* u = field.data() + 3 * cell;
  const AxisTaps az = clamped_taps(z + u[0], dims.z);
  const AxisTaps ay = clamped_taps(y + u[1], dims.y);
  const AxisTaps ax = clamped_taps(x + u[2], dims.x);

  // Sampled feature m and dm/d(z,y,x), accumulated over the 8 corners.
  std::array<double, kMaxFeatureDim> m, mz, my, mx;
  std::fill_n(m.begin(), d, 0.0);
  std::fill_n(mz.begin(), d, 0.0);
  std::fill_n(my.begin(), d, 0.0);
  std::fill_n(mx.begin(), d, 0.0);
  for (int cz = 0; cz < 2; ++cz) {
    const int iz = cz ? az.i1 : az.i0;
    const double wz = cz ? az.t : 1.0 - az.t;
    const double dz = cz ? az.deriv : -az.deriv;
    for (int cy = 0; cy < 2; ++cy) {
      const int iy = cy ? ay.i1 : ay.i0;
      const double wy = cy ? ay.t : 1.0 - ay.t;
      const double dy = cy ? ay.deriv : -ay.deriv;
      for (int cx = 0; cx < 2; ++cx) {
        const int ix = cx ? ax.i1 : ax.i0;
        const double wx = cx ? ax.t : 1.0 - ax.t;
        const double dx = cx ? ax.deriv : -ax.deriv;
        const float* f = moving.data() + dims.index(iz, iy, ix) * d;
        const double w = wz * wy * wx, gz = dz * wy * wx, gy = wz * dy * wx, gx = wz * wy * dx;
        for (int j = 0; j < d; ++j) {
          m[j] += w * f[j];
          mz[j] += gz * f[j];
          my[j] += gy * f[j];
          mx[j] += gx * f[j];
        }
      }
    }
  }
  const float* fu = fixed_unit.data() + cell * d;
  double dot = 0.0, norm2 = 0.0;
  for (int j = 0; j < d; ++j) {
    dot += fu[j] * m[j];
    norm2 += m[j] * m[j];
  }
  double* g = cell_grad.data() + 3 * cell;
  if (norm2 < 1e-24) {
    cell_loss[cell] = 1.0;
    g[0] = g[1] = g[2] = 0.0;
    return;
  }
  const double norm = std::sqrt(norm2);
  const double cosine = dot / norm;
  cell_loss[cell] = 1.0 - cosine;
  // d(1 - cos)/dm = -(f/|m| - cos * m / |m|^2)
  double gz = 0.0, gy = 0.0, gx = 0.0;
  for (int j = 0; j < d; ++j) {
    const double dc = fu[j] / norm - cosine * m[j] / norm2;
    gz -= dc * mz[j];
    gy -= dc * my[j];
    gx -= dc * mx[j];
  }
  g[0] = gz;
  g[1] = gy;
  g[2] = gx;
}

// Corner taps for an unclamped position; valid = false outside [0, n-1].
inline bool inside_taps(double p, int n, AxisTaps& a) {
  if (!(p >= 0.0) || p > n - 1) return false;
  if (n == 1) {
    a = AxisTaps{};
    return true;
  }
  a.i0 = std::min(static_cast<int>(std::floor(p)), n - 2);
  a.i1 = a.i0 + 1;
  a.t = p - a.i0;
  return true;
}

inline void warp_trilinear_one(std::size_t v, GridDims dims, std::span<const float> src,
                               std::span<const double> disp, std::span<float> out) {
  const int plane = dims.y * dims.x;
  const int z = static_cast<int>(v / plane);
  const int y = static_cast<int>((v % plane) / dims.x);
  const int x = static_cast<int>(v % dims.x);
  const double* u = disp.data() + 3 * v;
  AxisTaps az, ay, ax;
  if (!inside_taps(z + u[0], dims.z, az) || !inside_taps(y + u[1], dims.y, ay) ||
      !inside_taps(x + u[2], dims.x, ax)) {
    out[v] = 0.0f;
    return;
  }
  double acc = 0.0;
  for (int cz = 0; cz < 2; ++cz) {
    const double wz = cz ? az.t : 1.0 - az.t;
    if (wz == 0.0) continue;
    for (int cy = 0; cy < 2; ++cy) {
      const double wy = cy ? ay.t : 1.0 - ay.t;
      if (wy == 0.0) continue;
      for (int cx = 0; cx < 2; ++cx) {
        const double wx = cx ? ax.t : 1.0 - ax.t;
        if (wx == 0.0) continue;
        acc += wz * wy * wx * src[dims.index(cz ? az.i1 : az.i0, cy ? ay.i1 : ay.i0, cx ? ax.i1 : ax.i0)];
      }
    }
  }
  out[v] = static_cast<float>(acc);
}

inline void warp_nearest_one(std::size_t v, GridDims dims, std::span<const std::int32_t> src,
                             std::span<const double> disp, std::span<std::int32_t> out) {
  const int plane = dims.y * dims.x;
  const int z = static_cast<int>(v / plane);
  const int y = static_cast<int>((v % plane) / dims.x);
  const int x = static_cast<int>(v % dims.x);
  const double* u = disp.data() + 3 * v;
  const double pz = std::floor(z + u[0] + 0.5), py = std::floor(y + u[1] + 0.5), px = std::floor(x + u[2] + 0.5);
  if (!(pz >= 0 && pz < dims.z && py >= 0 && py < dims.y && px >= 0 && px < dims.x)) {
    out[v] = 0;
    return;
  }
  out[v] = src[dims.index(static_cast<int>(pz), static_cast<int>(py), static_cast<int>(px))];
}

inline double jacobian_one(int z, int y, int x, GridDims dims, std::span<const double> disp) {
  // m[a][b] = d u_a / d x_b, axes (z, y, x)
  double m[3][3];
  const std::size_t nb[3][2] = {{dims.index(z - 1, y, x), dims.index(z + 1, y, x)},
                                {dims.index(z, y - 1, x), dims.index(z, y + 1, x)},
                                {dims.index(z, y, x - 1), dims.index(z, y, x + 1)}};
  for (int b = 0; b < 3; ++b)
    for (int a = 0; a < 3; ++a) m[a][b] = 0.5 * (disp[3 * nb[b][1] + a] - disp[3 * nb[b][0] + a]);
  for (int a = 0; a < 3; ++a) m[a][a] += 1.0;
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

inline void best_match_one(std::size_t q, std::span<const float> queries, std::span<const float> targets, int d,
                           std::span<int> best_index, std::span<double> best_score) {
  const float* a = queries.data() + q * d;
  const std::size_t n_targets = targets.size() / d;
  int best = -1;
  double best_s = -2.0;
  for (std::size_t t = 0; t < n_targets; ++t) {
    const float* b = targets.data() + t * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += static_cast<double>(a[j]) * b[j];
    if (s > best_s) {
      best_s = s;
      best = static_cast<int>(t);
    }
  }
  best_index[q] = best;
  best_score[q] = std::clamp(best_s, -1.0, 1.0);
}

}  // namespace fmbench::kernels::detail
