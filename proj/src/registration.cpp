#include "fmbench/registration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <tuple>

#include "fmbench/common.hpp"

namespace fmbench {

std::span<const float> FeatureVolume::class_token(int z) const {
  return {class_tokens.data() + static_cast<std::size_t>(z) * dim(), static_cast<std::size_t>(dim())};
}

std::span<const float> FeatureVolume::patch_token(int z, int y, int x) const {
  return {patch_tokens.data() + dims().index(z, y, x) * dim(), static_cast<std::size_t>(dim())};
}

FeatureVolume FeatureVolume::from_maps(std::span<const FeatureMap> maps) {
  if (maps.empty()) throw Error(ErrorKind::shape, "feature volume needs at least one slice");
  FeatureVolume v;
  v.descriptor = maps.front().descriptor;
  v.depth = static_cast<int>(maps.size());
  v.grid_h = maps.front().grid_h;
  v.grid_w = maps.front().grid_w;
  v.volume_id = maps.front().volume_id;
  for (const auto& m : maps) {
    if (!(m.descriptor == v.descriptor) || m.grid_h != v.grid_h || m.grid_w != v.grid_w)
      throw Error(ErrorKind::shape, "slice '" + m.sample_id + "' has a different descriptor");
    m.validate();
    v.class_tokens.insert(v.class_tokens.end(), m.class_token.begin(), m.class_token.end());
    v.patch_tokens.insert(v.patch_tokens.end(), m.patch_tokens.begin(), m.patch_tokens.end());
  }
  return v;
}

void FeatureVolume::validate() const {
  const std::size_t d = static_cast<std::size_t>(dim());
  if (depth < 1 || grid_h < 1 || grid_w < 1 || d < 1) throw Error(ErrorKind::shape, "empty feature volume");
  if (class_tokens.size() != depth * d || patch_tokens.size() != dims().cells() * d)
    throw Error(ErrorKind::shape, "feature volume token count does not match its shape");
  for (float f : patch_tokens)
    if (!std::isfinite(f)) throw Error(ErrorKind::data, "non-finite patch token");
  for (float f : class_tokens)
    if (!std::isfinite(f)) throw Error(ErrorKind::data, "non-finite class token");
}

namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    dot += static_cast<double>(a[j]) * b[j];
    na += static_cast<double>(a[j]) * a[j];
    nb += static_cast<double>(b[j]) * b[j];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

void check_pair(const FeatureVolume& fixed, const FeatureVolume& moving) {
  fixed.validate();
  moving.validate();
  if (!(fixed.descriptor == moving.descriptor) || fixed.grid_h != moving.grid_h || fixed.grid_w != moving.grid_w)
    throw Error(ErrorKind::shape, "fixed and moving volumes use different encoder descriptors");
}

// 0, -1, 1, -2, 2, ...
std::vector<int> offsets_by_magnitude(int limit) {
  std::vector<int> out{0};
  for (int k = 1; k <= limit; ++k) {
    out.push_back(-k);
    out.push_back(k);
  }
  return out;
}

}  // namespace

RigidEstimate rigid_align(const FeatureVolume& fixed, const FeatureVolume& moving) {
  check_pair(fixed, moving);
  RigidEstimate est;
  double best = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (int dz : offsets_by_magnitude(std::max(fixed.depth, moving.depth) / 2)) {
    const int z0 = std::max(0, -dz), z1 = std::min(fixed.depth, moving.depth - dz);
    if (z1 - z0 < kMinRigidOverlap) continue;
    double s = 0.0;
    for (int z = z0; z < z1; ++z) s += cosine(fixed.class_token(z), moving.class_token(z + dz));
    s /= (z1 - z0);
    if (!found || s > best) {
      best = s;
      est.dz = dz;
      found = true;
    }
  }
  if (!found)
    throw Error(ErrorKind::insufficient_overlap, "no slice offset leaves " + std::to_string(kMinRigidOverlap) +
                                                     " overlapping slices");

  const int z0 = std::max(0, -est.dz), z1 = std::min(fixed.depth, moving.depth - est.dz);
  std::vector<std::pair<int, int>> shifts;
  for (int dy : offsets_by_magnitude(fixed.grid_h / 4))
    for (int dx : offsets_by_magnitude(fixed.grid_w / 4)) shifts.emplace_back(dy, dx);
  std::stable_sort(shifts.begin(), shifts.end(), [](const auto& a, const auto& b) {
    return std::abs(a.first) + std::abs(a.second) < std::abs(b.first) + std::abs(b.second);
  });
  best = -std::numeric_limits<double>::infinity();
  for (const auto& [dy, dx] : shifts) {
    double s = 0.0;
    long n = 0;
    for (int z = z0; z < z1; ++z)
      for (int y = std::max(0, -dy); y < std::min(fixed.grid_h, fixed.grid_h - dy); ++y)
        for (int x = std::max(0, -dx); x < std::min(fixed.grid_w, fixed.grid_w - dx); ++x) {
          s += cosine(fixed.patch_token(z, y, x), moving.patch_token(z + est.dz, y + dy, x + dx));
          ++n;
        }
    if (n == 0) continue;
    s /= static_cast<double>(n);
    if (s > best) {
      best = s;
      est.dy = dy;
      est.dx = dx;
    }
  }
  est.score = best;
  return est;
}

DisplacementField DisplacementField::constant(kernels::GridDims dims, double dz, double dy, double dx) {
  DisplacementField f;
  f.dims = dims;
  f.u.resize(dims.cells() * 3);
  for (std::size_t c = 0; c < dims.cells(); ++c) {
    f.u[3 * c] = dz;
    f.u[3 * c + 1] = dy;
    f.u[3 * c + 2] = dx;
  }
  return f;
}

double DisplacementField::mean_component(int axis) const {
  double s = 0.0;
  for (std::size_t c = 0; c < dims.cells(); ++c) s += u[3 * c + axis];
  return s / static_cast<double>(dims.cells());
}

double DisplacementField::mean_abs() const {
  double s = 0.0;
  for (std::size_t c = 0; c < dims.cells(); ++c)
    s += std::sqrt(u[3 * c] * u[3 * c] + u[3 * c + 1] * u[3 * c + 1] + u[3 * c + 2] * u[3 * c + 2]);
  return s / static_cast<double>(dims.cells());
}

double DisplacementField::max_norm() const {
  double m = 0.0;
  for (std::size_t c = 0; c < dims.cells(); ++c)
    m = std::max(m, std::sqrt(u[3 * c] * u[3 * c] + u[3 * c + 1] * u[3 * c + 1] + u[3 * c + 2] * u[3 * c + 2]));
  return m;
}

namespace {

std::vector<float> unit_rows(const std::vector<float>& tokens, int d) {
  std::vector<float> out(tokens.size());
  for (std::size_t r = 0; r < tokens.size() / d; ++r) {
    double n2 = 0.0;
    for (int j = 0; j < d; ++j) n2 += static_cast<double>(tokens[r * d + j]) * tokens[r * d + j];
    const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
    for (int j = 0; j < d; ++j) out[r * d + j] = static_cast<float>(tokens[r * d + j] * inv);
  }
  return out;
}

// Sum of squared forward differences; adds d/du into grad when given.
double smoothness(const DisplacementField& f, std::vector<double>* grad, double scale) {
  const auto& g = f.dims;
  double r = 0.0;
  for (int z = 0; z < g.z; ++z)
    for (int y = 0; y < g.y; ++y)
      for (int x = 0; x < g.x; ++x) {
        const std::size_t c = g.index(z, y, x);
        const int nz[3] = {z + 1, z, z}, ny[3] = {y, y + 1, y}, nx[3] = {x, x, x + 1};
        for (int a = 0; a < 3; ++a) {
          if (nz[a] >= g.z || ny[a] >= g.y || nx[a] >= g.x) continue;
          const std::size_t n = g.index(nz[a], ny[a], nx[a]);
          for (int k = 0; k < 3; ++k) {
            const double diff = f.u[3 * n + k] - f.u[3 * c + k];
            r += diff * diff;
            if (grad) {
              (*grad)[3 * n + k] += scale * 2.0 * diff;
              (*grad)[3 * c + k] -= scale * 2.0 * diff;
            }
          }
        }
      }
  return r;
}

double loss_with_unit(const std::vector<float>& fixed_unit, const FeatureVolume& moving,
                      const DisplacementField& field, double reg_lambda, std::vector<double>* grad) {
  const std::size_t n = field.dims.cells();
  std::vector<double> cell_loss(n), cell_grad(3 * n);
  kernels::omp::similarity_terms(field.dims, moving.dim(), fixed_unit, moving.patch_tokens, field.u, cell_loss,
                                 cell_grad);
  const double inv_n = 1.0 / static_cast<double>(n);
  double sim = 0.0;
  for (double l : cell_loss) sim += l;
  if (grad) {
    grad->assign(3 * n, 0.0);
    for (std::size_t i = 0; i < 3 * n; ++i) (*grad)[i] = cell_grad[i] * inv_n;
  }
  const double reg = smoothness(field, grad, reg_lambda * inv_n);
  return sim * inv_n + reg_lambda * reg * inv_n;
}

}  // namespace

double deformable_loss(const FeatureVolume& fixed, const FeatureVolume& moving, const DisplacementField& field,
                       double reg_lambda, std::vector<double>* grad) {
  check_pair(fixed, moving);
  if (field.dims != fixed.dims() || field.u.size() != 3 * field.dims.cells())
    throw Error(ErrorKind::shape, "displacement field does not match the feature grid");
  if (fixed.depth != moving.depth) throw Error(ErrorKind::shape, "deformable stage needs equal slice counts");
  return loss_with_unit(unit_rows(fixed.patch_tokens, fixed.dim()), moving, field, reg_lambda, grad);
}

DeformableResult deformable_register(const FeatureVolume& fixed, const FeatureVolume& moving, const RigidEstimate& init,
                                     const DeformableOptions& o) {
  check_pair(fixed, moving);
  if (fixed.depth != moving.depth) throw Error(ErrorKind::shape, "deformable stage needs equal slice counts");
  if (!(o.reg_lambda >= 0.0)) throw Error(ErrorKind::config, "reg_lambda must be >= 0");
  if (o.iters < 0 || !(o.step > 0.0) || o.window < 1) throw Error(ErrorKind::config, "invalid optimizer settings");

  const std::vector<float> fixed_unit = unit_rows(fixed.patch_tokens, fixed.dim());
  DeformableResult res;
  res.field = DisplacementField::constant(fixed.dims(), init.dz, init.dy, init.dx);
  const double n = static_cast<double>(res.field.dims.cells());
  std::vector<double> grad, velocity(res.field.u.size(), 0.0);
  double loss = loss_with_unit(fixed_unit, moving, res.field, o.reg_lambda, &grad);
  if (!std::isfinite(loss)) throw Error(ErrorKind::divergence, "non-finite loss at iteration 0");
  res.losses.push_back(loss);
  double step = o.step;
  DisplacementField trial = res.field;
  std::vector<double> trial_grad;
  for (int it = 1; it <= o.iters; ++it) {
    std::vector<double> v(velocity.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = o.momentum * velocity[i] + n * grad[i];
      trial.u[i] = res.field.u[i] - step * v[i];
    }
    const double trial_loss = loss_with_unit(fixed_unit, moving, trial, o.reg_lambda, &trial_grad);
    if (!std::isfinite(trial_loss))
      throw Error(ErrorKind::divergence, "non-finite loss at iteration " + std::to_string(it));
    if (trial_loss > loss) {
      step *= 0.5;
      std::fill(velocity.begin(), velocity.end(), 0.0);
    } else {
      res.field.u = trial.u;
      velocity = std::move(v);
      grad = trial_grad;
      loss = trial_loss;
    }
    res.losses.push_back(loss);
    res.iters_used = it;
    if (it >= o.window) {
      const double prev = res.losses[res.losses.size() - 1 - o.window];
      if (std::abs(prev - loss) / std::max(std::abs(prev), 1e-12) < o.tolerance) break;
    }
  }
  return res;
}

std::vector<double> upsample_field(const DisplacementField& field, kernels::GridDims voxels) {
  const auto& g = field.dims;
  const double scale[3] = {static_cast<double>(voxels.z) / g.z, static_cast<double>(voxels.y) / g.y,
                           static_cast<double>(voxels.x) / g.x};
  // per-axis taps, shared by all voxels on that coordinate
  auto taps = [](int n_vox, int n_grid, double s) {
    std::vector<std::tuple<int, int, double>> out(static_cast<std::size_t>(n_vox));
    for (int v = 0; v < n_vox; ++v) {
      double c = std::clamp((v + 0.5) / s - 0.5, 0.0, static_cast<double>(n_grid - 1));
      const int i0 = std::min(static_cast<int>(std::floor(c)), std::max(n_grid - 2, 0));
      const int i1 = std::min(i0 + 1, n_grid - 1);
      out[v] = {i0, i1, c - i0};
    }
    return out;
  };
  const auto tz = taps(voxels.z, g.z, scale[0]), ty = taps(voxels.y, g.y, scale[1]), tx = taps(voxels.x, g.x, scale[2]);
  std::vector<double> disp(voxels.cells() * 3);
  for (int z = 0; z < voxels.z; ++z)
    for (int y = 0; y < voxels.y; ++y)
      for (int x = 0; x < voxels.x; ++x) {
        const auto [z0, z1, wz] = tz[z];
        const auto [y0, y1, wy] = ty[y];
        const auto [x0, x1, wx] = tx[x];
        double acc[3] = {0.0, 0.0, 0.0};
        for (int cz = 0; cz < 2; ++cz)
          for (int cy = 0; cy < 2; ++cy)
            for (int cx = 0; cx < 2; ++cx) {
              const double w = (cz ? wz : 1 - wz) * (cy ? wy : 1 - wy) * (cx ? wx : 1 - wx);
              if (w == 0.0) continue;
              const std::size_t c = g.index(cz ? z1 : z0, cy ? y1 : y0, cx ? x1 : x0);
              for (int a = 0; a < 3; ++a) acc[a] += w * field.u[3 * c + a];
            }
        const std::size_t v = voxels.index(z, y, x);
        for (int a = 0; a < 3; ++a) disp[3 * v + a] = acc[a] * scale[a];
      }
  return disp;
}

RasterVolume warp(const RasterVolume& volume, std::span<const double> disp) {
  const kernels::GridDims dims{volume.depth, volume.height, volume.width};
  if (disp.size() != 3 * dims.cells()) throw Error(ErrorKind::shape, "displacement does not match the volume shape");
  RasterVolume out = volume;
  kernels::omp::warp_trilinear(dims, volume.data, disp, out.data);
  return out;
}

LabelMask warp(const LabelMask& mask, std::span<const double> disp) {
  const kernels::GridDims dims{mask.depth, mask.height, mask.width};
  if (disp.size() != 3 * dims.cells()) throw Error(ErrorKind::shape, "displacement does not match the mask shape");
  LabelMask out = mask;
  kernels::omp::warp_nearest(dims, mask.data, disp, out.data);
  return out;
}

double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::shape, "dice: masks differ in size");
  long na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] != 0;
    nb += b[i] != 0;
    both += a[i] != 0 && b[i] != 0;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double dice(const LabelMask& a, const LabelMask& b, int label) {
  if (a.depth != b.depth || a.height != b.height || a.width != b.width)
    throw Error(ErrorKind::shape, "dice: masks differ in shape");
  std::vector<std::uint8_t> ba(a.data.size()), bb(b.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    ba[i] = a.data[i] == label;
    bb[i] = b.data[i] == label;
  }
  return dice(ba, bb);
}

JacobianStats std_log_jacobian(kernels::GridDims voxels, std::span<const double> disp) {
  if (disp.size() != 3 * voxels.cells()) throw Error(ErrorKind::shape, "displacement does not match the voxel grid");
  for (double d : disp)
    if (!std::isfinite(d)) throw Error(ErrorKind::data, "non-finite displacement");
  const std::size_t n = kernels::interior_count(voxels);
  if (n == 0) throw Error(ErrorKind::degenerate, "field has no interior voxels");
  std::vector<double> det(n);
  kernels::omp::jacobian_determinants(voxels, disp, det);
  double sum = 0.0;
  long kept = 0;
  for (double j : det)
    if (j > kFoldThreshold) {
      sum += std::log(j);
      ++kept;
    }
  if (kept == 0) throw Error(ErrorKind::degenerate, "every voxel of the field is folded");
  const double mean = sum / static_cast<double>(kept);
  double var = 0.0;
  for (double j : det)
    if (j > kFoldThreshold) var += (std::log(j) - mean) * (std::log(j) - mean);
  JacobianStats s;
  s.std_log_j = std::sqrt(var / static_cast<double>(kept));
  s.folded_fraction = static_cast<double>(n - static_cast<std::size_t>(kept)) / static_cast<double>(n);
  return s;
}

std::vector<KeypointMatch> keypoint_match(const FeatureMap& source, const FeatureMap& target, int n, std::uint64_t seed) {
  source.validate();
  target.validate();
  if (source.dim() != target.dim()) throw Error(ErrorKind::shape, "keypoint maps differ in embedding dimension");
  if (n < 0 || n > source.cells()) throw Error(ErrorKind::config, "keypoint count exceeds the source grid");
  const int d = source.dim();
  std::vector<int> cells(static_cast<std::size_t>(source.cells()));
  std::iota(cells.begin(), cells.end(), 0);
  SplitMix64 rng(mix_seed(seed, 0x4B50));
  for (int i = 0; i < n; ++i) std::swap(cells[i], cells[i + rng.below(cells.size() - i)]);
  cells.resize(static_cast<std::size_t>(n));

  const std::vector<float> all_src = unit_rows(source.patch_tokens, d);
  std::vector<float> queries;
  for (int c : cells) queries.insert(queries.end(), all_src.begin() + static_cast<std::ptrdiff_t>(c) * d,
                                     all_src.begin() + static_cast<std::ptrdiff_t>(c + 1) * d);
  const std::vector<float> targets = unit_rows(target.patch_tokens, d);
  std::vector<int> best(cells.size());
  std::vector<double> score(cells.size());
  kernels::omp::best_cosine_match(queries, targets, d, best, score);
  std::vector<KeypointMatch> out;
  for (std::size_t i = 0; i < cells.size(); ++i) out.push_back({cells[i], best[i], score[i]});
  return out;
}

PcaProjection pca_rgb(std::span<const FeatureMap> maps) {
  if (maps.empty()) throw Error(ErrorKind::shape, "pca_rgb needs at least one map");
  const int d = maps.front().dim();
  long rows = 0;
  for (const auto& m : maps) {
    if (m.dim() != d) throw Error(ErrorKind::shape, "pca_rgb maps differ in embedding dimension");
    rows += m.cells();
  }
  if (rows < 3) throw Error(ErrorKind::shape, "pca_rgb needs at least 3 cells");
  Eigen::MatrixXd x(rows, d);
  long r = 0;
  for (const auto& m : maps)
    for (int c = 0; c < m.cells(); ++c, ++r) {
      const auto tok = m.token(c);
      for (int j = 0; j < d; ++j) x(r, j) = tok[j];
    }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(rows);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const double top = std::max(values(d - 1), 0.0);

  PcaProjection out;
  out.scores.assign(static_cast<std::size_t>(rows), {0.0, 0.0, 0.0});
  std::array<bool, 3> valid{false, false, false};
  for (int k = 0; k < 3 && k < d; ++k) {
    const double lambda = values(d - 1 - k);
    if (!(top > 0.0) || lambda <= 1e-10 * top) break;
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - k);
    // sign convention: largest-magnitude entry positive
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    const Eigen::VectorXd proj = x * v;
    for (long i = 0; i < rows; ++i) out.scores[i][k] = proj(i);
    out.components.emplace_back(v.data(), v.data() + d);
    valid[k] = true;
  }
  std::array<double, 3> lo{}, hi{};
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::numeric_limits<double>::infinity();
    hi[k] = -std::numeric_limits<double>::infinity();
    for (const auto& s : out.scores) {
      lo[k] = std::min(lo[k], s[k]);
      hi[k] = std::max(hi[k], s[k]);
    }
  }
  r = 0;
  for (const auto& m : maps) {
    std::vector<std::array<double, 3>> colors(static_cast<std::size_t>(m.cells()));
    for (auto& c : colors) {
      for (int k = 0; k < 3; ++k)
        c[k] = valid[k] && hi[k] > lo[k] ? (out.scores[r][k] - lo[k]) / (hi[k] - lo[k]) : 0.5;
      ++r;
    }
    out.rgb.push_back(std::move(colors));
  }
  return out;
}

PairResult register_pair(const FeatureVolume& fixed, const FeatureVolume& moving, const LabelMask& fixed_labels,
                         const LabelMask& moving_labels, const RegistrationOptions& options) {
  if (fixed_labels.depth != moving_labels.depth || fixed_labels.height != moving_labels.height ||
      fixed_labels.width != moving_labels.width)
    throw Error(ErrorKind::shape, "fixed and moving label volumes differ in shape");
  if (fixed_labels.depth != fixed.depth)
    throw Error(ErrorKind::shape, "label volume needs one slice per feature slice");
  PairResult res;
  res.fixed_id = fixed.volume_id;
  res.moving_id = moving.volume_id;
  if (options.rigid) res.rigid = rigid_align(fixed, moving);
  if (options.deform) {
    const DeformableResult d = deformable_register(fixed, moving, res.rigid, options.deformable);
    res.field = d.field;
    res.iters_used = d.iters_used;
  } else {
    res.field = DisplacementField::constant(fixed.dims(), res.rigid.dz, res.rigid.dy, res.rigid.dx);
  }
  const kernels::GridDims voxels{fixed_labels.depth, fixed_labels.height, fixed_labels.width};
  const std::vector<double> disp = upsample_field(res.field, voxels);
  const LabelMask warped = warp(moving_labels, disp);

  std::set<int> labels;
  for (auto v : fixed_labels.data)
    if (v != 0) labels.insert(v);
  for (auto v : moving_labels.data)
    if (v != 0) labels.insert(v);
  if (labels.empty()) throw Error(ErrorKind::empty_mask, "label volumes contain no foreground");
  double after = 0.0, before = 0.0;
  for (int l : labels) {
    const double dsc = dice(fixed_labels, warped, l);
    res.dsc_per_label[l] = dsc;
    after += dsc;
    before += dice(fixed_labels, moving_labels, l);
  }
  res.mean_dsc = after / static_cast<double>(labels.size());
  res.mean_dsc_before = before / static_cast<double>(labels.size());
  const JacobianStats js = std_log_jacobian(voxels, disp);
  res.std_log_j = js.std_log_j;
  res.folded_fraction = js.folded_fraction;
  return res;
}

}  // namespace fmbench
