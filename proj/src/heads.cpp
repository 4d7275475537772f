#include "fmbench/heads.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include "fmbench/common.hpp"
#include "fmbench/stats.hpp"
#include "fmbench/survival.hpp"
#include "json.hpp"

namespace fmbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::string head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::cls_linear: return "cls_linear";
    case HeadKind::patch_pool_linear: return "patch_pool_linear";
    case HeadKind::attention_pool: return "attention_pool";
    case HeadKind::mask_pool_linear: return "mask_pool_linear";
    case HeadKind::mask_attention: return "mask_attention";
    case HeadKind::mlp_regression: return "mlp_regression";
  }
  return "cls_linear";
}

HeadKind parse_head_kind(const std::string& s) {
  for (HeadKind k : {HeadKind::cls_linear, HeadKind::patch_pool_linear, HeadKind::attention_pool,
                     HeadKind::mask_pool_linear, HeadKind::mask_attention, HeadKind::mlp_regression})
    if (head_kind_name(k) == s) return k;
  throw Error(ErrorKind::config, "unknown head kind '" + s + "'");
}

std::string pool_mode_name(PoolMode m) { return m == PoolMode::mean ? "mean" : "max"; }

PoolMode parse_pool_mode(const std::string& s) {
  if (s == "mean") return PoolMode::mean;
  if (s == "max") return PoolMode::max;
  throw Error(ErrorKind::config, "unknown pooling mode '" + s + "'");
}

void HeadConfig::validate() const {
  if (n_outputs < 1) throw Error(ErrorKind::config, "n_outputs must be >= 1");
  if (is_pooled() != pooling.has_value())
    throw Error(ErrorKind::config, "pooling must be set exactly for patch_pool_linear and mask_pool_linear");
  if (kind == HeadKind::mlp_regression && hidden_dim < 1)
    throw Error(ErrorKind::config, "mlp_regression needs hidden_dim >= 1");
}

std::vector<double> default_lr_grid() {
  // 10 log-spaced values from 1e-4 to 1e1.
  std::vector<double> grid(10);
  for (int i = 0; i < 10; ++i) grid[i] = std::pow(10.0, -4.0 + 5.0 * i / 9.0);
  return grid;
}

void TrainConfig::validate() const {
  if (lr_grid.size() != 10) throw Error(ErrorKind::config, "lr_grid must hold exactly 10 values");
  for (std::size_t i = 0; i < lr_grid.size(); ++i) {
    if (!(lr_grid[i] > 0.0)) throw Error(ErrorKind::config, "learning rates must be positive");
    if (i > 0 && !(lr_grid[i] > lr_grid[i - 1])) throw Error(ErrorKind::config, "lr_grid must be strictly increasing");
  }
  if (epochs < 1) throw Error(ErrorKind::config, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::config, "batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::config, "momentum must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// pooling

namespace {

// Running mean keeps the mean of identical items exactly equal to the item.
void running_mean_update(std::vector<double>& acc, std::span<const float> x, long count) {
  for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += (static_cast<double>(x[j]) - acc[j]) / count;
}

}  // namespace

std::vector<double> pool_tokens(const FeatureMap& map, PoolMode mode) {
  PatchSet all(static_cast<std::size_t>(map.cells()));
  std::iota(all.begin(), all.end(), 0);
  return pool_tokens(map, mode, all);
}

std::vector<double> pool_tokens(const FeatureMap& map, PoolMode mode, const PatchSet& region) {
  if (region.empty()) throw Error(ErrorKind::empty_region, "cannot pool an empty region");
  const int d = map.dim();
  std::vector<double> out(static_cast<std::size_t>(d), mode == PoolMode::max ? -std::numeric_limits<double>::infinity() : 0.0);
  long count = 0;
  for (int cell : region) {
    if (cell < 0 || cell >= map.cells()) throw Error(ErrorKind::shape, "patch index outside the grid");
    const auto tok = map.token(cell);
    if (mode == PoolMode::mean) {
      running_mean_update(out, tok, ++count);
    } else {
      for (int j = 0; j < d; ++j) out[j] = std::max(out[j], static_cast<double>(tok[j]));
    }
  }
  return out;
}

HeadSample prepare_head_input(std::span<const FeatureMap> slices, const HeadConfig& config,
                              std::span<const PatchSet> masks) {
  config.validate();
  if (slices.empty()) throw Error(ErrorKind::empty_region, "empty volume: no slices to forward");
  if (config.uses_mask() && masks.size() != slices.size())
    throw Error(ErrorKind::empty_mask, "mask kind '" + head_kind_name(config.kind) + "' needs one patch set per slice");
  if (!config.uses_mask() && !masks.empty())
    throw Error(ErrorKind::config, "masks given to non-mask head kind '" + head_kind_name(config.kind) + "'");
  const int d = slices.front().dim();
  for (const auto& s : slices)
    if (s.dim() != d || s.cells() != slices.front().cells())
      throw Error(ErrorKind::shape, "volume slices must share one descriptor");

  HeadSample out;
  out.dim = d;
  switch (config.kind) {
    case HeadKind::cls_linear:
    case HeadKind::mlp_regression: {
      std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
      long count = 0;
      for (const auto& s : slices) running_mean_update(acc, s.class_token, ++count);
      out.count = 1;
      out.tokens = std::move(acc);
      break;
    }
    case HeadKind::patch_pool_linear:
    case HeadKind::mask_pool_linear: {
      const PoolMode mode = *config.pooling;
      std::vector<double> acc(static_cast<std::size_t>(d), mode == PoolMode::max ? -std::numeric_limits<double>::infinity() : 0.0);
      long count = 0;
      for (std::size_t z = 0; z < slices.size(); ++z) {
        const FeatureMap& s = slices[z];
        auto visit = [&](int cell) {
          const auto tok = s.token(cell);
          if (mode == PoolMode::mean) running_mean_update(acc, tok, ++count);
          else {
            for (int j = 0; j < d; ++j) acc[j] = std::max(acc[j], static_cast<double>(tok[j]));
            ++count;
          }
        };
        if (config.uses_mask()) {
          for (int cell : masks[z]) {
            if (cell < 0 || cell >= s.cells()) throw Error(ErrorKind::shape, "patch index outside the grid");
            visit(cell);
          }
        } else {
          for (int cell = 0; cell < s.cells(); ++cell) visit(cell);
        }
      }
      if (count == 0) throw Error(ErrorKind::empty_region, "mask covers no patch in any slice");
      out.count = 1;
      out.tokens = std::move(acc);
      break;
    }
    case HeadKind::attention_pool:
    case HeadKind::mask_attention: {
      for (std::size_t z = 0; z < slices.size(); ++z) {
        const FeatureMap& s = slices[z];
        auto push = [&](int cell) {
          const auto tok = s.token(cell);
          out.tokens.insert(out.tokens.end(), tok.begin(), tok.end());
          ++out.count;
        };
        if (config.uses_mask()) {
          for (int cell : masks[z]) {
            if (cell < 0 || cell >= s.cells()) throw Error(ErrorKind::shape, "patch index outside the grid");
            push(cell);
          }
        } else {
          for (int cell = 0; cell < s.cells(); ++cell) push(cell);
        }
      }
      if (out.count == 0) throw Error(ErrorKind::empty_region, "mask covers no patch in any slice");
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// parameter layout

namespace {

struct LinearLayout {
  std::size_t w = 0, b = 0;
};

struct AttentionLayout {
  std::size_t q = 0, wk = 0, wv = 0, wo = 0, bo = 0, end = 0;
};

struct MlpLayout {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, w3 = 0, b3 = 0, trainable = 0;
  std::size_t rm1 = 0, rv1 = 0, rm2 = 0, rv2 = 0, end = 0;
};

AttentionLayout attention_layout(int d, int n) {
  AttentionLayout l;
  const std::size_t dd = static_cast<std::size_t>(d);
  l.q = 0;
  l.wk = dd;
  l.wv = l.wk + dd * dd;
  l.wo = l.wv + dd * dd;
  l.bo = l.wo + static_cast<std::size_t>(n) * dd;
  l.end = l.bo + static_cast<std::size_t>(n);
  return l;
}

MlpLayout mlp_layout(int d, int h, int n) {
  MlpLayout l;
  const std::size_t hh = static_cast<std::size_t>(h);
  l.w1 = 0;
  l.b1 = hh * d;
  l.w2 = l.b1 + hh;
  l.b2 = l.w2 + hh * hh;
  l.w3 = l.b2 + hh;
  l.b3 = l.w3 + static_cast<std::size_t>(n) * hh;
  l.trainable = l.b3 + static_cast<std::size_t>(n);
  l.rm1 = l.trainable;
  l.rv1 = l.rm1 + hh;
  l.rm2 = l.rv1 + hh;
  l.rv2 = l.rm2 + hh;
  l.end = l.rv2 + hh;
  return l;
}

constexpr double kBatchNormEps = 1e-5;
constexpr double kRunningStatMomentum = 0.1;

// out += M * x, M is rows x cols row-major.
void matvec_add(std::span<const double> m, std::size_t rows, std::size_t cols, const double* x, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] += acc;
  }
}

// out += M^T * x
void matvec_t_add(std::span<const double> m, std::size_t rows, std::size_t cols, const double* x, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += row[c] * x[r];
  }
}

// grad[M] += a (x) b
void outer_add(double* m, std::size_t rows, std::size_t cols, const double* a, const double* b) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] += a[r] * b[c];
}

}  // namespace

int parameter_count(const HeadConfig& config, int dim) {
  const int n = config.n_outputs;
  switch (config.kind) {
    case HeadKind::cls_linear:
    case HeadKind::patch_pool_linear:
    case HeadKind::mask_pool_linear: return n * dim + n;
    case HeadKind::attention_pool:
    case HeadKind::mask_attention: return static_cast<int>(attention_layout(dim, n).end);
    case HeadKind::mlp_regression: return static_cast<int>(mlp_layout(dim, config.hidden_dim, n).end);
  }
  return 0;
}

int trainable_count(const HeadConfig& config, int dim) {
  if (config.kind == HeadKind::mlp_regression)
    return static_cast<int>(mlp_layout(dim, config.hidden_dim, config.n_outputs).trainable);
  return parameter_count(config, dim);
}

std::vector<double> init_weights(const HeadConfig& config, int dim, std::uint64_t seed) {
  config.validate();
  std::vector<double> w(static_cast<std::size_t>(parameter_count(config, dim)), 0.0);
  SplitMix64 rng(mix_seed(seed, 0x4EAD));
  auto fill = [&](std::size_t begin, std::size_t count, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) w[begin + i] = rng.uniform(-bound, bound);
  };
  const int n = config.n_outputs;
  const std::size_t d = static_cast<std::size_t>(dim);
  switch (config.kind) {
    case HeadKind::cls_linear:
    case HeadKind::patch_pool_linear:
    case HeadKind::mask_pool_linear: fill(0, n * d, dim); break;
    case HeadKind::attention_pool:
    case HeadKind::mask_attention: {
      const auto l = attention_layout(dim, n);
      fill(l.q, d, dim);
      fill(l.wk, d * d, dim);
      fill(l.wv, d * d, dim);
      fill(l.wo, n * d, dim);
      break;
    }
    case HeadKind::mlp_regression: {
      const int h = config.hidden_dim;
      const auto l = mlp_layout(dim, h, n);
      fill(l.w1, static_cast<std::size_t>(h) * d, dim);
      fill(l.w2, static_cast<std::size_t>(h) * h, h);
      fill(l.w3, static_cast<std::size_t>(n) * h, h);
      std::fill(w.begin() + static_cast<std::ptrdiff_t>(l.rv1), w.begin() + static_cast<std::ptrdiff_t>(l.rv1 + h), 1.0);
      std::fill(w.begin() + static_cast<std::ptrdiff_t>(l.rv2), w.begin() + static_cast<std::ptrdiff_t>(l.rv2 + h), 1.0);
      break;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// forward / backward

namespace {

void check_weights(const HeadConfig& config, std::span<const double> weights, int dim) {
  if (weights.size() != static_cast<std::size_t>(parameter_count(config, dim)))
    throw Error(ErrorKind::shape, "weight vector does not match head '" + head_kind_name(config.kind) +
                                      "' for input dimension " + std::to_string(dim));
}

std::vector<double> linear_forward(const HeadConfig& config, std::span<const double> w, const HeadSample& s) {
  const std::size_t n = config.n_outputs, d = s.dim;
  std::vector<double> out(w.begin() + static_cast<std::ptrdiff_t>(n * d), w.begin() + static_cast<std::ptrdiff_t>(n * d + n));
  matvec_add(w, n, d, s.tokens.data(), out.data());
  return out;
}

void linear_backward(const HeadConfig& config, const HeadSample& s, const double* g_out, std::span<double> grad) {
  const std::size_t n = config.n_outputs, d = s.dim;
  outer_add(grad.data(), n, d, g_out, s.tokens.data());
  for (std::size_t k = 0; k < n; ++k) grad[n * d + k] += g_out[k];
}

struct AttentionCache {
  std::vector<double> key_dir;  // Wk^T q
  std::vector<double> attention;
  std::vector<double> mean_token;  // sum_t a_t x_t
  std::vector<double> pooled;
  std::vector<double> logits;
};

AttentionCache attention_forward_cached(const HeadConfig& config, std::span<const double> w, const HeadSample& s) {
  const int d = s.dim, n = config.n_outputs;
  const auto l = attention_layout(d, n);
  AttentionCache c;
  c.key_dir.assign(d, 0.0);
  matvec_t_add(w.subspan(l.wk, static_cast<std::size_t>(d) * d), d, d, w.data() + l.q, c.key_dir.data());
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  c.attention.resize(s.count);
  double max_score = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < s.count; ++t) {
    const auto x = s.row(t);
    double score = 0.0;
    for (int j = 0; j < d; ++j) score += x[j] * c.key_dir[j];
    c.attention[t] = score * scale;
    max_score = std::max(max_score, c.attention[t]);
  }
  double z = 0.0;
  for (double& a : c.attention) {
    a = std::exp(a - max_score);
    z += a;
  }
  for (double& a : c.attention) a /= z;
  c.mean_token.assign(d, 0.0);
  for (int t = 0; t < s.count; ++t) {
    const auto x = s.row(t);
    for (int j = 0; j < d; ++j) c.mean_token[j] += c.attention[t] * x[j];
  }
  c.pooled.assign(d, 0.0);
  matvec_add(w.subspan(l.wv, static_cast<std::size_t>(d) * d), d, d, c.mean_token.data(), c.pooled.data());
  c.logits.assign(w.begin() + static_cast<std::ptrdiff_t>(l.bo), w.begin() + static_cast<std::ptrdiff_t>(l.end));
  matvec_add(w.subspan(l.wo, static_cast<std::size_t>(n) * d), n, d, c.pooled.data(), c.logits.data());
  return c;
}

void attention_backward(const HeadConfig& config, std::span<const double> w, const HeadSample& s,
                        const AttentionCache& c, const double* g_out, std::span<double> grad) {
  const int d = s.dim, n = config.n_outputs;
  const auto l = attention_layout(d, n);
  const std::size_t dd = static_cast<std::size_t>(d);
  for (int k = 0; k < n; ++k) grad[l.bo + k] += g_out[k];
  outer_add(grad.data() + l.wo, n, dd, g_out, c.pooled.data());
  std::vector<double> d_pooled(dd, 0.0);
  matvec_t_add(w.subspan(l.wo, n * dd), n, dd, g_out, d_pooled.data());
  outer_add(grad.data() + l.wv, dd, dd, d_pooled.data(), c.mean_token.data());
  std::vector<double> d_mean(dd, 0.0);
  matvec_t_add(w.subspan(l.wv, dd * dd), dd, dd, d_pooled.data(), d_mean.data());
  // softmax backward
  std::vector<double> d_att(static_cast<std::size_t>(s.count));
  double weighted = 0.0;
  for (int t = 0; t < s.count; ++t) {
    const auto x = s.row(t);
    double v = 0.0;
    for (int j = 0; j < d; ++j) v += d_mean[j] * x[j];
    d_att[t] = v;
    weighted += c.attention[t] * v;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> d_key(dd, 0.0);
  for (int t = 0; t < s.count; ++t) {
    const double ds = c.attention[t] * (d_att[t] - weighted) * scale;
    const auto x = s.row(t);
    for (int j = 0; j < d; ++j) d_key[j] += ds * x[j];
  }
  // key_dir = Wk^T q  =>  dq = Wk d_key, dWk = q (x) d_key
  matvec_add(w.subspan(l.wk, dd * dd), dd, dd, d_key.data(), grad.data() + l.q);
  outer_add(grad.data() + l.wk, dd, dd, w.data() + l.q, d_key.data());
}

struct MlpBatchCache {
  int batch = 0;
  std::vector<double> xhat1, a1, xhat2, a2, inv_std1, inv_std2;  // per-layer, batch x h (inv_std: h)
  std::vector<double> mean1, var1, mean2, var2;
};

// Returns B x n outputs; training mode normalises with batch statistics.
std::vector<double> mlp_forward(const HeadConfig& config, std::span<const double> w,
                                std::span<const HeadSample* const> batch, bool training, MlpBatchCache* cache) {
  const int b = static_cast<int>(batch.size());
  const int d = batch.front()->dim, h = config.hidden_dim, n = config.n_outputs;
  const auto l = mlp_layout(d, h, n);
  const std::size_t hh = static_cast<std::size_t>(h);
  std::vector<double> z(static_cast<std::size_t>(b) * hh);

  auto normalise = [&](std::vector<double>& zz, std::size_t rm, std::size_t rv, std::vector<double>& xhat,
                       std::vector<double>& act, std::vector<double>& inv_std, std::vector<double>& mean_out,
                       std::vector<double>& var_out) {
    std::vector<double> mean(hh, 0.0), var(hh, 0.0);
    if (training) {
      for (int i = 0; i < b; ++i)
        for (std::size_t k = 0; k < hh; ++k) mean[k] += zz[i * hh + k];
      for (double& m : mean) m /= b;
      for (int i = 0; i < b; ++i)
        for (std::size_t k = 0; k < hh; ++k) var[k] += (zz[i * hh + k] - mean[k]) * (zz[i * hh + k] - mean[k]);
      for (double& v : var) v /= b;
    } else {
      for (std::size_t k = 0; k < hh; ++k) {
        mean[k] = w[rm + k];
        var[k] = w[rv + k];
      }
    }
    inv_std.resize(hh);
    for (std::size_t k = 0; k < hh; ++k) inv_std[k] = 1.0 / std::sqrt(var[k] + kBatchNormEps);
    xhat.resize(zz.size());
    act.resize(zz.size());
    for (int i = 0; i < b; ++i)
      for (std::size_t k = 0; k < hh; ++k) {
        const double v = (zz[i * hh + k] - mean[k]) * inv_std[k];
        xhat[i * hh + k] = v;
        act[i * hh + k] = v > 0.0 ? v : 0.0;
      }
    mean_out = std::move(mean);
    var_out = std::move(var);
  };

  MlpBatchCache local;
  MlpBatchCache& c = cache ? *cache : local;
  c.batch = b;
  for (int i = 0; i < b; ++i) {
    std::copy_n(w.data() + l.b1, hh, z.data() + i * hh);
    matvec_add(w.subspan(l.w1, hh * d), hh, d, batch[i]->tokens.data(), z.data() + i * hh);
  }
  normalise(z, l.rm1, l.rv1, c.xhat1, c.a1, c.inv_std1, c.mean1, c.var1);
  for (int i = 0; i < b; ++i) {
    std::copy_n(w.data() + l.b2, hh, z.data() + i * hh);
    matvec_add(w.subspan(l.w2, hh * hh), hh, hh, c.a1.data() + i * hh, z.data() + i * hh);
  }
  normalise(z, l.rm2, l.rv2, c.xhat2, c.a2, c.inv_std2, c.mean2, c.var2);
  std::vector<double> out(static_cast<std::size_t>(b) * n);
  for (int i = 0; i < b; ++i) {
    std::copy_n(w.data() + l.b3, n, out.data() + i * n);
    matvec_add(w.subspan(l.w3, static_cast<std::size_t>(n) * hh), n, hh, c.a2.data() + i * hh, out.data() + i * n);
  }
  return out;
}

void mlp_backward(const HeadConfig& config, std::span<const double> w, std::span<const HeadSample* const> batch,
                  const MlpBatchCache& c, std::span<const double> g_out, std::span<double> grad) {
  const int b = c.batch;
  const int d = batch.front()->dim, h = config.hidden_dim, n = config.n_outputs;
  const auto l = mlp_layout(d, h, n);
  const std::size_t hh = static_cast<std::size_t>(h);

  // batch-norm (no affine) followed by ReLU, backward through both
  auto bn_relu_backward = [&](std::vector<double>& d_act, const std::vector<double>& xhat,
                              const std::vector<double>& inv_std) {
    std::vector<double> dx(d_act.size());
    for (std::size_t i = 0; i < d_act.size(); ++i) dx[i] = xhat[i] > 0.0 ? d_act[i] : 0.0;
    std::vector<double> sum(hh, 0.0), sum_x(hh, 0.0);
    for (int i = 0; i < b; ++i)
      for (std::size_t k = 0; k < hh; ++k) {
        sum[k] += dx[i * hh + k];
        sum_x[k] += dx[i * hh + k] * xhat[i * hh + k];
      }
    std::vector<double> dz(d_act.size());
    for (int i = 0; i < b; ++i)
      for (std::size_t k = 0; k < hh; ++k)
        dz[i * hh + k] = inv_std[k] / b * (b * dx[i * hh + k] - sum[k] - xhat[i * hh + k] * sum_x[k]);
    return dz;
  };

  std::vector<double> d_a2(static_cast<std::size_t>(b) * hh, 0.0);
  for (int i = 0; i < b; ++i) {
    const double* g = g_out.data() + i * n;
    for (int k = 0; k < n; ++k) grad[l.b3 + k] += g[k];
    outer_add(grad.data() + l.w3, n, hh, g, c.a2.data() + i * hh);
    matvec_t_add(w.subspan(l.w3, static_cast<std::size_t>(n) * hh), n, hh, g, d_a2.data() + i * hh);
  }
  const std::vector<double> dz2 = bn_relu_backward(d_a2, c.xhat2, c.inv_std2);
  std::vector<double> d_a1(static_cast<std::size_t>(b) * hh, 0.0);
  for (int i = 0; i < b; ++i) {
    const double* g = dz2.data() + i * hh;
    for (std::size_t k = 0; k < hh; ++k) grad[l.b2 + k] += g[k];
    outer_add(grad.data() + l.w2, hh, hh, g, c.a1.data() + i * hh);
    matvec_t_add(w.subspan(l.w2, hh * hh), hh, hh, g, d_a1.data() + i * hh);
  }
  const std::vector<double> dz1 = bn_relu_backward(d_a1, c.xhat1, c.inv_std1);
  for (int i = 0; i < b; ++i) {
    const double* g = dz1.data() + i * hh;
    for (std::size_t k = 0; k < hh; ++k) grad[l.b1 + k] += g[k];
    outer_add(grad.data() + l.w1, hh, d, g, batch[i]->tokens.data());
  }
}

// Loss and d loss / d outputs for a batch of outputs (B x n).
double objective_terms(const HeadConfig& config, Objective objective, const TrainingSet& data,
                       std::span<const std::size_t> batch, std::span<const double> outputs, std::vector<double>& g_out) {
  const int n = config.n_outputs;
  const std::size_t b = batch.size();
  g_out.assign(b * n, 0.0);
  double loss = 0.0;
  switch (objective) {
    case Objective::cross_entropy: {
      for (std::size_t i = 0; i < b; ++i) {
        const double* o = outputs.data() + i * n;
        const int y = data.labels[batch[i]];
        const double m = *std::max_element(o, o + n);
        double z = 0.0;
        for (int k = 0; k < n; ++k) z += std::exp(o[k] - m);
        const double log_z = m + std::log(z);
        loss += log_z - o[y];
        for (int k = 0; k < n; ++k) g_out[i * n + k] = (std::exp(o[k] - log_z) - (k == y ? 1.0 : 0.0)) / b;
      }
      loss /= b;
      break;
    }
    case Objective::mse: {
      for (std::size_t i = 0; i < b; ++i)
        for (int k = 0; k < n; ++k) {
          const double r = outputs[i * n + k] - data.values[batch[i] * n + k];
          loss += r * r;
          g_out[i * n + k] = 2.0 * r / (static_cast<double>(b) * n);
        }
      loss /= static_cast<double>(b) * n;
      break;
    }
    case Objective::cox: {
      std::vector<double> times(b), risks(b), grad(b);
      std::vector<int> events(b);
      int n_events = 0;
      for (std::size_t i = 0; i < b; ++i) {
        times[i] = data.times[batch[i]];
        events[i] = data.events[batch[i]];
        risks[i] = outputs[i * n];
        n_events += events[i];
      }
      if (n_events == 0) return 0.0;  // a batch without events carries no partial likelihood
      loss = cox_loss(times, events, risks, grad) / n_events;
      for (std::size_t i = 0; i < b; ++i) g_out[i * n] = grad[i] / n_events;
      break;
    }
  }
  return loss;
}

void check_training_set(const HeadConfig& config, const TrainingSet& data, Objective objective) {
  if (data.inputs.empty()) throw Error(ErrorKind::label, "empty training set");
  const int d = data.inputs.front().dim;
  for (const auto& s : data.inputs)
    if (s.dim != d || s.count < 1) throw Error(ErrorKind::shape, "training inputs must share one dimension");
  switch (objective) {
    case Objective::cross_entropy:
      if (data.labels.size() != data.size()) throw Error(ErrorKind::label, "labels missing for training inputs");
      for (int y : data.labels)
        if (y < 0 || y >= config.n_outputs) throw Error(ErrorKind::label, "label outside [0, n_outputs)");
      break;
    case Objective::mse:
      if (data.values.size() != data.size() * config.n_outputs)
        throw Error(ErrorKind::label, "regression targets missing for training inputs");
      break;
    case Objective::cox:
      if (data.times.size() != data.size() || data.events.size() != data.size())
        throw Error(ErrorKind::label, "survival targets missing for training inputs");
      break;
  }
}

double batch_loss_impl(const HeadConfig& config, std::span<const double> weights, const TrainingSet& data,
                       std::span<const std::size_t> batch, Objective objective, std::span<double> grad,
                       MlpBatchCache* mlp_cache) {
  const int d = data.inputs.at(batch.front()).dim;
  const int n = config.n_outputs;
  check_weights(config, weights, d);
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<double> outputs(batch.size() * n);
  std::vector<double> g_out;

  if (config.kind == HeadKind::mlp_regression) {
    std::vector<const HeadSample*> ptrs;
    for (std::size_t i : batch) ptrs.push_back(&data.inputs[i]);
    MlpBatchCache cache;
    outputs = mlp_forward(config, weights, ptrs, true, &cache);
    const double loss = objective_terms(config, objective, data, batch, outputs, g_out);
    if (!grad.empty()) mlp_backward(config, weights, ptrs, cache, g_out, grad);
    if (mlp_cache) *mlp_cache = std::move(cache);
    return loss;
  }
  if (config.is_attention()) {
    std::vector<AttentionCache> caches(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      caches[i] = attention_forward_cached(config, weights, data.inputs[batch[i]]);
      std::copy(caches[i].logits.begin(), caches[i].logits.end(), outputs.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    const double loss = objective_terms(config, objective, data, batch, outputs, g_out);
    if (!grad.empty())
      for (std::size_t i = 0; i < batch.size(); ++i)
        attention_backward(config, weights, data.inputs[batch[i]], caches[i], g_out.data() + i * n, grad);
    return loss;
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto o = linear_forward(config, weights, data.inputs[batch[i]]);
    std::copy(o.begin(), o.end(), outputs.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  const double loss = objective_terms(config, objective, data, batch, outputs, g_out);
  if (!grad.empty())
    for (std::size_t i = 0; i < batch.size(); ++i) linear_backward(config, data.inputs[batch[i]], g_out.data() + i * n, grad);
  return loss;
}

}  // namespace

std::vector<double> head_output(const HeadConfig& config, std::span<const double> weights, const HeadSample& sample) {
  check_weights(config, weights, sample.dim);
  if (config.kind == HeadKind::mlp_regression) {
    const HeadSample* p = &sample;
    return mlp_forward(config, weights, std::span<const HeadSample* const>(&p, 1), false, nullptr);
  }
  if (config.is_attention()) return attention_forward_cached(config, weights, sample).logits;
  return linear_forward(config, weights, sample);
}

std::vector<double> head_forward(std::span<const FeatureMap> slices, const HeadConfig& config,
                                 std::span<const double> weights, std::span<const PatchSet> masks) {
  return head_output(config, weights, prepare_head_input(slices, config, masks));
}

AttentionResult attention_pool_forward(const HeadConfig& config, std::span<const double> weights,
                                       const HeadSample& sample) {
  if (!config.is_attention()) throw Error(ErrorKind::config, "attention_pool_forward needs an attention head");
  check_weights(config, weights, sample.dim);
  AttentionCache c = attention_forward_cached(config, weights, sample);
  return {std::move(c.logits), std::move(c.attention), std::move(c.pooled)};
}

AttentionResult attention_pool_forward(const FeatureMap& map, const HeadConfig& config, std::span<const double> weights) {
  HeadConfig full = config;
  full.kind = HeadKind::attention_pool;
  return attention_pool_forward(full, weights, prepare_head_input(std::span<const FeatureMap>(&map, 1), full));
}

TrainingSet TrainingSet::subset(std::span<const std::size_t> indices) const {
  TrainingSet out;
  const std::size_t n_out = inputs.empty() || values.empty() ? 0 : values.size() / inputs.size();
  for (std::size_t i : indices) {
    out.inputs.push_back(inputs.at(i));
    if (!labels.empty()) out.labels.push_back(labels[i]);
    if (!values.empty())
      out.values.insert(out.values.end(), values.begin() + static_cast<std::ptrdiff_t>(i * n_out),
                        values.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_out));
    if (!times.empty()) out.times.push_back(times[i]);
    if (!events.empty()) out.events.push_back(events[i]);
  }
  return out;
}

double batch_loss(const HeadConfig& config, std::span<const double> weights, const TrainingSet& data,
                  std::span<const std::size_t> batch, Objective objective, std::span<double> grad) {
  if (batch.empty()) throw Error(ErrorKind::config, "empty batch");
  if (!grad.empty() && grad.size() != weights.size()) throw Error(ErrorKind::shape, "gradient buffer size mismatch");
  return batch_loss_impl(config, weights, data, batch, objective, grad, nullptr);
}

std::vector<double> predict(const TrainedHead& head, std::span<const HeadSample> inputs) {
  const int n = head.config.n_outputs;
  std::vector<double> out;
  out.reserve(inputs.size() * n);
  for (const auto& s : inputs) {
    const auto o = head_output(head.config, head.weights, s);
    out.insert(out.end(), o.begin(), o.end());
  }
  return out;
}

double selection_score(const HeadConfig& config, std::span<const double> weights, const TrainingSet& data,
                       Selection selection) {
  const int n = config.n_outputs;
  std::vector<double> outputs;
  outputs.reserve(data.size() * n);
  for (const auto& s : data.inputs) {
    const auto o = head_output(config, weights, s);
    outputs.insert(outputs.end(), o.begin(), o.end());
  }
  for (double v : outputs)
    if (!std::isfinite(v)) return -std::numeric_limits<double>::infinity();
  switch (selection) {
    case Selection::accuracy:
    case Selection::balanced_accuracy: {
      std::vector<int> pred(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double* o = outputs.data() + i * n;
        pred[i] = static_cast<int>(std::max_element(o, o + n) - o);
      }
      return selection == Selection::accuracy ? accuracy(data.labels, pred) : balanced_accuracy(data.labels, pred);
    }
    case Selection::neg_mse: {
      double se = 0.0;
      for (std::size_t i = 0; i < outputs.size(); ++i) se += (outputs[i] - data.values[i]) * (outputs[i] - data.values[i]);
      return -se / static_cast<double>(outputs.size());
    }
    case Selection::c_index: {
      std::vector<SurvivalRecord> recs(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) recs[i] = {"", data.times[i], data.events[i], outputs[i * n]};
      return concordance_index(recs);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// training

namespace {

struct CandidateRun {
  std::vector<double> weights;
  std::vector<double> epoch_losses;
  double val_score = -std::numeric_limits<double>::infinity();
  bool diverged = false;
};

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, int batch_size, bool merge_singleton) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // Batch normalisation is undefined on a single sample.
  if (merge_singleton && batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

CandidateRun run_candidate(const TrainingSet& train, const TrainingSet& val, const HeadConfig& config,
                           const TrainConfig& tc, Objective objective, Selection selection, double lr) {
  const int dim = train.inputs.front().dim;
  CandidateRun run;
  run.weights = init_weights(config, dim, tc.seed);
  const std::size_t n_train = static_cast<std::size_t>(trainable_count(config, dim));
  std::vector<double> velocity(n_train, 0.0), grad(run.weights.size(), 0.0);
  const bool is_mlp = config.kind == HeadKind::mlp_regression;
  const auto l = is_mlp ? mlp_layout(dim, config.hidden_dim, config.n_outputs) : MlpLayout{};

  std::vector<std::size_t> order(train.size());
  const std::size_t per_epoch = make_batches(order, tc.batch_size, is_mlp).size();
  const double total_steps = static_cast<double>(per_epoch) * tc.epochs;
  long step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(mix_seed(tc.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (const auto& batch : make_batches(order, tc.batch_size, is_mlp)) {
      MlpBatchCache cache;
      const double loss =
          batch_loss_impl(config, run.weights, train, batch, objective, grad, is_mlp ? &cache : nullptr);
      const double rate = lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      for (std::size_t p = 0; p < n_train; ++p) {
        velocity[p] = tc.momentum * velocity[p] + grad[p];
        run.weights[p] -= rate * velocity[p];
      }
      if (is_mlp && cache.batch > 1) {
        const double m = kRunningStatMomentum;
        const double unbias = static_cast<double>(cache.batch) / (cache.batch - 1);
        for (int k = 0; k < config.hidden_dim; ++k) {
          run.weights[l.rm1 + k] = (1 - m) * run.weights[l.rm1 + k] + m * cache.mean1[k];
          run.weights[l.rv1 + k] = (1 - m) * run.weights[l.rv1 + k] + m * cache.var1[k] * unbias;
          run.weights[l.rm2 + k] = (1 - m) * run.weights[l.rm2 + k] + m * cache.mean2[k];
          run.weights[l.rv2 + k] = (1 - m) * run.weights[l.rv2 + k] + m * cache.var2[k] * unbias;
        }
      }
      epoch_loss += loss * static_cast<double>(batch.size());
      ++step;
    }
    epoch_loss /= static_cast<double>(train.size());
    run.epoch_losses.push_back(epoch_loss);
    if (!std::isfinite(epoch_loss)) {
      run.diverged = true;
      return run;
    }
  }
  for (double w : run.weights)
    if (!std::isfinite(w)) {
      run.diverged = true;
      return run;
    }
  run.val_score = selection_score(config, run.weights, val, selection);
  if (!std::isfinite(run.val_score)) run.diverged = true;
  return run;
}

}  // namespace

TrainedHead train_head(const TrainingSet& train, const TrainingSet& val, const HeadConfig& config,
                       const TrainConfig& tc, Objective objective, Selection selection) {
  config.validate();
  tc.validate();
  check_training_set(config, train, objective);
  check_training_set(config, val, objective);
  if (train.inputs.front().dim != val.inputs.front().dim)
    throw Error(ErrorKind::shape, "train and validation inputs differ in dimension");
  if (objective == Objective::cross_entropy) {
    const std::set<int> classes(train.labels.begin(), train.labels.end());
    if (classes.size() < 2) throw Error(ErrorKind::label, "degenerate training set: a single class");
  }
  if (objective == Objective::cox) {
    if (std::count(train.events.begin(), train.events.end(), 1) == 0)
      throw Error(ErrorKind::no_event, "training set has no observed event");
    if (std::count(val.events.begin(), val.events.end(), 1) == 0)
      throw Error(ErrorKind::no_event, "validation set has no observed event");
  }

  const int n_lr = static_cast<int>(tc.lr_grid.size());
  std::vector<CandidateRun> runs(n_lr);
  std::vector<std::exception_ptr> errors(n_lr);
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n_lr; ++i) {
    try {
      runs[i] = run_candidate(train, val, config, tc, objective, selection, tc.lr_grid[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  TrainedHead head;
  head.config = config;
  head.input_dim = train.inputs.front().dim;
  head.seed = tc.seed;
  int best = -1;
  for (int i = 0; i < n_lr; ++i) {
    head.candidates.push_back({tc.lr_grid[i], runs[i].val_score, runs[i].diverged});
    if (runs[i].diverged) continue;
    if (best < 0 || runs[i].val_score > runs[best].val_score) best = i;
  }
  if (best < 0) throw Error(ErrorKind::divergence, "every learning rate in the grid diverged");
  head.weights = std::move(runs[best].weights);
  head.best_lr = tc.lr_grid[best];
  head.val_score = runs[best].val_score;
  head.epoch_losses = std::move(runs[best].epoch_losses);
  return head;
}

double gradient_check(const HeadConfig& config, std::span<const double> weights, const TrainingSet& data,
                      Objective objective, double h) {
  check_training_set(config, data, objective);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<double> w(weights.begin(), weights.end());
  std::vector<double> analytic(w.size());
  batch_loss(config, w, data, all, objective, analytic);
  const int n_train = trainable_count(config, data.inputs.front().dim);
  double worst = 0.0;
  for (int p = 0; p < n_train; ++p) {
    const double saved = w[p];
    w[p] = saved + h;
    const double up = batch_loss(config, w, data, all, objective);
    w[p] = saved - h;
    const double down = batch_loss(config, w, data, all, objective);
    w[p] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[p]), std::abs(numeric), kGradientCheckFloor});
    worst = std::max(worst, std::abs(analytic[p] - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// HEAD1 serialization: "HEAD1", u32le JSON length, JSON metadata, f32le weights.

void write_trained_head(const TrainedHead& head, const fs::path& path) {
  json meta;
  meta["kind"] = head_kind_name(head.config.kind);
  meta["pooling"] = head.config.pooling ? json(pool_mode_name(*head.config.pooling)) : json(nullptr);
  meta["n_outputs"] = head.config.n_outputs;
  meta["hidden_dim"] = head.config.hidden_dim;
  meta["input_dim"] = head.input_dim;
  meta["best_lr"] = head.best_lr;
  meta["val_score"] = head.val_score;
  meta["seed"] = head.seed;
  meta["n_weights"] = head.weights.size();
  const std::string text = meta.dump();
  std::string out = "HEAD1";
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
  out += text;
  for (double w : head.weights) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(w));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::io, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

TrainedHead read_trained_head(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), {});
  if (bytes.size() < 9 || bytes.compare(0, 5, "HEAD1") != 0) throw Error(ErrorKind::format, "magic mismatch (expected HEAD1)");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[5 + i])) << (8 * i);
  if (bytes.size() < 9ull + len) throw Error(ErrorKind::format, "truncated HEAD1 header");
  TrainedHead head;
  std::size_t n_weights = 0;
  try {
    const json meta = json::parse(bytes.substr(9, len));
    head.config.kind = parse_head_kind(meta.at("kind").get<std::string>());
    if (!meta.at("pooling").is_null()) head.config.pooling = parse_pool_mode(meta.at("pooling").get<std::string>());
    head.config.n_outputs = meta.at("n_outputs").get<int>();
    head.config.hidden_dim = meta.at("hidden_dim").get<int>();
    head.input_dim = meta.at("input_dim").get<int>();
    head.best_lr = meta.at("best_lr").get<double>();
    head.val_score = meta.at("val_score").get<double>();
    head.seed = meta.at("seed").get<std::uint64_t>();
    n_weights = meta.at("n_weights").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("malformed HEAD1 metadata: ") + e.what());
  }
  if (bytes.size() != 9ull + len + 4ull * n_weights) throw Error(ErrorKind::format, "HEAD1 weight blob has the wrong length");
  head.weights.resize(n_weights);
  const char* p = bytes.data() + 9 + len;
  for (std::size_t i = 0; i < n_weights; ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[4 * i + k])) << (8 * k);
    head.weights[i] = std::bit_cast<float>(bits);
  }
  head.config.validate();
  check_weights(head.config, head.weights, head.input_dim);
  return head;
}

}  // namespace fmbench
