#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fmbench/heads.hpp"
#include "fmbench/synthetic.hpp"
#include "oracles.hpp"

using namespace fmbench;

namespace {

FeatureMap make_map(int gh, int gw, int d, std::uint64_t seed) {
  FeatureMap m;
  m.descriptor = {"test", gh * 16, 16, d};
  m.grid_h = gh;
  m.grid_w = gw;
  SplitMix64 g(seed);
  m.patch_tokens.resize(static_cast<std::size_t>(gh) * gw * d);
  for (float& v : m.patch_tokens) v = static_cast<float>(g.normal());
  m.class_token.assign(d, 0.0f);
  for (int c = 0; c < gh * gw; ++c)
    for (int j = 0; j < d; ++j) m.class_token[j] += m.token(c)[j] / (gh * gw);
  return m;
}

std::vector<double> random_weights(int n, std::uint64_t seed, double scale = 1.0) {
  SplitMix64 g(seed);
  std::vector<double> w(n);
  for (double& v : w) v = g.normal() * scale;
  return w;
}

HeadConfig config(HeadKind k, int n_outputs, std::optional<PoolMode> pool = std::nullopt, int hidden = 0) {
  HeadConfig c;
  c.kind = k;
  c.n_outputs = n_outputs;
  c.pooling = pool;
  c.hidden_dim = hidden;
  return c;
}

HeadSample random_sample(int count, int d, std::uint64_t seed) {
  HeadSample s;
  s.count = count;
  s.dim = d;
  SplitMix64 g(seed);
  s.tokens.resize(static_cast<std::size_t>(count) * d);
  for (double& v : s.tokens) v = g.normal();
  return s;
}

// Separable toy-encoder features: tiled class patterns plus noise.
TrainingSet toy_class_set(int n_classes, int per_class, std::uint64_t seed, int dim = 32) {
  TrainingSet ts;
  SplitMix64 noise(seed);
  for (int i = 0; i < per_class; ++i)
    for (int c = 0; c < n_classes; ++c) {
      const auto pat = synth::class_pattern(c, 5);
      Slice2D s(32, 32);
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) s.at(y, x) = pat[(y % 16) * 16 + x % 16] + 0.3 * noise.normal();
      const FeatureMap m = toy_encode(s, 7, dim);
      ts.inputs.push_back(prepare_head_input(std::span<const FeatureMap>(&m, 1), config(HeadKind::cls_linear, n_classes)));
      ts.labels.push_back(c);
    }
  return ts;
}

}  // namespace

TEST(Pool, Examples) {
  FeatureMap m = make_map(1, 2, 2, 0);
  m.patch_tokens = {1, 0, 0, 1};
  EXPECT_EQ(pool_tokens(m, PoolMode::mean), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(pool_tokens(m, PoolMode::max), (std::vector<double>{1, 1}));
  EXPECT_EQ(pool_tokens(m, PoolMode::mean, PatchSet{1}), (std::vector<double>{0, 1}));
  try {
    pool_tokens(m, PoolMode::mean, PatchSet{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_region);
  }
}

TEST(Pool, IdenticalTokens) {
  FeatureMap m = make_map(3, 3, 4, 0);
  for (int c = 0; c < 9; ++c)
    for (int j = 0; j < 4; ++j) m.token(c)[j] = 0.1f * (j + 1);
  for (PoolMode mode : {PoolMode::mean, PoolMode::max}) {
    const auto p = pool_tokens(m, mode);
    for (int j = 0; j < 4; ++j) EXPECT_EQ(p[j], static_cast<double>(0.1f * (j + 1)));
  }
}

TEST(Attention, SingletonAndZeroQuery) {
  const HeadConfig c = config(HeadKind::attention_pool, 3);
  const int d = 4;
  const auto w = random_weights(parameter_count(c, d), 1);
  const FeatureMap one = make_map(1, 1, d, 2);
  const auto r = attention_pool_forward(one, c, w);
  ASSERT_EQ(r.attention.size(), 1u);
  EXPECT_EQ(r.attention[0], 1.0);
  // pooled = Wv x
  for (int i = 0; i < d; ++i) {
    double v = 0;
    for (int j = 0; j < d; ++j) v += w[d + d * d + i * d + j] * one.token(0)[j];
    EXPECT_NEAR(r.pooled[i], v, 1e-12);
  }
  auto wz = w;
  std::fill(wz.begin(), wz.begin() + d, 0.0);
  const auto u = attention_pool_forward(make_map(3, 4, d, 3), c, wz);
  for (double a : u.attention) EXPECT_NEAR(a, 1.0 / 12, 1e-15);
}

TEST(Attention, MatchesBruteForce) {
  const HeadConfig c = config(HeadKind::attention_pool, 2);
  const int d = 5, n = 2;
  for (int t = 0; t < 10; ++t) {
    const auto w = random_weights(parameter_count(c, d), 10 + t);
    const FeatureMap m = make_map(2, 2, d, 20 + t);
    const auto r = attention_pool_forward(m, c, w);
    // layout: q | Wk (d x d) | Wv (d x d) | Wo (n x d) | bo (n)
    const double* q = w.data();
    const double* wk = q + d;
    const double* wv = wk + d * d;
    const double* wo = wv + d * d;
    const double* bo = wo + n * d;
    std::vector<double> score(4);
    for (int p = 0; p < 4; ++p) {
      double s = 0;
      for (int i = 0; i < d; ++i) {
        double key = 0;
        for (int j = 0; j < d; ++j) key += wk[i * d + j] * m.token(p)[j];
        s += q[i] * key;
      }
      score[p] = s / std::sqrt(static_cast<double>(d));
    }
    double z = 0;
    for (double s : score) z += std::exp(s);
    std::vector<double> pooled(d, 0.0);
    for (int p = 0; p < 4; ++p) {
      const double a = std::exp(score[p]) / z;
      ASSERT_NEAR(r.attention[p], a, 1e-6);
      for (int i = 0; i < d; ++i) {
        double v = 0;
        for (int j = 0; j < d; ++j) v += wv[i * d + j] * m.token(p)[j];
        pooled[i] += a * v;
      }
    }
    for (int k = 0; k < n; ++k) {
      double logit = bo[k];
      for (int i = 0; i < d; ++i) logit += wo[k * d + i] * pooled[i];
      ASSERT_NEAR(r.logits[k], logit, 1e-6);
    }
  }
}

TEST(Attention, AlwaysOnSimplex) {
  for (HeadKind k : {HeadKind::attention_pool, HeadKind::mask_attention}) {
    const HeadConfig c = config(k, 3);
    for (int t = 0; t < 50; ++t) {
      SplitMix64 g(t);
      const int d = 1 + static_cast<int>(g.below(8));
      const auto s = random_sample(1 + static_cast<int>(g.below(30)), d, 100 + t);
      const auto r = attention_pool_forward(c, random_weights(parameter_count(c, d), 200 + t, 3.0), s);
      double sum = 0;
      for (double a : r.attention) {
        ASSERT_GE(a, 0.0);
        sum += a;
      }
      ASSERT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(HeadForward, ClsLinearIdentity) {
  const int d = 6, n = 3;
  const HeadConfig c = config(HeadKind::cls_linear, n);
  std::vector<double> w(parameter_count(c, d), 0.0);
  for (int k = 0; k < n; ++k) w[k * d + k] = 1.0;
  const FeatureMap m = make_map(2, 2, d, 4);
  const auto out = head_forward(std::span<const FeatureMap>(&m, 1), c, w);
  for (int k = 0; k < n; ++k) EXPECT_EQ(out[k], static_cast<double>(m.class_token[k]));
}

TEST(HeadForward, VolumeOfIdenticalSlices) {
  const int d = 5;
  const FeatureMap m = make_map(3, 3, d, 5);
  const std::vector<FeatureMap> vol(3, m);
  for (HeadConfig c : {config(HeadKind::patch_pool_linear, 2, PoolMode::mean), config(HeadKind::cls_linear, 2),
                       config(HeadKind::patch_pool_linear, 2, PoolMode::max)}) {
    const auto w = random_weights(parameter_count(c, d), 6);
    const auto a = head_forward(vol, c, w), b = head_forward(std::span<const FeatureMap>(&m, 1), c, w);
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(a[k], b[k], 1e-12) << head_kind_name(c.kind);
  }
}

TEST(HeadForward, MaskPoolMatchesManualComposition) {
  const int d = 7, n = 3;
  const HeadConfig c = config(HeadKind::mask_pool_linear, n, PoolMode::mean);
  for (int t = 0; t < 10; ++t) {
    const FeatureMap m = make_map(4, 4, d, 30 + t);
    SplitMix64 g(t);
    PatchSet region;
    for (int i = 0; i < 16; ++i)
      if (g.uniform() < 0.4) region.push_back(i);
    if (region.empty()) region.push_back(3);
    const auto w = random_weights(parameter_count(c, d), 40 + t);
    const auto out = head_forward(std::span<const FeatureMap>(&m, 1), c, w, std::span<const PatchSet>(&region, 1));
    const auto pooled = pool_tokens(m, PoolMode::mean, region);
    for (int k = 0; k < n; ++k) {
      double v = w[n * d + k];
      for (int j = 0; j < d; ++j) v += w[k * d + j] * pooled[j];
      EXPECT_NEAR(out[k], v, 1e-6);
    }
  }
}

TEST(HeadForward, MaskRequiredForMaskKinds) {
  const HeadConfig c = config(HeadKind::mask_pool_linear, 2, PoolMode::mean);
  const FeatureMap m = make_map(2, 2, 3, 1);
  EXPECT_THROW(head_forward(std::span<const FeatureMap>(&m, 1), c, random_weights(parameter_count(c, 3), 1)), Error);
  EXPECT_THROW(head_forward(std::span<const FeatureMap>(), config(HeadKind::cls_linear, 2), random_weights(8, 1)),
               Error);
}

TEST(HeadForward, MeanPoolPermutationInvariant) {
  const int d = 6;
  const HeadConfig c = config(HeadKind::patch_pool_linear, 3, PoolMode::mean);
  const auto w = random_weights(parameter_count(c, d), 7);
  for (int t = 0; t < 20; ++t) {
    const FeatureMap m = make_map(3, 4, d, 50 + t);
    FeatureMap p = m;
    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    SplitMix64 g(t);
    for (int i = 11; i > 0; --i) std::swap(perm[i], perm[g.below(i + 1)]);
    for (int c2 = 0; c2 < 12; ++c2)
      std::copy(m.token(perm[c2]).begin(), m.token(perm[c2]).end(), p.token(c2).begin());
    const auto a = head_forward(std::span<const FeatureMap>(&m, 1), c, w);
    const auto b = head_forward(std::span<const FeatureMap>(&p, 1), c, w);
    for (int k = 0; k < 3; ++k) ASSERT_NEAR(a[k], b[k], 1e-12);
  }
}

TEST(HeadForward, ArgmaxInvariantToLogitShift) {
  const int d = 4, n = 5;
  const HeadConfig c = config(HeadKind::cls_linear, n);
  for (int t = 0; t < 20; ++t) {
    auto w = random_weights(parameter_count(c, d), 60 + t);
    const auto s = random_sample(1, d, 70 + t);
    const auto a = head_output(c, w, s);
    for (int k = 0; k < n; ++k) w[n * d + k] += 17.25;
    const auto b = head_output(c, w, s);
    EXPECT_EQ(std::max_element(a.begin(), a.end()) - a.begin(), std::max_element(b.begin(), b.end()) - b.begin());
  }
}

TEST(GradientCheck, ClsLinearMse) {
  const int d = 6;
  const HeadConfig c = config(HeadKind::cls_linear, 2);
  TrainingSet ts;
  SplitMix64 g(1);
  for (int i = 0; i < 12; ++i) {
    ts.inputs.push_back(random_sample(1, d, 80 + i));
    ts.values.push_back(g.normal());
    ts.values.push_back(g.normal());
  }
  EXPECT_LT(gradient_check(c, random_weights(parameter_count(c, d), 2), ts, Objective::mse), 1e-6);
}

TEST(GradientCheck, AttentionCrossEntropy) {
  const int d = 5;
  for (HeadKind k : {HeadKind::attention_pool, HeadKind::mask_attention}) {
    const HeadConfig c = config(k, 3);
    TrainingSet ts;
    for (int i = 0; i < 8; ++i) {
      ts.inputs.push_back(random_sample(2 + i % 4, d, 90 + i));
      ts.labels.push_back(i % 3);
    }
    EXPECT_LT(gradient_check(c, random_weights(parameter_count(c, d), 3, 0.5), ts, Objective::cross_entropy), 1e-4);
  }
}

TEST(GradientCheck, PooledAndMlp) {
  const int d = 4;
  TrainingSet ce, reg;
  SplitMix64 g(4);
  for (int i = 0; i < 10; ++i) {
    ce.inputs.push_back(random_sample(1, d, 110 + i));
    ce.labels.push_back(i % 2);
    reg.inputs.push_back(random_sample(1, d, 130 + i));
    reg.values.push_back(g.normal());
  }
  const HeadConfig lin = config(HeadKind::patch_pool_linear, 2, PoolMode::mean);
  EXPECT_LT(gradient_check(lin, random_weights(parameter_count(lin, d), 5), ce, Objective::cross_entropy), 1e-4);
  const HeadConfig mlp = config(HeadKind::mlp_regression, 1, std::nullopt, 6);
  auto w = random_weights(parameter_count(mlp, d), 6, 0.7);
  // running statistics: mean 0, variance 1
  for (int i = trainable_count(mlp, d); i < parameter_count(mlp, d); ++i) w[i] = ((i - trainable_count(mlp, d)) / 6) % 2;
  EXPECT_LT(gradient_check(mlp, w, reg, Objective::mse), 1e-4);
}

TEST(GradientCheck, StationaryAtPerfectFit) {
  const int d = 3;
  const HeadConfig c = config(HeadKind::cls_linear, 1);
  const auto w = random_weights(parameter_count(c, d), 8);
  TrainingSet ts;
  std::vector<std::size_t> idx;
  for (int i = 0; i < 6; ++i) {
    ts.inputs.push_back(random_sample(1, d, 150 + i));
    ts.values.push_back(head_output(c, w, ts.inputs.back())[0]);
    idx.push_back(i);
  }
  std::vector<double> grad(w.size());
  const double loss = batch_loss(c, w, ts, idx, Objective::mse, grad);
  EXPECT_LT(loss, 1e-20);
  double norm = 0;
  for (double v : grad) norm += v * v;
  EXPECT_LT(std::sqrt(norm), 1e-8);
}

TEST(Train, SeparableClassesReachFullValidationAccuracy) {
  const TrainingSet all = toy_class_set(3, 50, 1);
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < all.size(); ++i) (i < 120 ? tr : va).push_back(i);
  TrainConfig tc;
  tc.seed = 0;
  const HeadConfig c = config(HeadKind::cls_linear, 3);
  const TrainedHead h = train_head(all.subset(tr), all.subset(va), c, tc, Objective::cross_entropy, Selection::accuracy);
  EXPECT_EQ(h.val_score, 1.0);
  EXPECT_EQ(h.candidates.size(), 10u);
  EXPECT_NE(std::find(tc.lr_grid.begin(), tc.lr_grid.end(), h.best_lr), tc.lr_grid.end());
  EXPECT_EQ(static_cast<int>(h.weights.size()), parameter_count(c, 32));
  for (double w : h.weights) EXPECT_TRUE(std::isfinite(w));
}

TEST(Train, DeterministicGivenSeed) {
  const TrainingSet all = toy_class_set(2, 20, 2, 16);
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < all.size(); ++i) (i < 30 ? tr : va).push_back(i);
  TrainConfig tc;
  tc.seed = 4;
  tc.epochs = 10;
  tc.batch_size = 8;
  for (HeadConfig c : {config(HeadKind::cls_linear, 2), config(HeadKind::attention_pool, 2)}) {
    const auto a = train_head(all.subset(tr), all.subset(va), c, tc, Objective::cross_entropy, Selection::accuracy);
    const auto b = train_head(all.subset(tr), all.subset(va), c, tc, Objective::cross_entropy, Selection::accuracy);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.epoch_losses, b.epoch_losses);
    EXPECT_EQ(a.best_lr, b.best_lr);
    EXPECT_EQ(a.epoch_losses.size(), 10u);
  }
}

TEST(Train, SingleClassIsLabelError) {
  TrainingSet ts;
  for (int i = 0; i < 5; ++i) {
    ts.inputs.push_back(random_sample(1, 3, i));
    ts.labels.push_back(1);
  }
  try {
    train_head(ts, ts, config(HeadKind::cls_linear, 2), TrainConfig{}, Objective::cross_entropy, Selection::accuracy);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::label);
  }
}

TEST(Train, ConfigValidation) {
  TrainConfig tc;
  EXPECT_EQ(tc.lr_grid.size(), 10u);
  EXPECT_NEAR(tc.lr_grid.front(), 1e-4, 1e-18);
  EXPECT_NEAR(tc.lr_grid.back(), 10.0, 1e-12);
  EXPECT_NO_THROW(tc.validate());
  tc.lr_grid.pop_back();
  EXPECT_THROW(tc.validate(), Error);
  tc = TrainConfig{};
  std::swap(tc.lr_grid[0], tc.lr_grid[1]);
  EXPECT_THROW(tc.validate(), Error);
  tc = TrainConfig{};
  tc.momentum = 1.0;
  EXPECT_THROW(tc.validate(), Error);
  HeadConfig hc = config(HeadKind::patch_pool_linear, 2);
  EXPECT_THROW(hc.validate(), Error);  // pooled kind needs a pooling mode
  hc = config(HeadKind::cls_linear, 2, PoolMode::mean);
  EXPECT_THROW(hc.validate(), Error);
  hc = config(HeadKind::cls_linear, 0);
  EXPECT_THROW(hc.validate(), Error);
}

TEST(Train, RegressionMlpLearns) {
  // y = 3 x0 - x1 + noise on random inputs
  TrainingSet tr, va;
  SplitMix64 g(9);
  for (int i = 0; i < 200; ++i) {
    auto s = random_sample(1, 4, 300 + i);
    const double y = 3 * s.tokens[0] - s.tokens[1] + 0.05 * g.normal();
    (i < 150 ? tr : va).inputs.push_back(s);
    (i < 150 ? tr : va).values.push_back(y);
  }
  TrainConfig tc;
  tc.batch_size = 32;
  const HeadConfig c = config(HeadKind::mlp_regression, 1, std::nullopt, 16);
  const TrainedHead h = train_head(tr, va, c, tc, Objective::mse, Selection::neg_mse);
  EXPECT_GT(h.val_score, -0.5);  // target variance is 10
}

TEST(HeadFile, RoundTrip) {
  oracle::TempDir dir("head1");
  TrainedHead h;
  h.config = config(HeadKind::mask_pool_linear, 3, PoolMode::max);
  h.input_dim = 4;
  h.weights = random_weights(parameter_count(h.config, 4), 3);
  h.best_lr = 0.01;
  h.val_score = 0.875;
  h.seed = 42;
  write_trained_head(h, dir.path / "h.head");
  const TrainedHead r = read_trained_head(dir.path / "h.head");
  EXPECT_EQ(r.config.kind, h.config.kind);
  EXPECT_EQ(r.config.pooling, h.config.pooling);
  EXPECT_EQ(r.config.n_outputs, 3);
  EXPECT_EQ(r.input_dim, 4);
  EXPECT_EQ(r.best_lr, 0.01);
  EXPECT_EQ(r.val_score, 0.875);
  EXPECT_EQ(r.seed, 42u);
  ASSERT_EQ(r.weights.size(), h.weights.size());
  for (std::size_t i = 0; i < h.weights.size(); ++i) EXPECT_EQ(r.weights[i], static_cast<double>(static_cast<float>(h.weights[i])));
  // second trip is lossless
  write_trained_head(r, dir.path / "h2.head");
  EXPECT_EQ(read_trained_head(dir.path / "h2.head").weights, r.weights);
  std::ofstream(dir.path / "bad.head") << "HEAD2";
  EXPECT_THROW(read_trained_head(dir.path / "bad.head"), Error);
}
