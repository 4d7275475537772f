#include "fmbench/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "fmbench/common.hpp"
#include "fmbench/feature_dump.hpp"
#include "fmbench/manifest.hpp"

namespace fmbench::synth {

namespace fs = std::filesystem;

std::vector<double> class_pattern(int cls, std::uint64_t seed) {
  SplitMix64 rng(mix_seed(seed, 0xC1A55, static_cast<std::uint64_t>(cls)));
  std::vector<double> p(256);
  for (double& v : p) v = rng.uniform(-1.0, 1.0);
  return p;
}

namespace {

Split split_for(int i, int n, double train_frac, double val_frac) {
  const int n_train = static_cast<int>(std::lround(train_frac * n));
  const int n_val = static_cast<int>(std::lround(val_frac * n));
  if (i < n_train) return Split::train;
  if (i < n_train + n_val) return Split::val;
  return Split::test;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

fs::path write_class_corpus(const fs::path& dir, const ClassCorpusOptions& o) {
  if (o.n_classes < 1 || o.per_class < 1 || o.size < 16 || o.size % 16 != 0)
    throw Error(ErrorKind::config, "invalid class corpus options");
  fs::create_directories(dir / "images");
  Manifest m;
  m.base_dir = dir;
  const std::vector<double> background = class_pattern(-1, o.seed);
  for (int c = 0; c < o.n_classes; ++c) {
    const std::vector<double> pattern = class_pattern(c, o.seed);
    for (int i = 0; i < o.per_class; ++i) {
      SplitMix64 rng(mix_seed(o.seed, static_cast<std::uint64_t>(c) + 1, static_cast<std::uint64_t>(i)));
      char name[64];
      std::snprintf(name, sizeof name, "%s_c%d_%04d", o.prefix.c_str(), c, i);
      RasterVolume img(1, o.size, o.size);
      img.volume_id = name;
      img.modality = o.modality;
      LabelMask mask(1, o.size, o.size);
      int oy = 0, ox = 0;
      const int side = o.size / 2;
      if (o.with_masks) {
        const int cells = (o.size - side) / 16;
        oy = 16 * static_cast<int>(rng.below(static_cast<std::uint64_t>(cells) + 1));
        ox = 16 * static_cast<int>(rng.below(static_cast<std::uint64_t>(cells) + 1));
      }
      for (int y = 0; y < o.size; ++y)
        for (int x = 0; x < o.size; ++x) {
          const bool inside = !o.with_masks || (y >= oy && y < oy + side && x >= ox && x < ox + side);
          const auto& p = inside ? pattern : background;
          img.at(0, y, x) = static_cast<float>(p[(y % 16) * 16 + x % 16] + o.noise * rng.normal());
          if (o.with_masks && inside) mask.at(y, x) = 1;
        }
      const std::string vol_rel = std::string("images/") + name + ".json";
      write_volume(img, dir / vol_rel);
      ManifestRow row;
      row.sample_id = name;
      row.volume_path = vol_rel;
      row.z_index = 0;
      if (o.with_masks) {
        row.mask_path = std::string("images/") + name + "_mask.json";
        write_volume(label_mask_to_volume(mask), dir / row.mask_path);
        row.mask_label = 1;
      }
      row.label = "c" + std::to_string(c);
      row.split = split_for(i, o.per_class, o.train_frac, o.val_frac);
      row.modality = o.modality;
      row.group_id = name;
      m.rows.push_back(std::move(row));
    }
  }
  const fs::path manifest = dir / "manifest.csv";
  write_manifest(m, manifest);
  return manifest;
}

fs::path write_regression_corpus(const fs::path& dir, int n, int size, std::uint64_t seed) {
  if (n < 5 || size < 16 || size % 16 != 0) throw Error(ErrorKind::config, "invalid regression corpus options");
  fs::create_directories(dir / "images");
  const std::vector<double> a = class_pattern(100, seed), b = class_pattern(101, seed);
  Manifest m;
  m.base_dir = dir;
  for (int i = 0; i < n; ++i) {
    SplitMix64 rng(mix_seed(seed, 0x5E6, static_cast<std::uint64_t>(i)));
    const double v = rng.uniform();
    char name[64];
    std::snprintf(name, sizeof name, "reg_%04d", i);
    RasterVolume img(1, size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const int k = (y % 16) * 16 + x % 16;
        img.at(0, y, x) = static_cast<float>(v * a[k] + (1.0 - v) * b[k] + 0.05 * rng.normal());
      }
    const std::string rel = std::string("images/") + name + ".json";
    write_volume(img, dir / rel);
    ManifestRow row;
    row.sample_id = name;
    row.volume_path = rel;
    row.z_index = 0;
    row.label = fmt(100.0 * v);
    row.split = split_for(i, n, 0.6, 0.2);
    row.group_id = name;
    m.rows.push_back(std::move(row));
  }
  const fs::path manifest = dir / "manifest.csv";
  write_manifest(m, manifest);
  return manifest;
}

std::vector<CohortSubject> make_survival_cohort(int n, int dim, double beta, std::uint64_t seed) {
  if (n < 5 || dim < 1) throw Error(ErrorKind::config, "invalid cohort options");
  std::vector<CohortSubject> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SplitMix64 rng(mix_seed(seed, 0x5A7, static_cast<std::uint64_t>(i)));
    auto& s = out[i];
    s.features.resize(static_cast<std::size_t>(dim));
    for (double& f : s.features) f = rng.normal();
    const double rate = 0.01 * std::exp(beta * s.features[0]);
    const double t_event = -std::log(1.0 - rng.uniform()) / rate;
    const double t_censor = -std::log(1.0 - rng.uniform()) / 0.004;
    s.time = std::max(std::min(t_event, t_censor), 1e-3);
    s.event = t_event <= t_censor ? 1 : 0;
    s.split = split_for(i, n, 0.6, 0.2);
  }
  return out;
}

TrainingSet cohort_training_set(const std::vector<CohortSubject>& cohort, Split split) {
  TrainingSet t;
  for (const auto& s : cohort) {
    if (s.split != split) continue;
    HeadSample h;
    h.count = 1;
    h.dim = static_cast<int>(s.features.size());
    h.tokens = s.features;
    t.inputs.push_back(std::move(h));
    t.times.push_back(s.time);
    t.events.push_back(s.event);
  }
  return t;
}

fs::path write_survival_corpus(const fs::path& dir, int n, int dim, double beta, std::uint64_t seed) {
  fs::create_directories(dir);
  const auto cohort = make_survival_cohort(n, dim, beta, seed);
  std::vector<FeatureMap> maps;
  std::ofstream csv(dir / "survival.csv", std::ios::binary);
  if (!csv) throw Error(ErrorKind::io, "cannot write " + (dir / "survival.csv").string());
  csv << "subject_id,time_days,event,feature_ref,split,group_id\n";
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "subj%04d", i);
    FeatureMap m;
    m.descriptor = {"synthetic-cohort", 16, 16, dim};
    m.grid_h = m.grid_w = 1;
    m.class_token.assign(cohort[i].features.begin(), cohort[i].features.end());
    m.patch_tokens = m.class_token;
    m.sample_id = name;
    m.volume_id = name;
    maps.push_back(std::move(m));
    csv << name << ',' << fmt(cohort[i].time) << ',' << cohort[i].event << ',' << name << ','
        << split_name(cohort[i].split) << ',' << name << '\n';
  }
  write_feature_dump(maps, dir / "features.fmfd");
  return dir / "survival.csv";
}

FeatureVolume smooth_feature_volume(int depth, int height, int width, int dim, std::array<double, 3> shift,
                                    std::uint64_t seed) {
  if (depth < 1 || height < 1 || width < 1 || dim < 1) throw Error(ErrorKind::config, "invalid volume shape");
  if (height != width) throw Error(ErrorKind::config, "smooth feature volumes are square in-plane");
  SplitMix64 rng(mix_seed(seed, 0x5300));
  std::vector<std::array<double, 4>> waves(static_cast<std::size_t>(dim));  // kz, ky, kx, phase
  for (auto& w : waves) {
    double dz = rng.normal(), dy = rng.normal(), dx = rng.normal();
    const double norm = std::sqrt(dz * dz + dy * dy + dx * dx);
    const double k = 2.0 * std::numbers::pi / rng.uniform(12.0, 24.0);
    w = {k * dz / norm, k * dy / norm, k * dx / norm, rng.uniform(0.0, 2.0 * std::numbers::pi)};
  }
  FeatureVolume v;
  v.descriptor = {"synthetic-smooth", width * 16, 16, dim};
  v.depth = depth;
  v.grid_h = height;
  v.grid_w = width;
  v.volume_id = "smooth";
  v.patch_tokens.resize(static_cast<std::size_t>(depth) * height * width * dim);
  v.class_tokens.assign(static_cast<std::size_t>(depth) * dim, 0.0f);
  for (int z = 0; z < depth; ++z) {
    std::vector<double> mean(static_cast<std::size_t>(dim), 0.0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        float* t = v.patch_tokens.data() + v.dims().index(z, y, x) * dim;
        for (int c = 0; c < dim; ++c) {
          const auto& w = waves[c];
          t[c] = static_cast<float>(std::sin(w[0] * (z - shift[0]) + w[1] * (y - shift[1]) + w[2] * (x - shift[2]) + w[3]));
          mean[c] += t[c];
        }
      }
    for (int c = 0; c < dim; ++c) v.class_tokens[static_cast<std::size_t>(z) * dim + c] = static_cast<float>(mean[c] / (height * width));
  }
  return v;
}

LabelMask sphere_labels(int depth, int height, int width, int n_labels, double radius, std::array<double, 3> shift,
                        std::uint64_t seed) {
  SplitMix64 rng(mix_seed(seed, 0x5F4));
  LabelMask m(depth, height, width);
  const double margin = radius + 3.0;
  for (int l = 1; l <= n_labels; ++l) {
    const double cz = rng.uniform(margin, depth - margin) + shift[0];
    const double cy = rng.uniform(margin, height - margin) + shift[1];
    const double cx = rng.uniform(margin, width - margin) + shift[2];
    for (int z = 0; z < depth; ++z)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double d2 = (z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx);
          if (d2 <= radius * radius) m.at(z, y, x) = l;
        }
  }
  return m;
}

std::vector<FeatureMap> volume_to_maps(const FeatureVolume& v) {
  std::vector<FeatureMap> out;
  const std::size_t d = static_cast<std::size_t>(v.dim());
  const std::size_t plane = static_cast<std::size_t>(v.grid_h) * v.grid_w * d;
  for (int z = 0; z < v.depth; ++z) {
    FeatureMap m;
    m.descriptor = v.descriptor;
    m.grid_h = v.grid_h;
    m.grid_w = v.grid_w;
    m.class_token.assign(v.class_tokens.begin() + static_cast<std::ptrdiff_t>(z * d),
                         v.class_tokens.begin() + static_cast<std::ptrdiff_t>((z + 1) * d));
    m.patch_tokens.assign(v.patch_tokens.begin() + static_cast<std::ptrdiff_t>(z * plane),
                          v.patch_tokens.begin() + static_cast<std::ptrdiff_t>((z + 1) * plane));
    m.sample_id = volume_slice_record_id(v.volume_id, z);
    m.volume_id = v.volume_id;
    m.z_index = z;
    out.push_back(std::move(m));
  }
  return out;
}

void write_random_feature_dump(const std::vector<std::string>& sample_ids, int dim, int grid, std::uint64_t seed,
                               const fs::path& path) {
  std::vector<FeatureMap> maps;
  for (const auto& id : sample_ids) {
    SplitMix64 rng(mix_seed(seed, hash_string(id)));
    FeatureMap m;
    m.descriptor = {"random", grid * 16, 16, dim};
    m.grid_h = m.grid_w = grid;
    m.class_token.resize(static_cast<std::size_t>(dim));
    m.patch_tokens.resize(static_cast<std::size_t>(grid) * grid * dim);
    for (float& f : m.patch_tokens) f = static_cast<float>(rng.normal());
    for (float& f : m.class_token) f = static_cast<float>(rng.normal());
    m.sample_id = id;
    m.volume_id = id;
    maps.push_back(std::move(m));
  }
  const EncoderDescriptor desc{"random", grid * 16, 16, dim};
  write_feature_dump(maps, path, desc);
}

}  // namespace fmbench::synth
