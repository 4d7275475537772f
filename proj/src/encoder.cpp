#include "fmbench/encoder.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fmbench/common.hpp"
#include "fmbench/feature_dump.hpp"
#include "fmbench/kernels.hpp"
#include "process.hpp"

namespace fmbench {

namespace fs = std::filesystem;

void EncoderDescriptor::validate() const {
  if (embed_dim < 1) throw Error(ErrorKind::config, "embed_dim must be >= 1");
  PatchGrid::make(input_resolution, patch_size);
}

void FeatureMap::validate() const {
  descriptor.validate();
  if (grid_h != descriptor.grid() || grid_w != descriptor.grid())
    throw Error(ErrorKind::shape, "feature grid does not match descriptor");
  if (class_token.size() != static_cast<std::size_t>(dim()))
    throw Error(ErrorKind::shape, "class token length does not match embed_dim");
  if (patch_tokens.size() != static_cast<std::size_t>(cells()) * dim())
    throw Error(ErrorKind::shape, "patch token array does not match grid x embed_dim");
  for (float v : class_token)
    if (!std::isfinite(v)) throw Error(ErrorKind::data, "non-finite class token");
  for (float v : patch_tokens)
    if (!std::isfinite(v)) throw Error(ErrorKind::data, "non-finite patch token");
}

std::vector<FeatureMap> Encoder::encode_batch(const std::vector<Slice2D>& slices) const {
  std::vector<FeatureMap> out;
  out.reserve(slices.size());
  for (const auto& s : slices) out.push_back(encode_slice(s, *this));
  return out;
}

FeatureMap encode_slice(const Slice2D& slice, const Encoder& encoder) {
  const auto& d = encoder.descriptor();
  if (slice.height != d.input_resolution || slice.width != d.input_resolution)
    throw Error(ErrorKind::shape, "slice " + std::to_string(slice.height) + "x" + std::to_string(slice.width) +
                                      " does not match encoder resolution " + std::to_string(d.input_resolution));
  FeatureMap map = encoder.encode(slice);
  map.volume_id = slice.volume_id;
  map.z_index = slice.z_index;
  return map;
}

// ---------------------------------------------------------------------------

namespace {

constexpr float kBiasScale = 0.1f;
constexpr float kPositionalScale = 0.1f;

std::string toy_encoder_id(std::uint64_t seed, int dim, int res, int patch) {
  return "toy:seed=" + std::to_string(seed) + ",dim=" + std::to_string(dim) + ",res=" + std::to_string(res) +
         ",patch=" + std::to_string(patch);
}

}  // namespace

ToyEncoder::ToyEncoder(std::uint64_t seed, int embed_dim, int input_resolution, int patch_size)
    : seed_(seed), descriptor_{toy_encoder_id(seed, embed_dim, input_resolution, patch_size), input_resolution,
                               patch_size, embed_dim} {
  descriptor_.validate();
  const int k = patch_size * patch_size;
  // Unit-variance uniform entries scaled by 1/sqrt(K).
  const double scale = std::sqrt(3.0) / std::sqrt(static_cast<double>(k));
  SplitMix64 w_rng(mix_seed(seed, 1));
  projection_.resize(static_cast<std::size_t>(embed_dim) * k);
  for (float& w : projection_) w = static_cast<float>(w_rng.uniform(-1.0, 1.0) * scale);
  SplitMix64 b_rng(mix_seed(seed, 2));
  bias_.resize(static_cast<std::size_t>(embed_dim));
  for (float& b : bias_) b = static_cast<float>(b_rng.uniform(-1.0, 1.0)) * kBiasScale;
}

std::vector<float> ToyEncoder::positional_code(int row, int col) const {
  SplitMix64 rng(mix_seed(seed_, 3, (static_cast<std::uint64_t>(row) << 32) | static_cast<std::uint32_t>(col)));
  std::vector<float> code(static_cast<std::size_t>(descriptor_.embed_dim));
  for (float& c : code) c = static_cast<float>(rng.uniform(-1.0, 1.0)) * kPositionalScale;
  return code;
}

FeatureMap ToyEncoder::encode(const Slice2D& slice) const {
  const int res = descriptor_.input_resolution, p = descriptor_.patch_size, d = descriptor_.embed_dim;
  if (slice.height != res || slice.width != res)
    throw Error(ErrorKind::shape, "toy encoder expects " + std::to_string(res) + "x" + std::to_string(res) + " input");
  const int g = res / p, k = p * p, n = g * g;
  std::vector<double> patches(static_cast<std::size_t>(n) * k);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      double* dst = patches.data() + static_cast<std::size_t>(gy * g + gx) * k;
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px) dst[py * p + px] = slice.at(gy * p + py, gx * p + px);
    }
  std::vector<double> projected(static_cast<std::size_t>(n) * d);
  kernels::omp::project_patches(patches, projection_, bias_, k, d, projected);

  FeatureMap map;
  map.descriptor = descriptor_;
  map.grid_h = g;
  map.grid_w = g;
  map.patch_tokens.resize(projected.size());
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      const std::vector<float> pos = positional_code(gy, gx);
      const std::size_t base = static_cast<std::size_t>(gy * g + gx) * d;
      for (int j = 0; j < d; ++j) {
        const float v = static_cast<float>(projected[base + j] + pos[j]);
        map.patch_tokens[base + j] = v;
        mean[j] += v;
      }
    }
  map.class_token.resize(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) map.class_token[j] = static_cast<float>(mean[j] / n);
  map.volume_id = slice.volume_id;
  map.z_index = slice.z_index;
  return map;
}

FeatureMap toy_encode(const Slice2D& slice, std::uint64_t seed, int embed_dim) {
  if (slice.height != slice.width || slice.height % 16 != 0 || slice.height == 0)
    throw Error(ErrorKind::shape, "toy_encode needs a square slice with side divisible by 16");
  return ToyEncoder(seed, embed_dim, slice.height, 16).encode(slice);
}

// ---------------------------------------------------------------------------
// subprocess plugin

SubprocessEncoder::SubprocessEncoder(std::string command, EncoderDescriptor descriptor)
    : command_(std::move(command)), descriptor_(std::move(descriptor)) {
  descriptor_.validate();
}

FeatureMap SubprocessEncoder::encode(const Slice2D& slice) const { return encode_batch({slice}).front(); }

std::vector<FeatureMap> SubprocessEncoder::encode_batch(const std::vector<Slice2D>& slices) const {
  if (slices.empty()) return {};
  detail::TempDir tmp;
  const fs::path list = tmp.path / "slices.tsv";
  {
    std::ofstream out(list);
    for (std::size_t i = 0; i < slices.size(); ++i) {
      const Slice2D& s = slices[i];
      if (s.height != descriptor_.input_resolution || s.width != descriptor_.input_resolution)
        throw Error(ErrorKind::shape, "slice does not match plugin encoder resolution");
      RasterVolume v(1, s.height, s.width);
      for (std::size_t j = 0; j < s.data.size(); ++j) v.data[j] = static_cast<float>(s.data[j]);
      const fs::path sidecar = tmp.path / ("s" + std::to_string(i) + ".json");
      write_volume(v, sidecar);
      out << "s" << i << '\t' << sidecar.string() << '\n';
    }
  }
  const auto [code, stdout_text] = detail::run_command(command_ + " " + detail::shell_quote(list.string()));
  if (code != 0) throw Error(ErrorKind::protocol, "encoder plugin exited with status " + std::to_string(code));
  std::istringstream lines(stdout_text);
  std::string line, last;
  while (std::getline(lines, line))
    if (!line.empty()) last = line;
  if (last.empty()) throw Error(ErrorKind::protocol, "encoder plugin printed no dump path");

  const std::vector<FeatureMap> dumped = read_feature_dump(fs::path(last));
  std::map<std::string, const FeatureMap*> by_id;
  for (const auto& m : dumped) by_id[m.sample_id] = &m;
  std::vector<FeatureMap> out;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    auto it = by_id.find("s" + std::to_string(i));
    if (it == by_id.end()) throw Error(ErrorKind::protocol, "plugin dump lacks record s" + std::to_string(i));
    FeatureMap m = *it->second;
    if (m.dim() != descriptor_.embed_dim || m.grid_h != descriptor_.grid())
      throw Error(ErrorKind::protocol, "plugin output does not match the declared descriptor");
    m.descriptor = descriptor_;
    m.volume_id = slices[i].volume_id;
    m.z_index = slices[i].z_index;
    m.sample_id.clear();
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<PluginSliceEntry> read_plugin_list(const fs::path& list_file) {
  std::ifstream in(list_file);
  if (!in) throw Error(ErrorKind::io, "cannot open plugin list " + list_file.string());
  std::vector<PluginSliceEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorKind::format, "plugin list line lacks a tab: " + line);
    entries.push_back({line.substr(0, tab), fs::path(line.substr(tab + 1))});
  }
  return entries;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Encoder> make_encoder(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  std::map<std::string, std::string> kv;
  if (colon != std::string::npos) {
    std::string rest = spec.substr(colon + 1);
    while (!rest.empty()) {
      const auto eq = rest.find('=');
      if (eq == std::string::npos) throw Error(ErrorKind::config, "malformed encoder spec '" + spec + "'");
      const std::string key = rest.substr(0, eq);
      if (key == "cmd") {  // the command swallows the remainder, commas included
        kv[key] = rest.substr(eq + 1);
        break;
      }
      const auto comma = rest.find(',', eq);
      kv[key] = rest.substr(eq + 1, comma == std::string::npos ? std::string::npos : comma - eq - 1);
      rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
    }
  }
  auto get_int = [&](const std::string& key, int fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
      return std::stoi(it->second);
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, "encoder spec field '" + key + "' is not an integer");
    }
  };
  if (kind == "toy") {
    const auto seed_it = kv.find("seed");
    const std::uint64_t seed = seed_it == kv.end() ? 0 : std::stoull(seed_it->second);
    return std::make_unique<ToyEncoder>(seed, get_int("dim", 64), get_int("res", 512), get_int("patch", 16));
  }
  if (kind == "plugin") {
    auto cmd = kv.find("cmd");
    if (cmd == kv.end() || cmd->second.empty()) throw Error(ErrorKind::config, "plugin encoder spec needs cmd=");
    EncoderDescriptor d;
    d.input_resolution = get_int("res", 512);
    d.patch_size = get_int("patch", 16);
    d.embed_dim = get_int("dim", 768);
    d.encoder_id = kv.count("id") ? kv["id"] : "plugin:" + cmd->second;
    return std::make_unique<SubprocessEncoder>(cmd->second, d);
  }
  throw Error(ErrorKind::config, "unknown encoder kind '" + kind + "'");
}

}  // namespace fmbench
