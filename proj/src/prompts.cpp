#include "fmbench/prompts.hpp"

#include <algorithm>
#include <deque>
#include <exception>
#include <fstream>
#include <limits>
#include <set>

#include "fmbench/common.hpp"
#include "fmbench/registration.hpp"
#include "json.hpp"
#include "process.hpp"

namespace fmbench {

namespace fs = std::filesystem;
using nlohmann::json;

PromptKind parse_prompt_kind(const std::string& s) {
  if (s == "box") return PromptKind::box;
  if (s == "point") return PromptKind::point;
  throw Error(ErrorKind::config, "unknown prompt kind '" + s + "'");
}

std::string prompt_kind_name(PromptKind k) { return k == PromptKind::box ? "box" : "point"; }

std::vector<std::uint8_t> binary_mask(const LabelMask& mask2d, int label) {
  if (mask2d.depth != 1) throw Error(ErrorKind::shape, "expected a 2D mask");
  std::vector<std::uint8_t> out(mask2d.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = label < 0 ? mask2d.data[i] != 0 : mask2d.data[i] == label;
  return out;
}

BoxPrompt tight_box(const std::vector<std::uint8_t>& mask, int height, int width) {
  if (mask.size() != static_cast<std::size_t>(height) * width) throw Error(ErrorKind::shape, "mask size mismatch");
  BoxPrompt b{width, height, 0, 0};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (mask[static_cast<std::size_t>(y) * width + x]) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
      }
  if (b.x1 == 0) throw Error(ErrorKind::empty_mask, "cannot box an empty mask");
  return b;
}

BoxSample synth_box_prompt(const std::vector<std::uint8_t>& mask, int height, int width, std::uint64_t seed) {
  const BoxPrompt tight = tight_box(mask, height, width);
  SplitMix64 rng(mix_seed(seed, 0xB0C5));
  BoxSample s;
  for (int attempt = 1; attempt <= kBoxMaxAttempts; ++attempt) {
    for (int& o : s.offsets) o = static_cast<int>(rng.between(kBoxOffsetMin, kBoxOffsetMax));
    BoxPrompt b{std::clamp(tight.x0 - s.offsets[0], 0, width), std::clamp(tight.y0 - s.offsets[1], 0, height),
                std::clamp(tight.x1 + s.offsets[2], 0, width), std::clamp(tight.y1 + s.offsets[3], 0, height)};
    s.attempts = attempt;
    if (b.x0 < b.x1 && b.y0 < b.y1) {
      s.box = b;
      return s;
    }
  }
  s.box = tight;
  s.offsets = {0, 0, 0, 0};
  s.fallback = true;
  return s;
}

std::vector<int> city_block_distance(const std::vector<std::uint8_t>& mask, int height, int width) {
  if (mask.size() != static_cast<std::size_t>(height) * width) throw Error(ErrorKind::shape, "mask size mismatch");
  const int inf = height + width + 2;
  std::vector<int> d(mask.size());
  auto at = [&](int y, int x) -> int {
    if (y < 0 || y >= height || x < 0 || x >= width) return 0;  // outside counts as background
    return d[static_cast<std::size_t>(y) * width + x];
  };
  for (std::size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? inf : 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int& v = d[static_cast<std::size_t>(y) * width + x];
      if (v) v = std::min({v, at(y - 1, x) + 1, at(y, x - 1) + 1});
    }
  for (int y = height - 1; y >= 0; --y)
    for (int x = width - 1; x >= 0; --x) {
      int& v = d[static_cast<std::size_t>(y) * width + x];
      if (v) v = std::min({v, at(y + 1, x) + 1, at(y, x + 1) + 1});
    }
  return d;
}

PointSample synth_point_prompt(const std::vector<std::uint8_t>& mask, int height, int width, std::uint64_t seed) {
  const std::vector<int> dist = city_block_distance(mask, height, width);
  std::vector<int> deep, all;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    all.push_back(static_cast<int>(i));
    if (dist[i] > kPointMinDistance) deep.push_back(static_cast<int>(i));
  }
  if (all.empty()) throw Error(ErrorKind::empty_mask, "cannot place a point in an empty mask");
  SplitMix64 rng(mix_seed(seed, 0x9017));
  PointSample s;
  s.fallback = deep.empty();
  const auto& pool = s.fallback ? all : deep;
  const int idx = pool[rng.below(pool.size())];
  s.point = {idx % width, idx / width};
  return s;
}

std::vector<std::uint8_t> ReferenceSegmenter::segment(const Slice2D& image, const Prompt& prompt) const {
  const int h = image.height, w = image.width;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w, 0);
  if (const auto* box = std::get_if<BoxPrompt>(&prompt)) {
    for (int y = std::max(0, box->y0); y < std::min(h, box->y1); ++y)
      for (int x = std::max(0, box->x0); x < std::min(w, box->x1); ++x) out[static_cast<std::size_t>(y) * w + x] = 1;
    return out;
  }
  const auto& pt = std::get<PointPrompt>(prompt);
  if (pt.x < 0 || pt.x >= w || pt.y < 0 || pt.y >= h) return out;
  std::vector<double> sorted = image.data;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  double median = sorted[sorted.size() / 2];
  if (sorted.size() % 2 == 0) {
    const double below = *std::max_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2));
    median = 0.5 * (median + below);
  }
  auto bright = [&](int y, int x) { return image.at(y, x) > median; };
  if (!bright(pt.y, pt.x)) return out;
  std::deque<std::pair<int, int>> queue{{pt.y, pt.x}};
  out[static_cast<std::size_t>(pt.y) * w + pt.x] = 1;
  while (!queue.empty()) {
    const auto [y, x] = queue.front();
    queue.pop_front();
    const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
    for (int k = 0; k < 4; ++k) {
      if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
      auto& o = out[static_cast<std::size_t>(ny[k]) * w + nx[k]];
      if (o || !bright(ny[k], nx[k])) continue;
      o = 1;
      queue.emplace_back(ny[k], nx[k]);
    }
  }
  return out;
}

std::string prompt_to_json(const Prompt& prompt) {
  json j;
  if (const auto* b = std::get_if<BoxPrompt>(&prompt)) {
    j = {{"kind", "box"}, {"x0", b->x0}, {"y0", b->y0}, {"x1", b->x1}, {"y1", b->y1}};
  } else {
    const auto& p = std::get<PointPrompt>(prompt);
    j = {{"kind", "point"}, {"x", p.x}, {"y", p.y}};
  }
  return j.dump();
}

Prompt prompt_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "box")
      return BoxPrompt{j.at("x0").get<int>(), j.at("y0").get<int>(), j.at("x1").get<int>(), j.at("y1").get<int>()};
    if (kind == "point") return PointPrompt{j.at("x").get<int>(), j.at("y").get<int>()};
    throw Error(ErrorKind::protocol, "unknown prompt kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::protocol, std::string("malformed prompt JSON: ") + e.what());
  }
}

std::vector<std::uint8_t> SubprocessSegmenter::segment(const Slice2D& image, const Prompt& prompt) const {
  detail::TempDir tmp;
  RasterVolume v(1, image.height, image.width);
  for (std::size_t i = 0; i < image.data.size(); ++i) v.data[i] = static_cast<float>(image.data[i]);
  const fs::path image_path = tmp.path / "image.json", prompt_path = tmp.path / "prompt.json",
                 out_path = tmp.path / "out.json";
  write_volume(v, image_path);
  {
    std::ofstream f(prompt_path);
    f << prompt_to_json(prompt) << '\n';
  }
  const auto [code, out] = detail::run_command(command_ + " " + detail::shell_quote(image_path.string()) + " " +
                                               detail::shell_quote(prompt_path.string()) + " " +
                                               detail::shell_quote(out_path.string()));
  if (code != 0) throw Error(ErrorKind::protocol, "segmenter plugin exited with status " + std::to_string(code));
  RasterVolume mask;
  try {
    mask = load_volume(out_path);
  } catch (const Error& e) {
    throw Error(ErrorKind::protocol, std::string("segmenter output unreadable: ") + e.what());
  }
  if (mask.depth != 1 || mask.height != image.height || mask.width != image.width)
    throw Error(ErrorKind::protocol, "segmenter output shape mismatch");
  std::vector<std::uint8_t> result(mask.data.size());
  for (std::size_t i = 0; i < result.size(); ++i) result[i] = mask.data[i] > 0.5f;
  return result;
}

std::unique_ptr<PromptSegmenter> make_segmenter(const std::string& spec) {
  if (spec == "reference") return std::make_unique<ReferenceSegmenter>();
  if (spec.rfind("plugin:", 0) == 0 && spec.size() > 7) return std::make_unique<SubprocessSegmenter>(spec.substr(7));
  throw Error(ErrorKind::config, "segmenter spec must be 'reference' or 'plugin:<command>'");
}

namespace {

struct PendingInstance {
  PromptInstance result;
  Slice2D image;
  std::vector<std::uint8_t> truth;
};

}  // namespace

PromptEvalResult evaluate_prompted(const Manifest& manifest, const PromptSegmenter& segmenter, PromptKind kind,
                                   std::uint64_t seed) {
  std::vector<PendingInstance> pending;
  for (const auto& row : manifest.rows) {
    if (row.mask_path.empty()) throw Error(ErrorKind::empty_mask, "sample '" + row.sample_id + "' has no mask_path");
    const RasterVolume volume = load_volume(manifest.resolve(row.volume_path), row.modality);
    const LabelMask labels = load_label_volume(manifest.resolve(row.mask_path));
    const int n_slices = row.acq_axis == SliceAxis::z ? volume.depth
                         : row.acq_axis == SliceAxis::y ? volume.height
                                                        : volume.width;
    std::vector<int> zs;
    if (row.z_index) zs.push_back(*row.z_index);
    else
      for (int z = 0; z < n_slices; ++z) zs.push_back(z);
    for (int z : zs) {
      Slice2D image = extract_slice(volume, row.acq_axis, z);
      if (row.window) image = apply_window(image, row.window->first, row.window->second);
      const LabelMask m = extract_mask_slice(labels, row.acq_axis, z);
      if (m.height != image.height || m.width != image.width)
        throw Error(ErrorKind::shape, "mask of '" + row.sample_id + "' does not match its image");
      std::set<int> present;
      for (auto v : m.data)
        if (v != 0 && (!row.mask_label || v == *row.mask_label)) present.insert(v);
      const std::string id = row.z_index ? row.sample_id : volume_slice_record_id(row.sample_id, z);
      for (int label : present) {
        PendingInstance p;
        p.result.sample_id = id;
        p.result.label = label;
        p.truth = binary_mask(m, label);
        p.image = image;
        pending.push_back(std::move(p));
      }
    }
  }
  if (pending.empty()) throw Error(ErrorKind::empty_mask, "no labelled instance in the manifest");

  const int n = static_cast<int>(pending.size());
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    PendingInstance& p = pending[i];
    try {
      const std::uint64_t s = mix_seed(seed, hash_string(p.result.sample_id), static_cast<std::uint64_t>(p.result.label));
      if (kind == PromptKind::box) {
        const BoxSample b = synth_box_prompt(p.truth, p.image.height, p.image.width, s);
        p.result.prompt = b.box;
        p.result.fallback = b.fallback;
      } else {
        const PointSample pt = synth_point_prompt(p.truth, p.image.height, p.image.width, s);
        p.result.prompt = pt.point;
        p.result.fallback = pt.fallback;
      }
      std::vector<std::uint8_t> predicted;
      try {
        predicted = segmenter.segment(p.image, p.result.prompt);
      } catch (const Error& e) {
        throw Error(e.kind(), "sample '" + p.result.sample_id + "': " + e.what());
      }
      if (predicted.size() != p.truth.size())
        throw Error(ErrorKind::protocol, "sample '" + p.result.sample_id + "': segmenter output shape mismatch");
      p.result.dsc = dice(predicted, p.truth);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  PromptEvalResult res;
  res.kind = kind;
  std::map<int, std::pair<double, int>> sums;
  for (auto& p : pending) {
    auto& s = sums[p.result.label];
    s.first += p.result.dsc;
    ++s.second;
    res.n_fallback += p.result.fallback;
    res.instances.push_back(std::move(p.result));
  }
  double total = 0.0;
  for (const auto& [label, s] : sums) {
    res.per_label[label] = s.first / s.second;
    total += res.per_label[label];
  }
  res.overall = total / static_cast<double>(res.per_label.size());
  return res;
}

}  // namespace fmbench
