#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "fmbench/imaging.hpp"
#include "fmbench/manifest.hpp"

namespace fmbench {

// Half-open pixel box [x0, x1) x [y0, y1).
struct BoxPrompt {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const BoxPrompt&) const = default;
};

struct PointPrompt {
  int x = 0, y = 0;
  bool operator==(const PointPrompt&) const = default;
};

using Prompt = std::variant<BoxPrompt, PointPrompt>;

enum class PromptKind { box, point };
PromptKind parse_prompt_kind(const std::string& s);
std::string prompt_kind_name(PromptKind k);

// Binary view of a 2D mask: pixels equal to `label` (or any nonzero when label < 0).
std::vector<std::uint8_t> binary_mask(const LabelMask& mask2d, int label = -1);

BoxPrompt tight_box(const std::vector<std::uint8_t>& mask, int height, int width);

inline constexpr int kBoxOffsetMin = -5;
inline constexpr int kBoxOffsetMax = 20;
inline constexpr int kBoxMaxAttempts = 100;

struct BoxSample {
  BoxPrompt box;
  std::array<int, 4> offsets{};  // left, top, right, bottom; positive enlarges
  int attempts = 0;
  bool fallback = false;  // tight box used after kBoxMaxAttempts degenerate draws
};

BoxSample synth_box_prompt(const std::vector<std::uint8_t>& mask, int height, int width, std::uint64_t seed);

// City-block distance to the nearest background pixel; pixels outside the
// image count as background.
std::vector<int> city_block_distance(const std::vector<std::uint8_t>& mask, int height, int width);

inline constexpr int kPointMinDistance = 2;  // eligible when distance > 2

struct PointSample {
  PointPrompt point;
  bool fallback = false;  // no pixel deep enough; drawn from the whole mask
};

PointSample synth_point_prompt(const std::vector<std::uint8_t>& mask, int height, int width, std::uint64_t seed);

class PromptSegmenter {
 public:
  virtual ~PromptSegmenter() = default;
  // Returns a binary height x width mask (0/1) for the image.
  virtual std::vector<std::uint8_t> segment(const Slice2D& image, const Prompt& prompt) const = 0;
};

// Box: fills the box. Point: 4-connected component of pixels strictly above the
// image median that contains the point; empty when the point is not above it.
class ReferenceSegmenter final : public PromptSegmenter {
 public:
  std::vector<std::uint8_t> segment(const Slice2D& image, const Prompt& prompt) const override;
};

// Runs `command image.json prompt.json out.json`; image and output mask use the
// raw-raster format.
class SubprocessSegmenter final : public PromptSegmenter {
 public:
  explicit SubprocessSegmenter(std::string command) : command_(std::move(command)) {}
  std::vector<std::uint8_t> segment(const Slice2D& image, const Prompt& prompt) const override;

 private:
  std::string command_;
};

std::unique_ptr<PromptSegmenter> make_segmenter(const std::string& spec);  // "reference" or "plugin:<cmd>"

std::string prompt_to_json(const Prompt& prompt);
Prompt prompt_from_json(const std::string& text);

struct PromptInstance {
  std::string sample_id;
  int label = 0;
  Prompt prompt;
  bool fallback = false;
  double dsc = 0.0;
};

struct PromptEvalResult {
  PromptKind kind = PromptKind::box;
  std::vector<PromptInstance> instances;  // manifest order, labels ascending
  std::map<int, double> per_label;        // mean DSC over instances
  double overall = 0.0;                   // unweighted mean of per_label
  int n_fallback = 0;
};

// One prompt per (slice, label); instance seeds derive from (seed, sample_id, label).
PromptEvalResult evaluate_prompted(const Manifest& manifest, const PromptSegmenter& segmenter, PromptKind kind,
                                   std::uint64_t seed);

}  // namespace fmbench
