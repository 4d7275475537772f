#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fmbench/imaging.hpp"

namespace fmbench {

struct EncoderDescriptor {
  std::string encoder_id;
  int input_resolution = 512;
  int patch_size = 16;
  int embed_dim = 768;

  int grid() const { return input_resolution / patch_size; }
  void validate() const;
  bool operator==(const EncoderDescriptor&) const = default;
};

// Per-slice encoder output: one class token and a grid_h x grid_w x D patch
// token array (row-major over cells, D contiguous per cell).
struct FeatureMap {
  EncoderDescriptor descriptor;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<float> class_token;
  std::vector<float> patch_tokens;
  std::string sample_id;
  std::string volume_id;
  int z_index = 0;

  int dim() const { return descriptor.embed_dim; }
  int cells() const { return grid_h * grid_w; }
  std::span<const float> token(int cell) const {
    return {patch_tokens.data() + static_cast<std::size_t>(cell) * dim(), static_cast<std::size_t>(dim())};
  }
  std::span<float> token(int cell) {
    return {patch_tokens.data() + static_cast<std::size_t>(cell) * dim(), static_cast<std::size_t>(dim())};
  }
  void validate() const;
};

// A frozen encoder. encode() must be a pure function of the slice contents.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual const EncoderDescriptor& descriptor() const = 0;
  virtual FeatureMap encode(const Slice2D& slice) const = 0;
  // Encoders with per-call overhead (subprocess plugins) batch here.
  virtual std::vector<FeatureMap> encode_batch(const std::vector<Slice2D>& slices) const;
};

// Validates the slice geometry against the encoder and stamps the source.
FeatureMap encode_slice(const Slice2D& slice, const Encoder& encoder);

// Desk-scale stand-in for a ViT: token = W * patch + b + pos(row, col), with
// W, b and pos drawn from a SplitMix64 stream keyed by `seed`; the class token
// is the mean of the patch tokens.
class ToyEncoder final : public Encoder {
 public:
  ToyEncoder(std::uint64_t seed, int embed_dim, int input_resolution = 512, int patch_size = 16);

  const EncoderDescriptor& descriptor() const override { return descriptor_; }
  FeatureMap encode(const Slice2D& slice) const override;

  std::span<const float> bias() const { return bias_; }
  // Positional code of a cell; independent of the grid size.
  std::vector<float> positional_code(int row, int col) const;

 private:
  std::uint64_t seed_;
  EncoderDescriptor descriptor_;
  std::vector<float> projection_;  // D x (P*P)
  std::vector<float> bias_;
};

// Square slice with side divisible by 16; encoder resolution = slice side.
FeatureMap toy_encode(const Slice2D& slice, std::uint64_t seed, int embed_dim);

// External encoder speaking the dump format: the harness writes each slice as
// a 2D raw-raster pair plus a list file, runs `<command> <list-file>`, and
// reads the FMFD1 dump whose path the plugin prints as the last stdout line.
class SubprocessEncoder final : public Encoder {
 public:
  SubprocessEncoder(std::string command, EncoderDescriptor descriptor);

  const EncoderDescriptor& descriptor() const override { return descriptor_; }
  FeatureMap encode(const Slice2D& slice) const override;
  std::vector<FeatureMap> encode_batch(const std::vector<Slice2D>& slices) const override;

 private:
  std::string command_;
  EncoderDescriptor descriptor_;
};

// "toy:seed=7,dim=64[,res=512,patch=16]" or
// "plugin:cmd=<command>,dim=768[,res=512,patch=16,id=<encoder_id>]".
std::unique_ptr<Encoder> make_encoder(const std::string& spec);

// Plugin list file: one line per slice, "<sample_id>\t<raw-raster sidecar path>".
struct PluginSliceEntry {
  std::string sample_id;
  std::filesystem::path sidecar;
};
std::vector<PluginSliceEntry> read_plugin_list(const std::filesystem::path& list_file);

}  // namespace fmbench
