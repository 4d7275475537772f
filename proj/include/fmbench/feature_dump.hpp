#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fmbench/encoder.hpp"

namespace fmbench {

// FMFD1 layout: "FMFD1", u32le header length, UTF-8 JSON header, then per
// record D float32 class-token values followed by H*W*D float32 patch-token
// values, little-endian. Record offsets are relative to the payload start.
inline constexpr char kFeatureDumpMagic[5] = {'F', 'M', 'F', 'D', '1'};

// All maps must share one descriptor; `descriptor_if_empty` names the encoder
// for an empty dump.
void write_feature_dump(const std::vector<FeatureMap>& maps, const std::filesystem::path& path,
                        const std::optional<EncoderDescriptor>& descriptor_if_empty = std::nullopt);

std::vector<FeatureMap> read_feature_dump(const std::filesystem::path& path);

// Random access by sample_id. The file is validated once on open; reads after
// that are independent and may run concurrently from separate readers.
class FeatureDumpReader {
 public:
  explicit FeatureDumpReader(const std::filesystem::path& path);

  const EncoderDescriptor& descriptor() const { return descriptor_; }
  const std::vector<std::string>& sample_ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  bool contains(const std::string& sample_id) const { return index_.count(sample_id) > 0; }
  FeatureMap read(const std::string& sample_id) const;

 private:
  struct Record {
    std::string volume_id;
    int z_index = 0;
    std::uint64_t offset = 0;
  };

  std::filesystem::path path_;
  EncoderDescriptor descriptor_;
  int grid_h_ = 0;
  int grid_w_ = 0;
  std::uint64_t payload_start_ = 0;
  std::vector<std::string> ids_;
  std::map<std::string, Record> index_;
};

}  // namespace fmbench
