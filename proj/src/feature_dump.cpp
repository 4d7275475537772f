#include "fmbench/feature_dump.hpp"

#include <bit>
#include <cstring>

#include "fmbench/common.hpp"
#include "json.hpp"

namespace fmbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void append_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_f32le(std::string& out, float f) { append_u32le(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t record_bytes(int d, int h, int w) {
  return 4ull * static_cast<std::uint64_t>(d) * (1ull + static_cast<std::uint64_t>(h) * w);
}

}  // namespace

void write_feature_dump(const std::vector<FeatureMap>& maps, const fs::path& path,
                        const std::optional<EncoderDescriptor>& descriptor_if_empty) {
  EncoderDescriptor desc;
  int grid_h = 0, grid_w = 0;
  if (!maps.empty()) {
    desc = maps.front().descriptor;
    grid_h = maps.front().grid_h;
    grid_w = maps.front().grid_w;
  } else if (descriptor_if_empty) {
    desc = *descriptor_if_empty;
    grid_h = grid_w = desc.grid();
  } else {
    desc.embed_dim = 0;
  }
  const std::uint64_t rec = record_bytes(desc.embed_dim, grid_h, grid_w);

  json header;
  header["encoder_id"] = desc.encoder_id;
  header["embed_dim"] = desc.embed_dim;
  header["grid"] = {grid_h, grid_w};
  header["input_resolution"] = desc.input_resolution;
  header["patch_size"] = desc.patch_size;
  json records = json::array();
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const FeatureMap& m = maps[i];
    if (!(m.descriptor == desc) || m.grid_h != grid_h || m.grid_w != grid_w)
      throw Error(ErrorKind::format, "descriptor conflict: record '" + m.sample_id + "' differs from the first record");
    m.validate();
    if (!seen.emplace(m.sample_id, 1).second)
      throw Error(ErrorKind::format, "duplicate sample_id '" + m.sample_id + "' in feature dump");
    json r;
    r["sample_id"] = m.sample_id;
    r["offset"] = static_cast<std::uint64_t>(i) * rec;
    r["volume_id"] = m.volume_id;
    r["z_index"] = m.z_index;
    records.push_back(std::move(r));
  }
  header["records"] = std::move(records);
  const std::string header_text = header.dump();

  std::string out(kFeatureDumpMagic, sizeof(kFeatureDumpMagic));
  append_u32le(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  out.reserve(out.size() + maps.size() * rec);
  for (const auto& m : maps) {
    for (float v : m.class_token) append_f32le(out, v);
    for (float v : m.patch_tokens) append_f32le(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::io, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorKind::io, "short write to " + path.string());
}

FeatureDumpReader::FeatureDumpReader(const fs::path& path) : path_(path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::io, "cannot open feature dump " + path.string());
  unsigned char prefix[9];
  if (!f.read(reinterpret_cast<char*>(prefix), 9)) throw Error(ErrorKind::format, "feature dump shorter than its prefix");
  if (std::memcmp(prefix, kFeatureDumpMagic, 5) != 0) throw Error(ErrorKind::format, "magic mismatch (expected FMFD1)");
  const std::uint32_t header_len = read_u32le(prefix + 5);
  std::string header_text(header_len, '\0');
  if (!f.read(header_text.data(), header_len)) throw Error(ErrorKind::format, "truncated header");
  payload_start_ = 9ull + header_len;

  json header;
  try {
    header = json::parse(header_text);
    descriptor_.encoder_id = header.at("encoder_id").get<std::string>();
    descriptor_.embed_dim = header.at("embed_dim").get<int>();
    const auto& grid = header.at("grid");
    grid_h_ = grid.at(0).get<int>();
    grid_w_ = grid.at(1).get<int>();
    descriptor_.patch_size = header.value("patch_size", 16);
    descriptor_.input_resolution = header.value("input_resolution", grid_h_ * descriptor_.patch_size);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("malformed header: ") + e.what());
  }
  if (descriptor_.embed_dim < 0 || grid_h_ < 0 || grid_w_ < 0)
    throw Error(ErrorKind::format, "negative dimensions in header");

  const std::uint64_t rec = record_bytes(descriptor_.embed_dim, grid_h_, grid_w_);
  f.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(f.tellg());
  const std::uint64_t payload = file_size - payload_start_;
  if (!header.contains("records")) throw Error(ErrorKind::format, "header lacks 'records'");
  const auto& records = header["records"];
  if (!records.is_array()) throw Error(ErrorKind::format, "header field 'records' must be an array");
  if (payload != records.size() * rec)
    throw Error(ErrorKind::format, "truncated payload: " + std::to_string(payload) + " bytes, expected " +
                                       std::to_string(records.size() * rec));
  if (!records.empty()) {
    if (descriptor_.embed_dim < 1) throw Error(ErrorKind::format, "embed_dim must be >= 1");
    if (grid_h_ != grid_w_ || grid_h_ * descriptor_.patch_size != descriptor_.input_resolution)
      throw Error(ErrorKind::format, "descriptor conflict: grid does not match input_resolution / patch_size");
  }
  for (const auto& r : records) {
    Record rec_entry;
    std::string id;
    try {
      id = r.at("sample_id").get<std::string>();
      rec_entry.offset = r.at("offset").get<std::uint64_t>();
      rec_entry.volume_id = r.value("volume_id", std::string());
      rec_entry.z_index = r.value("z_index", 0);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::format, std::string("malformed record: ") + e.what());
    }
    if (rec_entry.offset % rec != 0 || rec_entry.offset + rec > payload)
      throw Error(ErrorKind::format, "record '" + id + "' offset out of range");
    if (!index_.emplace(id, rec_entry).second) throw Error(ErrorKind::format, "duplicate sample_id '" + id + "'");
    ids_.push_back(id);
  }
}

FeatureMap FeatureDumpReader::read(const std::string& sample_id) const {
  auto it = index_.find(sample_id);
  if (it == index_.end()) throw Error(ErrorKind::coverage, "sample '" + sample_id + "' not in " + path_.string());
  const int d = descriptor_.embed_dim;
  const std::uint64_t rec = record_bytes(d, grid_h_, grid_w_);
  std::ifstream f(path_, std::ios::binary);
  if (!f) throw Error(ErrorKind::io, "cannot open feature dump " + path_.string());
  f.seekg(static_cast<std::streamoff>(payload_start_ + it->second.offset));
  std::vector<unsigned char> bytes(rec);
  if (!f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(rec)))
    throw Error(ErrorKind::format, "truncated payload reading '" + sample_id + "'");

  FeatureMap m;
  m.descriptor = descriptor_;
  m.grid_h = grid_h_;
  m.grid_w = grid_w_;
  m.sample_id = sample_id;
  m.volume_id = it->second.volume_id;
  m.z_index = it->second.z_index;
  m.class_token.resize(static_cast<std::size_t>(d));
  m.patch_tokens.resize(static_cast<std::size_t>(grid_h_) * grid_w_ * d);
  const unsigned char* p = bytes.data();
  for (float& v : m.class_token) {
    v = std::bit_cast<float>(read_u32le(p));
    p += 4;
  }
  for (float& v : m.patch_tokens) {
    v = std::bit_cast<float>(read_u32le(p));
    p += 4;
  }
  return m;
}

std::vector<FeatureMap> read_feature_dump(const fs::path& path) {
  const FeatureDumpReader reader(path);
  std::vector<FeatureMap> maps;
  maps.reserve(reader.size());
  for (const auto& id : reader.sample_ids()) maps.push_back(reader.read(id));
  return maps;
}

}  // namespace fmbench
