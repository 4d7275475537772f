#include "fmbench/manifest.hpp"

#include <fstream>
#include <sstream>

#include "fmbench/common.hpp"

namespace fmbench {

namespace fs = std::filesystem;

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(ErrorKind::format, "unknown split '" + s + "'");
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t i = 0;
  // Skip UTF-8 BOM.
  if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  auto end_record = [&] {
    record.push_back(field);
    field.clear();
    field_started = false;
    if (!(record.size() == 1 && record[0].empty())) records.push_back(record);
    record.clear();
  };
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      record.push_back(field);
      field.clear();
      field_started = false;
    } else if (c == '\n') {
      end_record();
    } else if (c == '\r') {
      // CRLF: the following '\n' terminates the record.
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw Error(ErrorKind::format, "unterminated quoted CSV field");
  if (field_started || !record.empty()) end_record();

  CsvTable table;
  if (records.empty()) return table;
  table.header = records.front();
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size())
      throw Error(ErrorKind::format, "CSV row " + std::to_string(r + 1) + " has " +
                                         std::to_string(records[r].size()) + " fields, header has " +
                                         std::to_string(table.header.size()));
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

fs::path Manifest::resolve(const std::string& p) const {
  const fs::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path;
  return base_dir / path;
}

namespace {

int parse_int_field(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::format, "field '" + what + "' is not an integer: '" + s + "'");
  }
}

double parse_double_field(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::format, "field '" + what + "' is not a number: '" + s + "'");
  }
}

int require_column(const CsvTable& t, const std::string& name, const fs::path& path) {
  const int c = t.column(name);
  if (c < 0) throw Error(ErrorKind::format, path.string() + ": missing column '" + name + "'");
  return c;
}

}  // namespace

Manifest read_manifest(const fs::path& path) {
  const CsvTable t = read_csv(path);
  Manifest m;
  m.base_dir = path.parent_path();
  const int c_id = require_column(t, "sample_id", path);
  const int c_vol = require_column(t, "volume_path", path);
  const int c_z = require_column(t, "z_index", path);
  const int c_mask = require_column(t, "mask_path", path);
  const int c_label = require_column(t, "label", path);
  const int c_split = require_column(t, "split", path);
  const int c_mod = require_column(t, "modality", path);
  const int c_group = require_column(t, "group_id", path);
  const int c_mask_label = t.column("mask_label");
  const int c_axis = t.column("acq_axis");
  const int c_wc = t.column("window_center");
  const int c_ww = t.column("window_width");
  for (const auto& r : t.rows) {
    ManifestRow row;
    row.sample_id = r[c_id];
    if (row.sample_id.empty()) throw Error(ErrorKind::format, "empty sample_id in " + path.string());
    row.volume_path = r[c_vol];
    if (!r[c_z].empty()) row.z_index = parse_int_field(r[c_z], "z_index");
    row.mask_path = r[c_mask];
    row.label = r[c_label];
    row.split = parse_split(r[c_split]);
    row.modality = parse_modality(r[c_mod]);
    row.group_id = r[c_group].empty() ? row.sample_id : r[c_group];
    if (c_mask_label >= 0 && !r[c_mask_label].empty()) row.mask_label = parse_int_field(r[c_mask_label], "mask_label");
    if (c_axis >= 0) row.acq_axis = parse_slice_axis(r[c_axis]);
    if (c_wc >= 0 && c_ww >= 0 && !r[c_wc].empty() && !r[c_ww].empty())
      row.window = std::make_pair(parse_double_field(r[c_wc], "window_center"),
                                  parse_double_field(r[c_ww], "window_width"));
    m.rows.push_back(std::move(row));
  }
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << "sample_id,volume_path,z_index,mask_path,label,split,modality,group_id,mask_label,acq_axis\n";
  for (const auto& r : manifest.rows) {
    const char* axis = r.acq_axis == SliceAxis::z ? "z" : r.acq_axis == SliceAxis::y ? "y" : "x";
    out << csv_escape(r.sample_id) << ',' << csv_escape(r.volume_path) << ','
        << (r.z_index ? std::to_string(*r.z_index) : "") << ',' << csv_escape(r.mask_path) << ','
        << csv_escape(r.label) << ',' << split_name(r.split) << ',' << modality_name(r.modality) << ','
        << csv_escape(r.group_id) << ',' << (r.mask_label ? std::to_string(*r.mask_label) : "") << ',' << axis
        << '\n';
  }
}

SurvivalManifest read_survival_manifest(const fs::path& path) {
  const CsvTable t = read_csv(path);
  SurvivalManifest m;
  m.base_dir = path.parent_path();
  const int c_id = require_column(t, "subject_id", path);
  const int c_time = require_column(t, "time_days", path);
  const int c_event = require_column(t, "event", path);
  const int c_ref = require_column(t, "feature_ref", path);
  const int c_split = require_column(t, "split", path);
  const int c_group = require_column(t, "group_id", path);
  const int c_mask = t.column("mask_path");
  const int c_mask_label = t.column("mask_label");
  const int c_z = t.column("z_index");
  for (const auto& r : t.rows) {
    SurvivalManifestRow row;
    row.subject_id = r[c_id];
    row.time_days = parse_double_field(r[c_time], "time_days");
    if (!(row.time_days > 0.0)) throw Error(ErrorKind::data, "time_days must be > 0 for " + row.subject_id);
    row.event = parse_int_field(r[c_event], "event");
    if (row.event != 0 && row.event != 1) throw Error(ErrorKind::data, "event must be 0 or 1 for " + row.subject_id);
    row.feature_ref = r[c_ref];
    row.split = parse_split(r[c_split]);
    row.group_id = r[c_group].empty() ? row.subject_id : r[c_group];
    if (c_mask >= 0) row.mask_path = r[c_mask];
    if (c_mask_label >= 0 && !r[c_mask_label].empty()) row.mask_label = parse_int_field(r[c_mask_label], "mask_label");
    if (c_z >= 0 && !r[c_z].empty()) row.z_index = parse_int_field(r[c_z], "z_index");
    m.rows.push_back(std::move(row));
  }
  return m;
}

void check_group_disjoint(const std::vector<std::pair<std::string, Split>>& group_splits) {
  std::map<std::string, Split> seen;
  for (const auto& [group, split] : group_splits) {
    auto [it, inserted] = seen.emplace(group, split);
    if (!inserted && it->second != split)
      throw Error(ErrorKind::split_leakage, "group_id '" + group + "' appears in both " + split_name(it->second) +
                                                " and " + split_name(split));
  }
}

std::string volume_slice_record_id(const std::string& sample_id, int z) {
  return sample_id + "@" + std::to_string(z);
}

}  // namespace fmbench
