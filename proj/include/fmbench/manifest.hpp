#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fmbench/imaging.hpp"

namespace fmbench {

enum class Split { train, val, test };

std::string split_name(Split s);
Split parse_split(const std::string& s);

// Minimal RFC-4180 reader: quoted fields, doubled quotes, CRLF tolerated.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column or -1.
  int column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text);
std::string csv_escape(const std::string& field);

// One row of an imaging manifest. Optional columns beyond the required set:
// mask_label (region label inside mask_path; default = any nonzero pixel),
// acq_axis (z|y|x, default z), window_center/window_width.
struct ManifestRow {
  std::string sample_id;
  std::string volume_path;
  std::optional<int> z_index;  // empty = whole volume
  std::string mask_path;
  std::string label;
  Split split = Split::train;
  Modality modality = Modality::SYNTH;
  std::string group_id;
  std::optional<int> mask_label;
  SliceAxis acq_axis = SliceAxis::z;
  std::optional<std::pair<double, double>> window;
};

struct Manifest {
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::vector<ManifestRow> rows;

  std::filesystem::path resolve(const std::string& p) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct SurvivalManifestRow {
  std::string subject_id;
  double time_days = 0.0;
  int event = 0;
  std::string feature_ref;
  Split split = Split::train;
  std::string group_id;
  std::string mask_path;  // optional
  std::optional<int> mask_label;
  std::optional<int> z_index;
};

struct SurvivalManifest {
  std::filesystem::path base_dir;
  std::vector<SurvivalManifestRow> rows;
};

SurvivalManifest read_survival_manifest(const std::filesystem::path& path);

// Throws split-leakage error when any group_id occurs in more than one split.
void check_group_disjoint(const std::vector<std::pair<std::string, Split>>& group_splits);

// Record id used in feature dumps for slice z of a whole-volume manifest row.
std::string volume_slice_record_id(const std::string& sample_id, int z);

}  // namespace fmbench
