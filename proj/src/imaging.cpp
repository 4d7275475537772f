#include "fmbench/imaging.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <zlib.h>

#include "fmbench/common.hpp"
#include "json.hpp"

namespace fmbench {

namespace fs = std::filesystem;
using nlohmann::json;

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::CT: return "CT";
    case Modality::MR: return "MR";
    case Modality::SYNTH: return "SYNTH";
  }
  return "SYNTH";
}

Modality parse_modality(const std::string& s) {
  if (s == "CT") return Modality::CT;
  if (s == "MR") return Modality::MR;
  if (s == "SYNTH" || s.empty()) return Modality::SYNTH;
  throw Error(ErrorKind::format, "unknown modality '" + s + "'");
}

SliceAxis parse_slice_axis(const std::string& s) {
  if (s.empty() || s == "z") return SliceAxis::z;
  if (s == "y") return SliceAxis::y;
  if (s == "x") return SliceAxis::x;
  throw Error(ErrorKind::format, "unknown slice axis '" + s + "'");
}

void RasterVolume::validate() const {
  if (depth < 1 || height < 1 || width < 1)
    throw Error(ErrorKind::shape, "volume dimensions must be >= 1");
  if (data.size() != static_cast<std::size_t>(depth) * height * width)
    throw Error(ErrorKind::shape, "volume data size does not match dimensions");
  for (double s : spacing_mm)
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::data, "spacing must be positive");
  for (float v : data)
    if (!std::isfinite(v)) throw Error(ErrorKind::data, "non-finite sample in volume '" + volume_id + "'");
}

LabelMask LabelMask::slice(int z) const {
  LabelMask out(1, height, width);
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(index(z, 0, 0)),
              static_cast<std::size_t>(height) * width, out.data.begin());
  out.label_names = label_names;
  return out;
}

bool LabelMask::contains(int label) const {
  return std::find(data.begin(), data.end(), label) != data.end();
}

PatchGrid PatchGrid::make(int resolution, int patch_size) {
  if (resolution < 1 || patch_size < 1 || resolution % patch_size != 0)
    throw Error(ErrorKind::shape, "patch size " + std::to_string(patch_size) +
                                      " does not divide resolution " + std::to_string(resolution));
  return PatchGrid{resolution, patch_size};
}

// ---------------------------------------------------------------------------
// byte helpers

namespace {

std::vector<char> read_file_bytes(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::io, "file not found: " + path.string());
  const std::string ext = path.extension().string();
  if (ext == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::vector<char> out;
    char buf[1 << 16];
    int n = 0;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw Error(ErrorKind::format, "corrupt gzip stream in " + path.string());
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const fs::path& path, const std::vector<char>& bytes) {
  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (!f) throw Error(ErrorKind::io, "cannot write " + path.string());
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (n != static_cast<int>(bytes.size())) throw Error(ErrorKind::io, "short write to " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
T load_raw(const char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void store_le(std::vector<char>& buf, std::size_t offset, T v) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  std::memcpy(buf.data() + offset, &v, sizeof(T));
}

constexpr bool kHostIsBig = std::endian::native == std::endian::big;

// ---------------------------------------------------------------------------
// raw-raster

std::pair<fs::path, fs::path> raw_pair(const fs::path& path) {
  fs::path sidecar = path, payload = path;
  if (path.extension() == ".raw") {
    sidecar.replace_extension(".json");
  } else {
    payload.replace_extension(".raw");
  }
  return {sidecar, payload};
}

RasterVolume load_raw_raster(const fs::path& path) {
  const auto [sidecar, payload] = raw_pair(path);
  json header;
  {
    std::ifstream in(sidecar);
    if (!in) throw Error(ErrorKind::io, "cannot open sidecar " + sidecar.string());
    try {
      in >> header;
    } catch (const json::exception& e) {
      throw Error(ErrorKind::format, "sidecar " + sidecar.string() + " is not valid JSON: " + e.what());
    }
  }
  auto field = [&](const char* name) -> const json& {
    if (!header.contains(name)) throw Error(ErrorKind::format, std::string("sidecar missing field '") + name + "'");
    return header.at(name);
  };
  const json& shape = field("shape");
  if (!shape.is_array() || shape.size() != 3)
    throw Error(ErrorKind::format, "field 'shape' must be [Z,Y,X]");
  const json& spacing = field("spacing_mm");
  if (!spacing.is_array() || spacing.size() != 3)
    throw Error(ErrorKind::format, "field 'spacing_mm' must have 3 entries");
  if (field("dtype") != "f32le") throw Error(ErrorKind::format, "field 'dtype' must be \"f32le\"");

  RasterVolume v;
  try {
    v.depth = shape[0].get<int>();
    v.height = shape[1].get<int>();
    v.width = shape[2].get<int>();
    for (int i = 0; i < 3; ++i) v.spacing_mm[i] = spacing[i].get<double>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::format, "fields 'shape'/'spacing_mm' must be numeric");
  }
  if (v.depth < 1 || v.height < 1 || v.width < 1)
    throw Error(ErrorKind::format, "field 'shape' entries must be >= 1");
  for (double s : v.spacing_mm)
    if (!(s > 0.0)) throw Error(ErrorKind::format, "field 'spacing_mm' entries must be > 0");
  v.modality = parse_modality(header.value("modality", std::string("SYNTH")));
  v.volume_id = sidecar.stem().string();

  const std::vector<char> bytes = read_file_bytes(payload);
  const std::size_t n = static_cast<std::size_t>(v.depth) * v.height * v.width;
  if (bytes.size() != 4 * n)
    throw Error(ErrorKind::format, "payload length " + std::to_string(bytes.size()) +
                                       " != 4*Z*Y*X = " + std::to_string(4 * n));
  v.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) v.data[i] = load_raw<float>(bytes.data() + 4 * i, kHostIsBig);
  v.validate();
  return v;
}

void write_raw_raster(const RasterVolume& v, const fs::path& path) {
  const auto [sidecar, payload] = raw_pair(path);
  json header;
  header["shape"] = {v.depth, v.height, v.width};
  header["spacing_mm"] = {v.spacing_mm[0], v.spacing_mm[1], v.spacing_mm[2]};
  header["dtype"] = "f32le";
  header["modality"] = modality_name(v.modality);
  {
    std::ofstream out(sidecar);
    if (!out) throw Error(ErrorKind::io, "cannot write " + sidecar.string());
    out << header.dump(2) << "\n";
  }
  std::vector<char> bytes(4 * v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) store_le<float>(bytes, 4 * i, v.data[i]);
  write_file_bytes(payload, bytes);
}

// ---------------------------------------------------------------------------
// NIfTI-1

constexpr std::size_t kNiftiHeaderSize = 348;

bool is_nifti(const fs::path& path) {
  const std::string name = path.filename().string();
  auto ends = [&](const std::string& suf) {
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  return ends(".nii") || ends(".nii.gz");
}

std::string nifti_stem(const fs::path& path) {
  std::string name = path.filename().string();
  for (const std::string suf : {".nii.gz", ".nii"})
    if (name.size() > suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0)
      return name.substr(0, name.size() - suf.size());
  return name;
}

// Column-major 3x3 orientation (columns = voxel axes i,j,k in world RAS).
using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 quaternion_to_matrix(double b, double c, double d, double qfac) {
  double a = 1.0 - (b * b + c * c + d * d);
  a = a < 1e-7 ? 0.0 : std::sqrt(a);
  Mat3 r{};  // r[row][col]
  r[0] = {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)};
  r[1] = {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)};
  r[2] = {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b};
  if (qfac < 0)
    for (auto& row : r) row[2] = -row[2];
  return r;
}

RasterVolume load_nifti(const fs::path& path, Modality modality) {
  const std::vector<char> bytes = read_file_bytes(path);
  if (bytes.size() < kNiftiHeaderSize) throw Error(ErrorKind::format, "NIfTI header truncated (sizeof_hdr)");
  const char* h = bytes.data();
  bool swap = false;
  const std::int32_t sizeof_hdr = load_raw<std::int32_t>(h, false);
  if (sizeof_hdr != 348) {
    if (load_raw<std::int32_t>(h, true) == 348) swap = true;
    else throw Error(ErrorKind::format, "NIfTI field 'sizeof_hdr' must be 348");
  }
  if (!(std::memcmp(h + 344, "n+1\0", 4) == 0 || std::memcmp(h + 344, "ni1\0", 4) == 0))
    throw Error(ErrorKind::format, "NIfTI field 'magic' must be \"n+1\" or \"ni1\"");
  if (std::memcmp(h + 344, "ni1\0", 4) == 0)
    throw Error(ErrorKind::format, "NIfTI field 'magic' \"ni1\" (split header/image pair) is not supported");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load_raw<std::int16_t>(h + 40 + 2 * i, swap);
  if (dim[0] < 3 || dim[0] > 7) throw Error(ErrorKind::format, "NIfTI field 'dim[0]' must be 3");
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] > 1) throw Error(ErrorKind::format, "NIfTI field 'dim' describes more than 3 non-singleton axes");
  for (int i = 1; i <= 3; ++i)
    if (dim[i] < 1) throw Error(ErrorKind::format, "NIfTI field 'dim[" + std::to_string(i) + "]' must be >= 1");

  const std::int16_t datatype = load_raw<std::int16_t>(h + 70, swap);
  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = load_raw<float>(h + 76 + 4 * i, swap);
  const float vox_offset = load_raw<float>(h + 108, swap);
  float slope = load_raw<float>(h + 112, swap);
  const float inter = load_raw<float>(h + 116, swap);
  const std::int16_t qform_code = load_raw<std::int16_t>(h + 252, swap);
  const std::int16_t sform_code = load_raw<std::int16_t>(h + 254, swap);

  for (int i = 1; i <= 3; ++i)
    if (!(pixdim[i] > 0.0f) || !std::isfinite(pixdim[i]))
      throw Error(ErrorKind::format, "NIfTI field 'pixdim[" + std::to_string(i) + "]' must be > 0");
  if (!(vox_offset >= 348.0f)) throw Error(ErrorKind::format, "NIfTI field 'vox_offset' must be >= 348");
  if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;  // NIfTI convention: 0 means unscaled

  std::size_t elem = 0;
  switch (datatype) {
    case 2: elem = 1; break;    // uint8
    case 4: elem = 2; break;    // int16
    case 8: elem = 4; break;    // int32
    case 16: elem = 4; break;   // float32
    case 64: elem = 8; break;   // float64
    case 512: elem = 2; break;  // uint16
    default:
      throw Error(ErrorKind::format, "NIfTI field 'datatype' " + std::to_string(datatype) + " unsupported");
  }
  const int nx = dim[1], ny = dim[2], nz = dim[3];
  const std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
  const std::size_t offset = static_cast<std::size_t>(vox_offset);
  if (bytes.size() < offset + n * elem) throw Error(ErrorKind::format, "NIfTI payload shorter than 'dim' requires");

  std::vector<float> raw(n);
  const char* p = bytes.data() + offset;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0;
    switch (datatype) {
      case 2: v = static_cast<unsigned char>(p[i]); break;
      case 4: v = load_raw<std::int16_t>(p + 2 * i, swap); break;
      case 8: v = load_raw<std::int32_t>(p + 4 * i, swap); break;
      case 16: v = load_raw<float>(p + 4 * i, swap); break;
      case 64: v = load_raw<double>(p + 8 * i, swap); break;
      case 512: v = load_raw<std::uint16_t>(p + 2 * i, swap); break;
    }
    if (slope != 1.0f || inter != 0.0f) v = v * slope + inter;
    raw[i] = static_cast<float>(v);
  }

  // Voxel axis -> dominant world axis. Only pure permutations are resolved.
  std::array<int, 3> perm{0, 1, 2};  // perm[world axis] = voxel axis
  bool have_orientation = false;
  Mat3 r{};
  if (qform_code > 0) {
    r = quaternion_to_matrix(load_raw<float>(h + 256, swap), load_raw<float>(h + 260, swap),
                             load_raw<float>(h + 264, swap), pixdim[0]);
    have_orientation = true;
  } else if (sform_code > 0) {
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col) r[row][col] = load_raw<float>(h + 280 + 16 * row + 4 * col, swap);
    have_orientation = true;
  }
  if (have_orientation) {
    std::array<int, 3> candidate{};
    std::array<bool, 3> used{};
    bool ok = true;
    for (int col = 0; col < 3; ++col) {
      int best = 0;
      for (int row = 1; row < 3; ++row)
        if (std::abs(r[row][col]) > std::abs(r[best][col])) best = row;
      if (used[best]) ok = false;
      used[best] = true;
      candidate[best] = col;
    }
    if (ok) perm = candidate;
  }

  const std::array<int, 3> vdim{nx, ny, nz};
  RasterVolume v(vdim[perm[2]], vdim[perm[1]], vdim[perm[0]]);
  v.spacing_mm = {pixdim[1 + perm[2]], pixdim[1 + perm[1]], pixdim[1 + perm[0]]};
  v.modality = modality;
  v.volume_id = nifti_stem(path);
  std::array<int, 3> ijk{};
  for (int z = 0; z < v.depth; ++z)
    for (int y = 0; y < v.height; ++y)
      for (int x = 0; x < v.width; ++x) {
        ijk[perm[0]] = x;
        ijk[perm[1]] = y;
        ijk[perm[2]] = z;
        v.at(z, y, x) = raw[static_cast<std::size_t>(ijk[0]) +
                            static_cast<std::size_t>(nx) * (ijk[1] + static_cast<std::size_t>(ny) * ijk[2])];
      }
  v.validate();
  return v;
}

void write_nifti(const RasterVolume& v, const fs::path& path) {
  const std::size_t n = v.data.size();
  std::vector<char> bytes(352 + 4 * n, 0);
  store_le<std::int32_t>(bytes, 0, 348);
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(v.width), static_cast<std::int16_t>(v.height),
                                        static_cast<std::int16_t>(v.depth), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store_le<std::int16_t>(bytes, 40 + 2 * i, dim[i]);
  store_le<std::int16_t>(bytes, 70, 16);  // float32
  store_le<std::int16_t>(bytes, 72, 32);
  const std::array<float, 8> pixdim{1.0f, static_cast<float>(v.spacing_mm[2]), static_cast<float>(v.spacing_mm[1]),
                                    static_cast<float>(v.spacing_mm[0]), 0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) store_le<float>(bytes, 76 + 4 * i, pixdim[i]);
  store_le<float>(bytes, 108, 352.0f);
  store_le<float>(bytes, 112, 1.0f);
  store_le<float>(bytes, 116, 0.0f);
  bytes[123] = 10;  // xyzt_units: mm, s
  store_le<std::int16_t>(bytes, 252, 1);
  store_le<std::int16_t>(bytes, 254, 0);
  std::memcpy(bytes.data() + 344, "n+1\0", 4);
  for (std::size_t i = 0; i < n; ++i) store_le<float>(bytes, 352 + 4 * i, v.data[i]);
  write_file_bytes(path, bytes);
}

}  // namespace

RasterVolume load_volume(const fs::path& path, Modality nifti_modality) {
  if (is_nifti(path)) return load_nifti(path, nifti_modality);
  return load_raw_raster(path);
}

void write_volume(const RasterVolume& volume, const fs::path& path) {
  volume.validate();
  if (is_nifti(path)) write_nifti(volume, path);
  else write_raw_raster(volume, path);
}

LabelMask load_label_volume(const fs::path& path) {
  const RasterVolume v = load_volume(path);
  LabelMask m(v.depth, v.height, v.width);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const float f = v.data[i];
    if (f < 0.0f || f != std::round(f))
      throw Error(ErrorKind::data, "label volume " + path.string() + " holds a non-integer or negative label");
    m.data[i] = static_cast<std::int32_t>(f);
  }
  return m;
}

RasterVolume label_mask_to_volume(const LabelMask& mask) {
  RasterVolume v(mask.depth, mask.height, mask.width);
  for (std::size_t i = 0; i < mask.data.size(); ++i) v.data[i] = static_cast<float>(mask.data[i]);
  return v;
}

// ---------------------------------------------------------------------------
// slicing

Slice2D extract_slice(const RasterVolume& volume, SliceAxis axis, int index) {
  Slice2D s;
  s.volume_id = volume.volume_id;
  s.z_index = index;
  switch (axis) {
    case SliceAxis::z:
      if (index < 0 || index >= volume.depth) throw Error(ErrorKind::shape, "slice index out of range");
      s = Slice2D(volume.height, volume.width);
      for (int y = 0; y < volume.height; ++y)
        for (int x = 0; x < volume.width; ++x) s.at(y, x) = volume.at(index, y, x);
      break;
    case SliceAxis::y:
      if (index < 0 || index >= volume.height) throw Error(ErrorKind::shape, "slice index out of range");
      s = Slice2D(volume.depth, volume.width);
      for (int z = 0; z < volume.depth; ++z)
        for (int x = 0; x < volume.width; ++x) s.at(z, x) = volume.at(z, index, x);
      break;
    case SliceAxis::x:
      if (index < 0 || index >= volume.width) throw Error(ErrorKind::shape, "slice index out of range");
      s = Slice2D(volume.depth, volume.height);
      for (int z = 0; z < volume.depth; ++z)
        for (int y = 0; y < volume.height; ++y) s.at(z, y) = volume.at(z, y, index);
      break;
  }
  s.volume_id = volume.volume_id;
  s.z_index = index;
  return s;
}

LabelMask extract_mask_slice(const LabelMask& mask, SliceAxis axis, int index) {
  RasterVolume v = label_mask_to_volume(mask);
  const Slice2D s = extract_slice(v, axis, index);
  LabelMask out(1, s.height, s.width);
  for (std::size_t i = 0; i < s.data.size(); ++i) out.data[i] = static_cast<std::int32_t>(s.data[i]);
  out.label_names = mask.label_names;
  return out;
}

// ---------------------------------------------------------------------------
// preprocessing

Slice2D resize_bilinear(const Slice2D& slice, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw Error(ErrorKind::shape, "resize target must be >= 1x1");
  if (slice.height < 1 || slice.width < 1) throw Error(ErrorKind::shape, "cannot resize an empty slice");
  if (out_h == slice.height && out_w == slice.width) return slice;

  Slice2D out(out_h, out_w);
  out.volume_id = slice.volume_id;
  out.z_index = slice.z_index;
  const double sy = static_cast<double>(slice.height) / out_h;
  const double sx = static_cast<double>(slice.width) / out_w;

  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(n_out);
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, n_in - 1);
      t[o] = {i0, i1, src - i0};
    }
    return t;
  };
  const std::vector<Tap> ty = taps(out_h, slice.height, sy);
  const std::vector<Tap> tx = taps(out_w, slice.width, sx);
  for (int y = 0; y < out_h; ++y) {
    const Tap& a = ty[y];
    for (int x = 0; x < out_w; ++x) {
      const Tap& b = tx[x];
      const double top = slice.at(a.i0, b.i0) * (1.0 - b.w1) + slice.at(a.i0, b.i1) * b.w1;
      const double bot = slice.at(a.i1, b.i0) * (1.0 - b.w1) + slice.at(a.i1, b.i1) * b.w1;
      out.at(y, x) = top * (1.0 - a.w1) + bot * a.w1;
    }
  }
  return out;
}

LabelMask resize_nearest(const LabelMask& mask2d, int out_h, int out_w) {
  if (mask2d.depth != 1) throw Error(ErrorKind::shape, "resize_nearest expects a 2D mask");
  if (out_h < 1 || out_w < 1) throw Error(ErrorKind::shape, "resize target must be >= 1x1");
  if (out_h == mask2d.height && out_w == mask2d.width) return mask2d;
  LabelMask out(1, out_h, out_w);
  out.label_names = mask2d.label_names;
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(static_cast<int>(std::floor((y + 0.5) * mask2d.height / out_h)), mask2d.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(static_cast<int>(std::floor((x + 0.5) * mask2d.width / out_w)), mask2d.width - 1);
      out.at(y, x) = mask2d.at(sy, sx);
    }
  }
  return out;
}

Slice2D z_score_normalize(const Slice2D& slice) {
  Slice2D out = slice;
  const std::size_t n = slice.data.size();
  if (n == 0) return out;
  double mean = 0.0;
  for (double v : slice.data) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : slice.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double denom = std::max(std::sqrt(var), kZScoreEpsilon);
  for (double& v : out.data) v = (v - mean) / denom;
  return out;
}

Slice2D apply_window(const Slice2D& slice, double center, double width) {
  if (!(width > 0.0)) throw Error(ErrorKind::config, "window width must be > 0");
  Slice2D out = slice;
  const double lo = center - width / 2.0, hi = center + width / 2.0;
  for (double& v : out.data) v = std::clamp(v, lo, hi);
  return out;
}

Slice2D preprocess_slice(const Slice2D& slice, const PreprocessOptions& options) {
  Slice2D s = options.window ? apply_window(slice, options.window->first, options.window->second) : slice;
  return z_score_normalize(resize_bilinear(s, options.resolution, options.resolution));
}

PatchSet mask_to_patch_mask(const LabelMask& mask2d, const PatchGrid& grid, int label) {
  if (mask2d.depth != 1 || mask2d.height != grid.resolution || mask2d.width != grid.resolution)
    throw Error(ErrorKind::shape, "mask shape must equal the grid resolution");
  std::vector<char> hit(static_cast<std::size_t>(grid.cells()), 0);
  for (int y = 0; y < mask2d.height; ++y)
    for (int x = 0; x < mask2d.width; ++x)
      if (mask2d.at(y, x) == label) hit[(y / grid.patch_size) * grid.grid_w() + x / grid.patch_size] = 1;
  PatchSet out;
  for (int i = 0; i < grid.cells(); ++i)
    if (hit[i]) out.push_back(i);
  if (out.empty()) throw Error(ErrorKind::empty_mask, "label " + std::to_string(label) + " absent from mask");
  return out;
}

std::vector<int> sample_slices_weighted(const RasterVolume& volume, const LabelMask& mask3d, int label, int n,
                                        std::uint64_t seed) {
  if (mask3d.depth != volume.depth || mask3d.height != volume.height || mask3d.width != volume.width)
    throw Error(ErrorKind::shape, "mask shape must equal volume shape");
  if (n < 1) throw Error(ErrorKind::config, "sample count must be >= 1");
  std::vector<int> eligible;
  std::vector<double> weight;
  const std::size_t plane = static_cast<std::size_t>(mask3d.height) * mask3d.width;
  for (int z = 0; z < mask3d.depth; ++z) {
    const auto first = mask3d.data.begin() + static_cast<std::ptrdiff_t>(z * plane);
    const auto count = std::count(first, first + static_cast<std::ptrdiff_t>(plane), label);
    if (count > 0) {
      eligible.push_back(z);
      weight.push_back(static_cast<double>(count));
    }
  }
  if (eligible.empty()) throw Error(ErrorKind::empty_mask, "label " + std::to_string(label) + " absent from every slice");

  SplitMix64 rng(seed);
  std::vector<int> picked;
  const int target = std::min<int>(n, static_cast<int>(eligible.size()));
  while (static_cast<int>(picked.size()) < target) {
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    double r = rng.uniform() * total;
    std::size_t k = 0;
    for (; k + 1 < weight.size(); ++k) {
      if (r < weight[k]) break;
      r -= weight[k];
    }
    picked.push_back(eligible[k]);
    eligible.erase(eligible.begin() + static_cast<std::ptrdiff_t>(k));
    weight.erase(weight.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return picked;
}

}  // namespace fmbench
