#include "hf/volume.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace hf {

namespace {

constexpr char kMagic[4] = {'H', 'F', 'V', '1'};
// Keeps header-declared payloads addressable and catches garbage headers.
constexpr uint64_t kMaxVoxels = uint64_t(1) << 31;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

void check_dims(const std::array<int, 3>& dims) {
  for (int d : dims)
    require(d >= 1, ErrorCode::dim_overflow, "volume dims must be >= 1");
  uint64_t n = uint64_t(dims[0]) * dims[1] * dims[2];
  require(n <= kMaxVoxels, ErrorCode::dim_overflow, "volume voxel count exceeds cap");
}

void write_header(std::FILE* f, const std::array<int, 3>& dims,
                  const std::array<float, 3>& spacing, uint8_t dtype) {
  check_dims(dims);
  uint32_t d[3] = {uint32_t(dims[0]), uint32_t(dims[1]), uint32_t(dims[2])};
  if (std::fwrite(kMagic, 1, 4, f) != 4 || std::fwrite(d, 4, 3, f) != 3 ||
      std::fwrite(spacing.data(), 4, 3, f) != 3 || std::fwrite(&dtype, 1, 1, f) != 1)
    fail(ErrorCode::io, "short write on volume header");
}

struct Header {
  std::array<int, 3> dims;
  std::array<float, 3> spacing;
  uint8_t dtype;
};

Header read_header(std::FILE* f, const std::string& path) {
  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4)
    fail(ErrorCode::truncated, path + ": file shorter than header");
  if (std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorCode::bad_magic, path + ": bad magic, not an HFV1 volume");
  uint32_t d[3];
  float s[3];
  uint8_t dtype;
  if (std::fread(d, 4, 3, f) != 3 || std::fread(s, 4, 3, f) != 3 ||
      std::fread(&dtype, 1, 1, f) != 1)
    fail(ErrorCode::truncated, path + ": file shorter than header");
  for (uint32_t v : d)
    require(v >= 1 && v <= uint32_t(kMaxVoxels), ErrorCode::dim_overflow,
            path + ": header dim out of range");
  uint64_t n = uint64_t(d[0]) * d[1] * d[2];
  require(n <= kMaxVoxels, ErrorCode::dim_overflow, path + ": voxel count exceeds cap");
  for (float v : s)
    require(v > 0.f, ErrorCode::io, path + ": non-positive spacing");
  require(dtype <= 1, ErrorCode::io, path + ": unknown dtype");
  return {{int(d[0]), int(d[1]), int(d[2])}, {s[0], s[1], s[2]}, dtype};
}

File open_file(const std::string& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorCode::io, "cannot open " + path);
  return f;
}

}  // namespace

void validate(const Volume& v) {
  check_dims(v.dims);
  for (float s : v.spacing)
    require(s > 0.f, ErrorCode::geometry, "volume spacing must be positive");
  require(v.data.size() == v.voxels(), ErrorCode::geometry,
          "volume data length does not match dims");
}

void validate(const LabelVolume& v) {
  check_dims(v.dims);
  for (float s : v.spacing)
    require(s > 0.f, ErrorCode::geometry, "label spacing must be positive");
  require(v.data.size() == v.voxels(), ErrorCode::geometry,
          "label data length does not match dims");
  for (uint8_t b : v.data)
    require(b <= 1, ErrorCode::geometry, "label values must be 0 or 1");
}

void write_volume(const std::string& path, const Volume& v) {
  validate(v);
  File f = open_file(path, "wb");
  write_header(f.get(), v.dims, v.spacing, 0);
  if (std::fwrite(v.data.data(), 4, v.data.size(), f.get()) != v.data.size())
    fail(ErrorCode::io, "short write on " + path);
}

void write_volume(const std::string& path, const LabelVolume& v) {
  validate(v);
  File f = open_file(path, "wb");
  write_header(f.get(), v.dims, v.spacing, 1);
  if (std::fwrite(v.data.data(), 1, v.data.size(), f.get()) != v.data.size())
    fail(ErrorCode::io, "short write on " + path);
}

Volume read_volume(const std::string& path) {
  File f = open_file(path, "rb");
  Header h = read_header(f.get(), path);
  Volume v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.data.resize(v.voxels());
  if (h.dtype == 0) {
    if (std::fread(v.data.data(), 4, v.data.size(), f.get()) != v.data.size())
      fail(ErrorCode::truncated, path + ": truncated payload");
  } else {
    std::vector<uint8_t> raw(v.voxels());
    if (std::fread(raw.data(), 1, raw.size(), f.get()) != raw.size())
      fail(ErrorCode::truncated, path + ": truncated payload");
    for (size_t i = 0; i < raw.size(); ++i) v.data[i] = float(raw[i]);
  }
  return v;
}

LabelVolume read_label(const std::string& path) {
  File f = open_file(path, "rb");
  Header h = read_header(f.get(), path);
  require(h.dtype == 1, ErrorCode::io, path + ": not a label volume (dtype 0)");
  LabelVolume v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.data.resize(v.voxels());
  if (std::fread(v.data.data(), 1, v.data.size(), f.get()) != v.data.size())
    fail(ErrorCode::truncated, path + ": truncated payload");
  for (uint8_t b : v.data)
    require(b <= 1, ErrorCode::io, path + ": label payload has non-binary values");
  return v;
}

}  // namespace hf
