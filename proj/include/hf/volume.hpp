#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hf/common.hpp"

namespace hf {

// 3-D scalar grid, x-fastest storage: index (x,y,z) = (z*ny + y)*nx + x.
// Spacing is mm per voxel along each axis.
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{1.f, 1.f, 1.f};
  std::vector<float> data;

  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  size_t voxels() const {
    return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
  }
  const float* slice(int z) const {
    return data.data() + static_cast<size_t>(z) * dims[0] * dims[1];
  }
};

// Binary grid with the same geometry conventions as Volume.
struct LabelVolume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{1.f, 1.f, 1.f};
  std::vector<uint8_t> data;

  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  uint8_t& at(int x, int y, int z) { return data[index(x, y, z)]; }
  uint8_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
  size_t voxels() const {
    return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
  }
  const uint8_t* slice(int z) const {
    return data.data() + static_cast<size_t>(z) * dims[0] * dims[1];
  }
  size_t foreground_count() const {
    size_t n = 0;
    for (uint8_t v : data) n += v;
    return n;
  }
};

void validate(const Volume& v);
void validate(const LabelVolume& v);

inline bool same_geometry(const std::array<int, 3>& a, const std::array<int, 3>& b) {
  return a == b;
}

template <typename A, typename B>
void require_same_geometry(const A& a, const B& b, const std::string& what) {
  require(a.dims == b.dims, ErrorCode::geometry, what + ": dims mismatch");
  require(a.spacing == b.spacing, ErrorCode::geometry, what + ": spacing mismatch");
}

// On-disk format (little-endian): magic "HFV1", u32 nx,ny,nz, f32 sx,sy,sz,
// u8 dtype (0 = f32 image, 1 = u8 label), payload x-fastest.
void write_volume(const std::string& path, const Volume& v);
void write_volume(const std::string& path, const LabelVolume& v);
Volume read_volume(const std::string& path);       // accepts both dtypes; labels widen to f32
LabelVolume read_label(const std::string& path);   // requires dtype 1

}  // namespace hf
