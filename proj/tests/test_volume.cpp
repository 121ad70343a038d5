#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "hf/volume.hpp"

using namespace hf;
namespace fs = std::filesystem;

namespace {

Volume small_volume() {
  Volume v;
  v.dims = {3, 2, 2};
  v.spacing = {1.f, 2.f, 0.5f};
  v.data.resize(v.voxels());
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = 0.25f * float(i) - 1.f;
  return v;
}

std::string tmp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("volume round trip is bit exact") {
  Volume v = small_volume();
  std::string path = tmp_path("hf_vol_rt.hfv");
  write_volume(path, v);
  Volume r = read_volume(path);
  CHECK(r.dims == v.dims);
  CHECK(r.spacing == v.spacing);
  CHECK(r.data == v.data);
}

TEST_CASE("label round trip is bit exact and stays binary") {
  LabelVolume l;
  l.dims = {4, 4, 2};
  l.spacing = {1, 1, 1};
  l.data.assign(l.voxels(), 0);
  l.at(1, 2, 0) = 1;
  l.at(3, 3, 1) = 1;
  std::string path = tmp_path("hf_lab_rt.hfv");
  write_volume(path, l);
  LabelVolume r = read_label(path);
  CHECK(r.dims == l.dims);
  CHECK(r.data == l.data);
  // the convenience reader widens labels to f32
  Volume v = read_volume(path);
  CHECK(v.data[l.index(1, 2, 0)] == 1.f);
}

TEST_CASE("bad magic is a distinct error") {
  std::string path = tmp_path("hf_badmagic.hfv");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  std::fwrite("NOPE", 1, 4, f);
  std::fwrite("xxxxxxxxxxxxxxxxxxxxxxxxx", 1, 25, f);
  std::fclose(f);
  try {
    read_volume(path);
    FAIL("expected bad magic error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::bad_magic);
  }
}

TEST_CASE("truncated payload is a distinct error") {
  // header declares 2x2x2 voxels, payload carries only 7 values
  Volume v;
  v.dims = {2, 2, 2};
  v.spacing = {1, 1, 1};
  v.data.assign(8, 1.f);
  std::string path = tmp_path("hf_trunc.hfv");
  write_volume(path, v);
  fs::resize_file(path, fs::file_size(path) - 4);
  try {
    read_volume(path);
    FAIL("expected truncated error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::truncated);
  }
}

TEST_CASE("dim overflow is a distinct error") {
  std::string path = tmp_path("hf_dimovf.hfv");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  std::fwrite("HFV1", 1, 4, f);
  uint32_t d[3] = {0x40000000u, 0x40000000u, 4u};
  float s[3] = {1.f, 1.f, 1.f};
  uint8_t dtype = 0;
  std::fwrite(d, 4, 3, f);
  std::fwrite(s, 4, 3, f);
  std::fwrite(&dtype, 1, 1, f);
  std::fclose(f);
  try {
    read_volume(path);
    FAIL("expected dim overflow error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dim_overflow);
  }
}

TEST_CASE("validate rejects non-binary labels") {
  LabelVolume l;
  l.dims = {2, 2, 1};
  l.spacing = {1, 1, 1};
  l.data = {0, 1, 2, 0};
  CHECK_THROWS_AS(validate(l), Error);
}
