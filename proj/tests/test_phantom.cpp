#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hf/phantom.hpp"
#include "hf/rng.hpp"

using namespace hf;

namespace {

PhantomSpec clean_spec() {
  PhantomSpec s;
  s.dims = {64, 64, 64};
  s.spacing = {1, 1, 1};
  s.organ_center = {31.5f, 31.5f, 31.5f};
  s.radii_mm = {20, 14, 16};
  s.radial_perturbation_amplitude = 0;
  s.noise_sigma = 0;
  s.boundary_blur_sigma = 0;
  s.contrast_delta = 1;
  s.seed = 7;
  return s;
}

}  // namespace

TEST_CASE("unperturbed phantom is the exact analytic ellipsoid") {
  PhantomSpec s = clean_spec();
  auto [img, gt] = generate_phantom(s);
  for (int z = 0; z < 64; ++z)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        double dx = (x - 31.5) / 20.0, dy = (y - 31.5) / 14.0, dz = (z - 31.5) / 16.0;
        bool inside = dx * dx + dy * dy + dz * dz <= 1.0;
        CHECK(gt.at(x, y, z) == (inside ? 1 : 0));
      }
}

TEST_CASE("label voxel count within 1 percent of the analytic volume") {
  PhantomSpec s = clean_spec();
  auto [img, gt] = generate_phantom(s);
  double analytic = 4.0 / 3.0 * M_PI * 20 * 14 * 16;
  double count = double(gt.foreground_count());
  CHECK(std::fabs(count - analytic) / analytic < 0.01);
}

TEST_CASE("same seed twice gives bit-identical phantoms") {
  PhantomSpec s = clean_spec();
  s.radial_perturbation_amplitude = 0.2f;
  s.noise_sigma = 0.7f;
  s.boundary_blur_sigma = 1.2f;
  auto [i1, g1] = generate_phantom(s);
  auto [i2, g2] = generate_phantom(s);
  CHECK(i1.data == i2.data);
  CHECK(g1.data == g2.data);
  s.seed = 8;
  auto [i3, g3] = generate_phantom(s);
  CHECK(i1.data != i3.data);
}

TEST_CASE("organ that does not fit is rejected with a message") {
  PhantomSpec s = clean_spec();
  s.radii_mm = {40, 14, 16};
  try {
    generate_phantom(s);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("does not fit") != std::string::npos);
  }
}

TEST_CASE("perturbed phantom stays within the amplitude bound") {
  PhantomSpec s = clean_spec();
  s.radial_perturbation_amplitude = 0.2f;
  auto [img, gt] = generate_phantom(s);
  for (int z = 0; z < 64; ++z)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        double dx = (x - 31.5) / 20.0, dy = (y - 31.5) / 14.0, dz = (z - 31.5) / 16.0;
        double rho = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (rho <= 0.8) CHECK(gt.at(x, y, z) == 1);
        if (rho > 1.2) CHECK(gt.at(x, y, z) == 0);
      }
}

// --- preprocess ---------------------------------------------------------------

TEST_CASE("constant volume normalizes to all zeros (degenerate rule)") {
  Volume v;
  v.dims = {8, 8, 8};
  v.spacing = {1, 1, 1};
  v.data.assign(v.voxels(), 3.5f);
  Volume out = preprocess(v, {1, 1, 1}, 0.f);
  for (float x : out.data) CHECK(x == 0.f);
}

TEST_CASE("identity resample with full foreground maps min/max to -1/+1") {
  Volume v;
  v.dims = {6, 5, 4};
  v.spacing = {1, 1, 1};
  v.data.resize(v.voxels());
  for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = 10.f + float(i);
  Volume out = preprocess(v, {1, 1, 1}, -1e9f);
  CHECK(out.dims == v.dims);
  float mn = 1e9f, mx = -1e9f;
  for (float x : out.data) {
    mn = std::min(mn, x);
    mx = std::max(mx, x);
    CHECK(x >= -1.f);
    CHECK(x <= 1.f);
  }
  CHECK(mn == -1.f);
  CHECK(mx == 1.f);
  // affine rescale only: ordering preserved
  CHECK(out.data[0] == -1.f);
  CHECK(out.data.back() == 1.f);
}

TEST_CASE("2x downsample of a linear ramp matches the analytic values") {
  Volume v;
  v.dims = {16, 4, 4};
  v.spacing = {1, 1, 1};
  v.data.resize(v.voxels());
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 16; ++x) v.at(x, y, z) = float(x);
  Volume r = resample_trilinear(v, {2, 1, 1});
  REQUIRE(r.dims[0] == 8);
  for (int x = 0; x < 8; ++x) {
    // source coordinate of the new voxel center
    double u = (x + 0.5) * 2.0 / 1.0 - 0.5;
    u = std::min(std::max(u, 0.0), 15.0);
    CHECK(std::fabs(r.at(x, 2, 2) - u) < 1e-6);
  }
}

TEST_CASE("empty foreground after threshold errors") {
  Volume v;
  v.dims = {4, 4, 4};
  v.spacing = {1, 1, 1};
  v.data.assign(v.voxels(), 0.f);
  try {
    preprocess(v, {1, 1, 1}, 5.f);
    FAIL("expected empty foreground error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_mask);
  }
}

TEST_CASE("body crop keeps the thresholded bounding box plus 2 voxels") {
  Volume v;
  v.dims = {20, 20, 20};
  v.spacing = {1, 1, 1};
  v.data.assign(v.voxels(), 0.f);
  for (int z = 8; z < 12; ++z)
    for (int y = 6; y < 10; ++y)
      for (int x = 5; x < 9; ++x) v.at(x, y, z) = 2.f;
  PreprocessInfo info;
  Volume out = preprocess(v, {1, 1, 1}, 1.f, &info);
  CHECK(info.crop_lo == std::array<int, 3>{3, 4, 6});
  CHECK(info.crop_hi == std::array<int, 3>{10, 11, 13});
  CHECK(out.dims == std::array<int, 3>{8, 8, 8});
}

// --- patch sampling -------------------------------------------------------------

namespace {
struct PatchFixture {
  Volume v;
  LabelVolume gt;
  std::vector<ContourHeatmap> heat;
  PatchFixture() {
    PhantomSpec s = clean_spec();
    s.dims = {48, 48, 48};
    s.organ_center = {23.5f, 23.5f, 23.5f};
    s.radii_mm = {14, 10, 12};
    s.noise_sigma = 0.3f;
    s.boundary_blur_sigma = 1.f;
    auto pair = generate_phantom(s);
    v = pair.first;
    gt = pair.second;
    heat = heatmap_stack(gt, 5.0);
  }
};
}  // namespace

TEST_CASE("n = 0 gives an empty list") {
  PatchFixture fx;
  CHECK(sample_training_patches(fx.v, fx.gt, fx.heat, 0, 1, 32, 3).empty());
}

TEST_CASE("same seed gives identical patch lists") {
  PatchFixture fx;
  auto a = sample_training_patches(fx.v, fx.gt, fx.heat, 12, 99, 32, 3);
  auto b = sample_training_patches(fx.v, fx.gt, fx.heat, 12, 99, 32, 3);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].stack.offset == b[i].stack.offset);
    CHECK(a[i].stack.planes == b[i].stack.planes);
    CHECK(a[i].mask == b[i].mask);
    CHECK(a[i].heat == b[i].heat);
  }
}

TEST_CASE("patch targets equal a direct re-crop of the inputs") {
  PatchFixture fx;
  auto patches = sample_training_patches(fx.v, fx.gt, fx.heat, 25, 5, 32, 3);
  REQUIRE(patches.size() == 25);
  for (const auto& p : patches) {
    auto [x0, y0, zm] = p.stack.offset;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        CHECK(p.mask[size_t(y) * 32 + x] == fx.gt.at(x0 + x, y0 + y, zm));
        CHECK(p.heat[size_t(y) * 32 + x] == float(fx.heat[zm].at(y0 + y, x0 + x)));
        // middle plane of the stack equals the image crop
        CHECK(p.stack.planes[size_t(p.stack.mid) * 32 * 32 + size_t(y) * 32 + x] ==
              fx.v.at(x0 + x, y0 + y, zm));
      }
    // edge replication on the outer slices
    int zlo = std::max(0, zm - 1), zhi = std::min(fx.v.dims[2] - 1, zm + 1);
    CHECK(p.stack.planes[0] == fx.v.at(x0, y0, zlo));
    CHECK(p.stack.planes[2 * 32 * 32] == fx.v.at(x0, y0, zhi));
  }
}

TEST_CASE("patch centers stay inside the dilated organ box") {
  PatchFixture fx;
  // organ bbox from the label
  std::array<int, 3> lo{99, 99, 99}, hi{-1, -1, -1};
  for (int z = 0; z < 48; ++z)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x)
        if (fx.gt.at(x, y, z)) {
          lo = {std::min(lo[0], x), std::min(lo[1], y), std::min(lo[2], z)};
          hi = {std::max(hi[0], x), std::max(hi[1], y), std::max(hi[2], z)};
        }
  auto patches = sample_training_patches(fx.v, fx.gt, fx.heat, 40, 3, 32, 3);
  for (const auto& p : patches) {
    auto [x0, y0, zm] = p.stack.offset;
    // window top-left derives from a center inside the dilated box
    CHECK(x0 >= std::max(0, lo[0] - 16 - 16));
    CHECK(x0 <= hi[0] + 16);
    CHECK(zm >= lo[2] - 1);
    CHECK(zm <= hi[2] + 1);
    CHECK(x0 + 32 <= 48);
    CHECK(y0 + 32 <= 48);
  }
}

TEST_CASE("patch size exceeding the volume errors") {
  PatchFixture fx;
  CHECK_THROWS_AS(sample_training_patches(fx.v, fx.gt, fx.heat, 1, 1, 64, 3), Error);
}
