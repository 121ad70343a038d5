#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hf/contour.hpp"
#include "hf/rng.hpp"

using namespace hf;

namespace {

// Independent scalar oracle: per-pixel loop over all contour points.
std::vector<double> brute_force_map(const std::vector<std::array<int, 2>>& pts, int w,
                                    int h, double sigma, double trunc) {
  std::vector<double> out(size_t(w) * h, 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (const auto& p : pts) {
        double d = std::hypot(double(i - p[0]), double(j - p[1]));
        if (d < trunc)
          acc += std::exp(-(d * d) / (2.0 * sigma * sigma)) / (sigma * std::sqrt(2.0 * M_PI));
      }
      out[size_t(i) * w + j] = acc;
    }
  return out;
}

// Brute-force contour oracle over every pixel.
std::vector<std::array<int, 2>> brute_force_contour(const std::vector<uint8_t>& m, int w,
                                                    int h) {
  std::vector<std::array<int, 2>> pts;
  auto at = [&](int i, int j) {
    if (i < 0 || i >= h || j < 0 || j >= w) return uint8_t(0);
    return m[size_t(i) * w + j];
  };
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (at(i, j) && (!at(i - 1, j) || !at(i + 1, j) || !at(i, j - 1) || !at(i, j + 1)))
        pts.push_back({i, j});
  return pts;
}

std::vector<uint8_t> random_mask(int w, int h, uint64_t seed, double p = 0.4) {
  std::vector<uint8_t> m(size_t(w) * h);
  Rng rng(seed);
  std::bernoulli_distribution b(p);
  for (auto& v : m) v = b(rng) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("single pixel is its own contour") {
  std::vector<uint8_t> m(64, 0);
  m[3 * 8 + 4] = 1;
  ContourSet cs = extract_contour(m.data(), 8, 8);
  REQUIRE(cs.points.size() == 1);
  CHECK(cs.points[0] == std::array<int, 2>{3, 4});
}

TEST_CASE("empty slice gives empty contour") {
  std::vector<uint8_t> m(64, 0);
  CHECK(extract_contour(m.data(), 8, 8).points.empty());
}

TEST_CASE("4x4 block inside 8x8 has the 12 perimeter pixels") {
  std::vector<uint8_t> m(64, 0);
  for (int i = 2; i < 6; ++i)
    for (int j = 2; j < 6; ++j) m[size_t(i) * 8 + j] = 1;
  ContourSet cs = extract_contour(m.data(), 8, 8);
  auto oracle = brute_force_contour(m, 8, 8);
  CHECK(cs.points.size() == 12);
  CHECK(cs.points == oracle);
}

TEST_CASE("border foreground counts as contour") {
  std::vector<uint8_t> m(16, 1);  // 4x4 all ones: every pixel touches the border region
  ContourSet cs = extract_contour(m.data(), 4, 4);
  CHECK(cs.points.size() == 12);  // interior 2x2 has no background 4-neighbor
}

TEST_CASE("non-binary input is rejected") {
  std::vector<uint8_t> m(16, 0);
  m[5] = 3;
  CHECK_THROWS_AS(extract_contour(m.data(), 4, 4), Error);
}

TEST_CASE("contour matches brute force on random masks") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto m = random_mask(16, 16, seed);
    ContourSet cs = extract_contour(m.data(), 16, 16);
    CHECK(cs.points == brute_force_contour(m, 16, 16));
  }
}

TEST_CASE("sigma-5 single point values") {
  ContourSet cs;
  cs.points = {{8, 8}};
  ContourHeatmap hm = gaussian_contour_map(cs, 17, 17, 5.0, 5.0);
  const double peak = 1.0 / (5.0 * std::sqrt(2.0 * M_PI));
  CHECK(std::fabs(hm.at(8, 8) - peak) < 1e-15);
  CHECK(std::fabs(hm.at(8, 8) - 0.0797885) < 1e-7);
  const double v3 = peak * std::exp(-9.0 / 50.0);
  CHECK(std::fabs(hm.at(8, 11) - v3) < 1e-15);
  CHECK(std::fabs(hm.at(8, 11) - 0.0666449) < 1e-7);
  // distance 5 is not strictly inside the truncation radius
  CHECK(hm.at(8, 13) == 0.0);
  // distances 4 and (3,4) = 5
  CHECK(hm.at(8, 12) > 0.0);
  CHECK(hm.at(11, 12) == 0.0);
}

TEST_CASE("empty contour set gives all-zero map") {
  ContourHeatmap hm = gaussian_contour_map(ContourSet{}, 8, 8, 5.0, 5.0);
  for (double v : hm.values) CHECK(v == 0.0);
}

TEST_CASE("superposition of two points") {
  ContourSet one, two;
  one.points = {{4, 6}};
  two.points = {{4, 6}, {8, 6}};  // both at distance 2 from (6,6)
  ContourHeatmap h1 = gaussian_contour_map(one, 13, 13, 5.0, 5.0);
  ContourHeatmap h2 = gaussian_contour_map(two, 13, 13, 5.0, 5.0);
  CHECK(std::fabs(h2.at(6, 6) - 2.0 * h1.at(6, 6)) < 1e-15);
}

TEST_CASE("heatmap equals brute force on random masks") {
  for (uint64_t seed = 100; seed < 110; ++seed) {
    auto m = random_mask(16, 16, seed, 0.3);
    ContourSet cs = extract_contour(m.data(), 16, 16);
    ContourHeatmap hm = gaussian_contour_map(cs, 16, 16, 5.0, 5.0);
    std::vector<std::array<int, 2>> pts(cs.points.begin(), cs.points.end());
    auto oracle = brute_force_map(pts, 16, 16, 5.0, 5.0);
    for (size_t i = 0; i < oracle.size(); ++i)
      CHECK(std::fabs(hm.values[i] - oracle[i]) <= 1e-12);
  }
}

TEST_CASE("monotone decay with distance for a single point") {
  ContourSet cs;
  cs.points = {{10, 10}};
  ContourHeatmap hm = gaussian_contour_map(cs, 21, 21, 5.0, 5.0);
  for (int d = 1; d < 5; ++d) CHECK(hm.at(10, 10 + d) < hm.at(10, 10 + d - 1));
}

TEST_CASE("upper bound |contour| / (sigma sqrt(2 pi))") {
  auto m = random_mask(16, 16, 7, 0.5);
  ContourSet cs = extract_contour(m.data(), 16, 16);
  ContourHeatmap hm = gaussian_contour_map(cs, 16, 16, 5.0, 15.0);
  double bound = double(cs.points.size()) / (5.0 * std::sqrt(2.0 * M_PI));
  for (double v : hm.values) {
    CHECK(v >= 0.0);
    CHECK(v <= bound + 1e-12);
  }
}

TEST_CASE("translation equivariance away from borders") {
  ContourSet a, b;
  a.points = {{8, 8}, {9, 8}};
  b.points = {{11, 13}, {12, 13}};  // shifted by (3, 5)
  ContourHeatmap ha = gaussian_contour_map(a, 32, 32, 3.0, 3.0);
  ContourHeatmap hb = gaussian_contour_map(b, 32, 32, 3.0, 3.0);
  for (int i = 4; i < 14; ++i)
    for (int j = 4; j < 14; ++j)
      CHECK(std::fabs(ha.at(i, j) - hb.at(i + 3, j + 5)) < 1e-15);
}

TEST_CASE("heatmap stack composes the per-slice oracles") {
  LabelVolume gt;
  gt.dims = {16, 16, 4};
  gt.spacing = {1, 1, 1};
  gt.data.resize(gt.voxels());
  Rng rng(42);
  std::bernoulli_distribution bd(0.3);
  for (auto& v : gt.data) v = bd(rng) ? 1 : 0;

  auto stack = heatmap_stack(gt, 5.0);
  REQUIRE(stack.size() == 4);
  for (int z = 0; z < 4; ++z) {
    ContourHeatmap per_slice =
        gaussian_contour_map(extract_contour(gt, z), 16, 16, 5.0, 5.0);
    CHECK(stack[z].values == per_slice.values);
  }
}

TEST_CASE("all-zero label volume gives all-zero stack") {
  LabelVolume gt;
  gt.dims = {8, 8, 3};
  gt.spacing = {1, 1, 1};
  gt.data.assign(gt.voxels(), 0);
  for (const auto& hm : heatmap_stack(gt, 5.0))
    for (double v : hm.values) CHECK(v == 0.0);
}

TEST_CASE("symmetric mask gives reflection-symmetric heatmap") {
  // even-symmetric ellipse about the grid center line
  LabelVolume gt;
  gt.dims = {24, 24, 1};
  gt.spacing = {1, 1, 1};
  gt.data.assign(gt.voxels(), 0);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      double dx = (x - 11.5) / 8.0, dy = (y - 11.5) / 5.0;
      if (dx * dx + dy * dy <= 1.0) gt.at(x, y, 0) = 1;
    }
  auto stack = heatmap_stack(gt, 5.0);
  const ContourHeatmap& hm = stack[0];
  double asym = 0;
  for (int i = 0; i < 24; ++i)
    for (int j = 0; j < 24; ++j)
      asym = std::max(asym, std::fabs(hm.at(i, j) - hm.at(23 - i, j)));
  CHECK(asym <= 1e-12);
}
