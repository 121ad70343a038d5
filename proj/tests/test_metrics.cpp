#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "hf/metrics.hpp"
#include "hf/rng.hpp"

using namespace hf;

namespace {

LabelVolume box(std::array<int, 3> dims, std::array<int, 3> lo, std::array<int, 3> hi) {
  LabelVolume v;
  v.dims = dims;
  v.spacing = {1, 1, 1};
  v.data.assign(v.voxels(), 0);
  for (int z = lo[2]; z <= hi[2]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[0]; x <= hi[0]; ++x) v.at(x, y, z) = 1;
  return v;
}

LabelVolume random_mask(std::array<int, 3> dims, uint64_t seed, double p = 0.35) {
  LabelVolume v;
  v.dims = dims;
  v.spacing = {1, 1, 1};
  v.data.resize(v.voxels());
  Rng rng(seed);
  std::bernoulli_distribution b(p);
  for (auto& x : v.data) x = b(rng) ? 1 : 0;
  return v;
}

// Independent all-pairs oracle, including its own surface extraction.
double asd_oracle(const LabelVolume& a, const LabelVolume& b, std::array<float, 3> sp) {
  auto surf = [](const LabelVolume& m) {
    std::vector<std::array<int, 3>> s;
    for (int z = 0; z < m.dims[2]; ++z)
      for (int y = 0; y < m.dims[1]; ++y)
        for (int x = 0; x < m.dims[0]; ++x) {
          if (!m.at(x, y, z)) continue;
          bool border = x == 0 || x == m.dims[0] - 1 || y == 0 || y == m.dims[1] - 1 ||
                        z == 0 || z == m.dims[2] - 1;
          bool exposed = border;
          if (!exposed)
            exposed = !m.at(x - 1, y, z) || !m.at(x + 1, y, z) || !m.at(x, y - 1, z) ||
                      !m.at(x, y + 1, z) || !m.at(x, y, z - 1) || !m.at(x, y, z + 1);
          if (exposed) s.push_back({x, y, z});
        }
    return s;
  };
  auto sa = surf(a), sb = surf(b);
  auto dir = [&](const auto& from, const auto& to) {
    double acc = 0;
    for (auto& p : from) {
      double best = std::numeric_limits<double>::max();
      for (auto& q : to) {
        double d = std::hypot(std::hypot((p[0] - q[0]) * double(sp[0]),
                                         (p[1] - q[1]) * double(sp[1])),
                              (p[2] - q[2]) * double(sp[2]));
        best = std::min(best, d);
      }
      acc += best;
    }
    return acc / double(from.size());
  };
  return 0.5 * (dir(sa, sb) + dir(sb, sa));
}

}  // namespace

TEST_CASE("dsc of identical nonempty masks is 1") {
  LabelVolume a = box({8, 8, 8}, {2, 2, 2}, {5, 5, 5});
  CHECK(dsc(a, a) == 1.0);
}

TEST_CASE("dsc of disjoint nonempty masks is 0") {
  LabelVolume a = box({8, 8, 8}, {0, 0, 0}, {2, 2, 2});
  LabelVolume b = box({8, 8, 8}, {5, 5, 5}, {7, 7, 7});
  CHECK(dsc(a, b) == 0.0);
}

TEST_CASE("dsc with partial overlap from set counting") {
  // |gt| = 4, |seg| = 4, overlap 2 -> 2*2/8 = 0.5
  LabelVolume a = box({8, 2, 2}, {0, 0, 0}, {3, 0, 0});
  LabelVolume b = box({8, 2, 2}, {2, 0, 0}, {5, 0, 0});
  CHECK(dsc(a, b) == 0.5);
}

TEST_CASE("dsc of two empty masks is 1 by decision") {
  LabelVolume a;
  a.dims = {4, 4, 4};
  a.spacing = {1, 1, 1};
  a.data.assign(64, 0);
  CHECK(dsc(a, a) == 1.0);
  LabelVolume b = box({4, 4, 4}, {1, 1, 1}, {2, 2, 2});
  CHECK(dsc(a, b) == 0.0);
}

TEST_CASE("asd of identical masks is 0") {
  LabelVolume a = box({8, 8, 8}, {2, 2, 2}, {5, 5, 5});
  CHECK(asd(a, a, {1, 1, 1}) == 0.0);
}

TEST_CASE("asd of two single voxels is their distance") {
  LabelVolume a = box({8, 4, 4}, {0, 0, 0}, {0, 0, 0});
  LabelVolume b = box({8, 4, 4}, {3, 0, 0}, {3, 0, 0});
  CHECK(asd(a, b, {1, 1, 1}) == 3.0);
  CHECK(asd(a, b, {2, 1, 1}) == 6.0);
}

TEST_CASE("asd errors on an empty mask") {
  LabelVolume a = box({4, 4, 4}, {1, 1, 1}, {2, 2, 2});
  LabelVolume e;
  e.dims = {4, 4, 4};
  e.spacing = {1, 1, 1};
  e.data.assign(64, 0);
  try {
    asd(a, e, {1, 1, 1});
    FAIL("expected undefined surface error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::empty_mask);
    CHECK(std::string(err.what()).find("undefined surface") != std::string::npos);
  }
}

TEST_CASE("asd matches the all-pairs brute force on random masks") {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    LabelVolume a = random_mask({10, 9, 8}, seed * 2 + 1);
    LabelVolume b = random_mask({10, 9, 8}, seed * 2 + 2);
    if (a.foreground_count() == 0 || b.foreground_count() == 0) continue;
    double got = asd(a, b, {1.f, 0.7f, 1.3f});
    double want = asd_oracle(a, b, {1.f, 0.7f, 1.3f});
    CHECK(std::fabs(got - want) <= 1e-9);
  }
}

TEST_CASE("metric symmetry and spacing scaling") {
  LabelVolume a = random_mask({9, 9, 9}, 11);
  LabelVolume b = random_mask({9, 9, 9}, 12);
  CHECK(dsc(a, b) == dsc(b, a));
  CHECK(asd(a, b, {1, 1, 1}) == asd(b, a, {1, 1, 1}));
  CHECK(std::fabs(asd(a, b, {2, 2, 2}) - 2.0 * asd(a, b, {1, 1, 1})) < 1e-12);
  CHECK(dsc(a, b) == dsc(a, b));  // spacing-free
}

TEST_CASE("sen and ppv from set counting") {
  LabelVolume gt = box({8, 2, 2}, {0, 0, 0}, {3, 0, 0});  // 4 voxels
  LabelVolume sub = box({8, 2, 2}, {1, 0, 0}, {2, 0, 0});  // 2 inside gt
  auto [sen, ppv] = sen_ppv(gt, sub);
  CHECK(sen == 0.5);
  CHECK(ppv == 1.0);
  auto [sen2, ppv2] = sen_ppv(gt, gt);
  CHECK(sen2 == 1.0);
  CHECK(ppv2 == 1.0);
  LabelVolume disj = box({8, 2, 2}, {6, 1, 1}, {7, 1, 1});
  auto [sen3, ppv3] = sen_ppv(gt, disj);
  CHECK(sen3 == 0.0);
  CHECK(ppv3 == 0.0);
}

TEST_CASE("sen/ppv duality: sen(gt, seg) == ppv(seg, gt)") {
  LabelVolume a = random_mask({8, 8, 8}, 21);
  LabelVolume b = random_mask({8, 8, 8}, 22);
  CHECK(sen_ppv(a, b).first == sen_ppv(b, a).second);
}

TEST_CASE("evaluate_cases aggregates and tolerates failures") {
  LabelVolume g1 = box({8, 8, 8}, {1, 1, 1}, {4, 4, 4});
  LabelVolume s1 = g1;
  LabelVolume g2 = box({8, 8, 8}, {2, 2, 2}, {5, 5, 5});
  LabelVolume s2 = box({8, 8, 8}, {2, 2, 2}, {5, 5, 4});
  LabelVolume empty;
  empty.dims = {8, 8, 8};
  empty.spacing = {1, 1, 1};
  empty.data.assign(empty.voxels(), 0);

  MetricsReport rep =
      evaluate_cases({{"a", &g1, &s1}, {"b", &g2, &s2}, {"bad", &g1, &empty}}, {1, 1, 1});
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].dsc == 1.0);
  CHECK(!rep.rows[2].error.empty());
  // aggregates recomputable from rows
  double mean = (rep.rows[0].dsc + rep.rows[1].dsc) / 2.0;
  CHECK(rep.dsc_mean == mean);

  MetricsReport single = evaluate_cases({{"a", &g1, &s1}}, {1, 1, 1});
  CHECK(single.dsc_mean == 1.0);
  CHECK(single.dsc_std == 0.0);
}

TEST_CASE("two cases with dsc 0.8 and 0.9 average to 0.85") {
  MetricsReport rep;
  rep.rows.push_back({"a", 0.8, 1.0, 1, 1, ""});
  rep.rows.push_back({"b", 0.9, 2.0, 1, 1, ""});
  rep.recompute_aggregates();
  CHECK(std::fabs(rep.dsc_mean - 0.85) < 1e-15);
  CHECK(std::fabs(rep.asd_mean - 1.5) < 1e-15);
}
