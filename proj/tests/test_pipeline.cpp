#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "hf/pipeline.hpp"
#include "hf/rng.hpp"

using namespace hf;
using namespace hf::pipeline;

namespace {

// small, low-noise phantom set for fast trainer tests
std::vector<TrainCase> tiny_dataset(int n, uint64_t seed, int crop = 32) {
  std::vector<TrainCase> cases;
  for (int i = 0; i < n; ++i) {
    PhantomSpec s;
    s.dims = {crop, crop, crop};
    s.spacing = {1, 1, 1};
    s.organ_center = {crop / 2.f - 0.5f, crop / 2.f - 0.5f, crop / 2.f - 0.5f};
    s.radii_mm = {crop * 0.28f, crop * 0.2f, crop * 0.24f};
    s.radial_perturbation_amplitude = 0.1f;
    s.contrast_delta = 1.f;
    s.noise_sigma = 0.2f;
    s.boundary_blur_sigma = 0.8f;
    s.seed = subseed(seed, "case" + std::to_string(i));
    auto [img, gt] = generate_phantom(s);
    TrainCase c;
    c.id = "case" + std::to_string(i);
    c.region = preprocess(img, {1, 1, 1}, -1e30f);
    c.gt = std::move(gt);
    c.heat = heatmap_stack(c.gt, 5.0);
    cases.push_back(std::move(c));
  }
  return cases;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.cold_start_epochs = 1;
  cfg.crop_size = 32;
  cfg.patch_size = 32;
  cfg.patches_per_volume = 8;
  cfg.val_interval = 0;
  cfg.lr_step_iterations = 4;
  cfg.seed = 5;
  return cfg;
}

model::TopologyConfig tiny_topology(const char* tok = "hf-2") {
  model::TopologyConfig t = model::TopologyConfig::from_name(tok);
  t.base_width = 4;
  return t;
}

}  // namespace

TEST_CASE("lr schedule: starts at lr_start, decays stepwise to exactly lr_end") {
  TrainConfig cfg;
  cfg.lr_step_iterations = 500;
  long total = 2000;
  CHECK(lr_at(cfg, 0, total) == 0.01);
  CHECK(lr_at(cfg, 499, total) == 0.01);
  double f = lr_decay_factor(cfg, total);
  CHECK(std::fabs(lr_at(cfg, 500, total) - 0.01 * f) < 1e-15);
  CHECK(lr_at(cfg, total - 1, total) == doctest::Approx(0.0001).epsilon(1e-9));
  double prev = 1.0;
  for (long s = 0; s < total; s += 37) {
    double lr = lr_at(cfg, s, total);
    CHECK(lr <= prev + 1e-18);
    CHECK(lr >= cfg.lr_end);
    CHECK(lr <= cfg.lr_start);
    prev = lr;
  }
}

TEST_CASE("largest connected component keeps only the biggest blob") {
  LabelVolume m;
  m.dims = {8, 8, 8};
  m.spacing = {1, 1, 1};
  m.data.assign(m.voxels(), 0);
  for (int z = 1; z < 4; ++z)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 4; ++x) m.at(x, y, z) = 1;  // 27 voxels
  m.at(6, 6, 6) = 1;
  m.at(7, 6, 6) = 1;
  LabelVolume out = largest_component(m);
  CHECK(out.foreground_count() == 27);
  CHECK(out.at(2, 2, 2) == 1);
  CHECK(out.at(6, 6, 6) == 0);

  LabelVolume empty;
  empty.dims = {4, 4, 4};
  empty.spacing = {1, 1, 1};
  empty.data.assign(64, 0);
  CHECK(largest_component(empty).foreground_count() == 0);
}

TEST_CASE("cold start freezes contour and TCL parameters bit-exactly") {
  auto cases = tiny_dataset(2, 71);
  auto m = model::build_topology<float>(tiny_topology(), {.seed = 2});
  uint64_t cont0 = m.net.group_checksum(nn::Group::cont);
  uint64_t tcl0 = m.net.group_checksum(nn::Group::tcl);
  uint64_t seg0 = m.net.group_checksum(nn::Group::seg);
  uint64_t shared0 = m.net.group_checksum(nn::Group::shared);

  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  cfg.cold_start_epochs = 1;
  cfg.max_joint_steps = 0;  // stop right after the cold epoch
  TrainHistory h = train(m, cases, {}, cfg);
  for (const StepRecord& s : h.steps) CHECK(s.phase == Phase::cold_start);
  CHECK(h.steps.size() == 2);  // 2 cases * 8 patches / batch 8

  CHECK(m.net.group_checksum(nn::Group::cont) == cont0);
  CHECK(m.net.group_checksum(nn::Group::tcl) == tcl0);
  CHECK(m.net.group_checksum(nn::Group::seg) != seg0);
  CHECK(m.net.group_checksum(nn::Group::shared) != shared0);

  // once joint training starts, the frozen groups move too
  TrainConfig joint = tiny_config();
  joint.max_joint_steps = 2;
  auto m2 = model::build_topology<float>(tiny_topology(), {.seed = 2});
  TrainHistory h2 = train(m2, cases, {}, joint);
  CHECK(h2.steps.back().phase == Phase::joint);
  CHECK(m2.net.group_checksum(nn::Group::cont) != cont0);
  CHECK(m2.net.group_checksum(nn::Group::tcl) != tcl0);
}

TEST_CASE("training is deterministic; same seed, same checksums and history") {
  auto cases = tiny_dataset(2, 91);
  TrainConfig cfg = tiny_config();
  auto m1 = model::build_topology<float>(tiny_topology(), {.seed = 4});
  auto m2 = model::build_topology<float>(tiny_topology(), {.seed = 4});
  TrainHistory h1 = train(m1, cases, {}, cfg);
  TrainHistory h2 = train(m2, cases, {}, cfg);
  CHECK(model_checksum(m1) == model_checksum(m2));
  REQUIRE(h1.steps.size() == h2.steps.size());
  for (size_t i = 0; i < h1.steps.size(); ++i) {
    CHECK(h1.steps[i].loss.total == h2.steps[i].loss.total);
    CHECK(h1.steps[i].lr == h2.steps[i].lr);
  }
  TrainConfig other = cfg;
  other.seed = 6;
  auto m3 = model::build_topology<float>(tiny_topology(), {.seed = 4});
  train(m3, cases, {}, other);
  CHECK(model_checksum(m3) != model_checksum(m1));
}

TEST_CASE("divergence aborts with the divergence error code") {
  auto cases = tiny_dataset(1, 101);
  auto m = model::build_topology<float>(tiny_topology(), {.seed = 2});
  m.net.params()[0]->value[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg = tiny_config();
  try {
    train(m, cases, {}, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::divergence);
  }
}

TEST_CASE("inference assembles per-slice forwards and replicates edges") {
  auto m = model::build_topology<float>(tiny_topology("lb"), {.seed = 8});
  TrainConfig cfg = tiny_config();
  cfg.batch_size = 1;  // match the per-slice oracle batching for exact equality
  Volume region;
  region.dims = {32, 32, 32};
  region.spacing = {1, 1, 1};
  region.data.resize(region.voxels());
  Rng rng(55);
  std::normal_distribution<float> g(0.f, 0.5f);
  for (auto& v : region.data) v = g(rng);

  InferenceResult res = infer(m, region, cfg);
  CHECK(res.mask.dims == region.dims);
  CHECK(res.heat_pred.dims == region.dims);

  // border slice 0 uses the replicated stack (0, 0, 1)
  const size_t plane = 32 * 32;
  nn::Batch<float> x(1, 3, 32, 32);
  for (int s = 0; s < 3; ++s) {
    int z = std::clamp(-1 + s, 0, 31);
    std::copy_n(region.data.data() + size_t(z) * plane, plane, x.plane(s, 0));
  }
  auto r = model::forward(m, x);
  for (size_t j = 0; j < plane; ++j)
    CHECK(res.heat_pred.data[j] == r.contour_pred.data[j]);

  // interior slice equals its own single-slice forward
  nn::Batch<float> xm(1, 3, 32, 32);
  for (int s = 0; s < 3; ++s)
    std::copy_n(region.data.data() + size_t(14 + s) * plane, plane, xm.plane(s, 0));
  auto rm = model::forward(m, xm);
  for (size_t j = 0; j < plane; ++j)
    CHECK(res.heat_pred.data[15 * plane + j] == rm.contour_pred.data[j]);

  Volume bad = region;
  bad.dims = {32, 32, 16};
  bad.data.resize(bad.voxels());
  CHECK_THROWS_AS(infer(m, bad, cfg), Error);
}

TEST_CASE("constant-logit model yields an empty mask without crashing") {
  auto m = model::build_topology<float>(tiny_topology("unet"), {.seed = 12});
  // zero every parameter: logits are all zero, argmax ties resolve to background
  for (nn::Param<float>* p : m.net.params())
    std::fill(p->value.begin(), p->value.end(), 0.f);
  TrainConfig cfg = tiny_config();
  Volume region;
  region.dims = {32, 32, 32};
  region.spacing = {1, 1, 1};
  region.data.assign(region.voxels(), 0.25f);
  InferenceResult res = infer(m, region, cfg);
  CHECK(res.mask.foreground_count() == 0);
}

TEST_CASE("inference is translation consistent along z away from borders") {
  auto m = model::build_topology<float>(tiny_topology("unet"), {.seed = 9});
  TrainConfig cfg = tiny_config();
  Volume region;
  region.dims = {32, 32, 32};
  region.spacing = {1, 1, 1};
  region.data.assign(region.voxels(), 0.f);
  Rng rng(66);
  std::normal_distribution<float> g(0.f, 0.5f);
  const size_t plane = 32 * 32;
  for (int z = 8; z < 24; ++z)
    for (size_t j = 0; j < plane; ++j) region.data[z * plane + j] = g(rng);

  Volume shifted;
  shifted.dims = region.dims;
  shifted.spacing = region.spacing;
  shifted.data.assign(shifted.voxels(), 0.f);
  std::copy_n(region.data.data(), 31 * plane, shifted.data.data() + plane);

  InferenceResult ra = infer(m, region, cfg);
  InferenceResult rb = infer(m, shifted, cfg);
  for (int z = 10; z < 22; ++z)
    for (size_t j = 0; j < plane; ++j)
      CHECK(ra.mask.data[size_t(z) * plane + j] ==
            rb.mask.data[size_t(z + 1) * plane + j]);
}

TEST_CASE("localization fallback uses the volume center and flags it") {
  auto loc = model::build_topology<float>(localizer_topology(2), {.seed = 3});
  nn::Param<float>* b = loc.net.find_param("seg.top.proj.b");
  REQUIRE(b != nullptr);
  b->value[0] = 100.f;  // background logit dominates everywhere
  Volume v;
  v.dims = {64, 64, 64};
  v.spacing = {1, 1, 1};
  v.data.assign(v.voxels(), 0.f);
  Localization l = localize(v, loc, 32);
  CHECK(l.fallback);
  CHECK(l.center == std::array<int, 3>{32, 32, 32});
  CHECK(l.region.dims == std::array<int, 3>{32, 32, 32});
}

TEST_CASE("crop and paste round trip preserves interior labels") {
  LabelVolume gt;
  gt.dims = {48, 48, 48};
  gt.spacing = {1, 1, 1};
  gt.data.assign(gt.voxels(), 0);
  for (int z = 20; z < 28; ++z)
    for (int y = 18; y < 30; ++y)
      for (int x = 16; x < 32; ++x) gt.at(x, y, z) = 1;
  std::array<int, 3> offset{12, 12, 12};
  LabelVolume crop = crop_label_region(gt, offset, 32);
  CHECK(crop.foreground_count() == gt.foreground_count());
  LabelVolume back = paste_region(gt.dims, gt.spacing, crop, offset);
  CHECK(back.data == gt.data);
  LabelVolume edge = crop_label_region(gt, {-8, -8, -8}, 32);
  CHECK(edge.at(0, 0, 0) == 0);
}

TEST_CASE("trained localizer centers a clear organ and the crop contains it") {
  PhantomSpec s;
  s.dims = {64, 64, 64};
  s.spacing = {1, 1, 1};
  s.organ_center = {29.5f, 33.5f, 31.5f};
  s.radii_mm = {10, 8, 9};
  s.radial_perturbation_amplitude = 0.05f;
  s.contrast_delta = 2.f;
  s.noise_sigma = 0.1f;
  s.boundary_blur_sigma = 0.8f;
  s.seed = 77;
  auto [img, gt] = generate_phantom(s);
  Volume pre = preprocess(img, {1, 1, 1}, -1e30f);

  TrainConfig cfg = tiny_config();
  cfg.loc_steps = 150;
  cfg.loc_width = 4;
  auto loc = train_localizer({&pre}, {&gt}, cfg);
  Localization l = localize(pre, loc, 32);
  CHECK(!l.fallback);
  CHECK(std::abs(l.center[0] - 29) <= 4);
  CHECK(std::abs(l.center[1] - 33) <= 4);
  CHECK(std::abs(l.center[2] - 31) <= 4);
  LabelVolume crop = crop_label_region(gt, l.offset, 32);
  CHECK(crop.foreground_count() == gt.foreground_count());

  // two-stage wrapper pastes the mask back into full geometry
  auto m = model::build_topology<float>(tiny_topology("lb"), {.seed = 5});
  TwoStageResult two = two_stage_segment(pre, loc, m, cfg);
  CHECK(two.mask.dims == pre.dims);
}
