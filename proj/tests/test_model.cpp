#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "hf/checkpoint.hpp"
#include "hf/model.hpp"

using namespace hf;
using namespace hf::model;
using hf::test::fill_gauss;

namespace {

nn::Batch<float> random_batchf(int n, int c, int h, int w, uint64_t seed) {
  nn::Batch<float> b(n, c, h, w);
  std::vector<double> tmp(b.data.size());
  fill_gauss(tmp, seed, 0.5);
  for (size_t i = 0; i < tmp.size(); ++i) b.data[i] = float(tmp[i]);
  return b;
}

TopologyConfig cfg_of(const std::string& token, int width = 8) {
  TopologyConfig c = TopologyConfig::from_name(token);
  c.base_width = width;
  return c;
}

}  // namespace

TEST_CASE("count_blocks reproduces the FB table") {
  CHECK(count_blocks(cfg_of("unet")) == std::pair<int, int>{0, 0});
  CHECK(count_blocks(cfg_of("eb")) == std::pair<int, int>{1, 0});
  CHECK(count_blocks(cfg_of("lb")) == std::pair<int, int>{7, 0});
  CHECK(count_blocks(cfg_of("hf-1")) == std::pair<int, int>{6, 1});
  CHECK(count_blocks(cfg_of("hf-2")) == std::pair<int, int>{5, 2});
  CHECK(count_blocks(cfg_of("hf-3")) == std::pair<int, int>{4, 3});
  CHECK(count_blocks(cfg_of("hf-6")) == std::pair<int, int>{1, 6});
}

TEST_CASE("topology tokens round trip") {
  for (const char* t : {"unet", "eb", "lb", "hf-1", "hf-3", "hf-6", "hf-6-catt",
                        "hf-6-patt", "hf-6-datt"})
    CHECK(TopologyConfig::from_name(t).name() == t);
  CHECK_THROWS_AS(TopologyConfig::from_name("resnet"), Error);
  CHECK_THROWS_AS(TopologyConfig::from_name("hf-0"), Error);  // validated at build
}

TEST_CASE("inconsistent config is rejected") {
  TopologyConfig c = cfg_of("hf-6");
  c.tcl_count = 7;
  CHECK_THROWS_AS(validate_topology(c), Error);
  c.tcl_count = 0;
  CHECK_THROWS_AS(validate_topology(c), Error);
  c = cfg_of("unet");
  c.in_slices = 2;
  CHECK_THROWS_AS(validate_topology(c), Error);
}

TEST_CASE("unet groups: shared trunk, top mapping only in seg branch") {
  auto m = build_topology<float>(cfg_of("unet"));
  CHECK(m.net.param_count(nn::Group::shared) > 0);
  CHECK(m.net.param_count(nn::Group::seg) > 0);
  CHECK(m.net.param_count(nn::Group::cont) == 0);
  CHECK(m.net.param_count(nn::Group::tcl) == 0);
  for (const nn::Param<float>* p : m.net.params())
    if (p->group == nn::Group::seg)
      CHECK(p->name.rfind("seg.top", 0) == 0);
}

TEST_CASE("lb has exactly two task-specific top mappings after a shared trunk") {
  auto m = build_topology<float>(cfg_of("lb"));
  CHECK(m.net.param_count(nn::Group::tcl) == 0);
  int seg_convs = 0, cont_convs = 0;
  for (const nn::Param<float>* p : m.net.params()) {
    if (p->group == nn::Group::seg) {
      CHECK(p->name.rfind("seg.top", 0) == 0);
      if (p->local == "w") ++seg_convs;
    }
    if (p->group == nn::Group::cont) {
      CHECK(p->name.rfind("cont.top", 0) == 0);
      if (p->local == "w") ++cont_convs;
    }
  }
  CHECK(seg_convs == 2);   // two convolutional layers per top-mapping block
  CHECK(cont_convs == 2);
}

TEST_CASE("parameter partition is complete and disjoint") {
  for (const char* tok : {"unet", "eb", "lb", "hf-1", "hf-3", "hf-6", "hf-2-datt"}) {
    auto m = build_topology<float>(cfg_of(tok, 4));
    size_t total = m.net.param_count();
    size_t by_group = m.net.param_count(nn::Group::shared) +
                      m.net.param_count(nn::Group::seg) +
                      m.net.param_count(nn::Group::cont) +
                      m.net.param_count(nn::Group::tcl);
    CHECK(total == by_group);
    CHECK(total > 0);
  }
}

TEST_CASE("more TCL blocks means more parameters at equal width") {
  size_t p1 = build_topology<float>(cfg_of("hf-1")).net.param_count();
  size_t p6 = build_topology<float>(cfg_of("hf-6")).net.param_count();
  CHECK(p6 > p1);
  // hf splits blocks relative to lb as well
  size_t plb = build_topology<float>(cfg_of("lb")).net.param_count();
  CHECK(p1 > plb);
}

TEST_CASE("forward shapes follow the contract for every family") {
  nn::Batch<float> x = random_batchf(2, 3, 64, 64, 1);
  for (const char* tok : {"unet", "eb", "lb", "hf-1", "hf-2", "hf-3", "hf-6"}) {
    auto m = build_topology<float>(cfg_of(tok));
    auto r = forward(m, x);
    CHECK(r.seg_logits.n == 2);
    CHECK(r.seg_logits.c == 2);
    CHECK(r.seg_logits.h == 64);
    CHECK(r.seg_logits.w == 64);
    CHECK(r.seg_prob.c == 1);
    TopologyConfig cfg = cfg_of(tok);
    if (cfg.family == Family::unet) {
      CHECK(r.contour_pred.empty());
      CHECK(r.triples.empty());
    } else {
      CHECK(r.contour_pred.n == 2);
      CHECK(r.contour_pred.c == 1);
      CHECK(r.contour_pred.h == 64);
    }
    size_t want = cfg.family == Family::hf ? size_t(cfg.tcl_count) : 0;
    CHECK(r.triples.size() == want);
  }
}

TEST_CASE("hf-6 triple dims decrease strictly then increase strictly") {
  auto m = build_topology<float>(cfg_of("hf-6"));
  nn::Batch<float> x = random_batchf(1, 3, 64, 64, 2);
  auto r = forward(m, x);
  REQUIRE(r.triples.size() == 6);
  std::vector<int> dims;
  for (auto& t : r.triples) {
    CHECK(t.seg.same_shape(t.cont));
    CHECK(t.seg.same_shape(t.tcl));
    dims.push_back(t.seg.h);
  }
  CHECK(dims == std::vector<int>{32, 16, 8, 16, 32, 64});
  int kink = 2;  // dims[2] == 8 is the bottom
  for (int i = 1; i <= kink; ++i) CHECK(dims[i] < dims[i - 1]);
  for (int i = kink + 1; i < 6; ++i) CHECK(dims[i] > dims[i - 1]);
}

TEST_CASE("forward is deterministic") {
  auto m = build_topology<float>(cfg_of("hf-2"));
  nn::Batch<float> x = random_batchf(2, 3, 32, 32, 3);
  auto a = forward(m, x);
  auto b = forward(m, x);
  CHECK(a.seg_logits.data == b.seg_logits.data);
  CHECK(a.contour_pred.data == b.contour_pred.data);
}

TEST_CASE("alpha 0 with mirrored init makes branch features equal at fused levels") {
  TopologyConfig cfg = cfg_of("hf-6");
  cfg.alpha = 0.0;
  BuildOptions opt;
  opt.mirror_branch_init = true;
  auto m = build_topology<float>(cfg, opt);
  for (uint64_t s = 0; s < 3; ++s) {
    nn::Batch<float> x = random_batchf(2, 3, 32, 32, 100 + s);
    auto r = forward(m, x);
    for (auto& t : r.triples) {
      float worst = 0;
      for (size_t i = 0; i < t.seg.data.size(); ++i)
        worst = std::max(worst, std::fabs(t.seg.data[i] - t.cont.data[i]));
      CHECK(worst <= 1e-6f);
    }
  }
}

TEST_CASE("tcl_fuse_weighted matches the blend examples") {
  nn::Batch<float> priv(1, 2, 2, 2), pub(1, 2, 2, 2);
  std::fill(priv.data.begin(), priv.data.end(), 2.f);
  std::fill(pub.data.begin(), pub.data.end(), 4.f);
  auto mid = tcl_fuse_weighted(priv, pub, 0.5);
  for (float v : mid.data) CHECK(v == 3.f);
  auto pub_only = tcl_fuse_weighted(priv, pub, 0.0);
  CHECK(pub_only.data == pub.data);
  std::fill(priv.data.begin(), priv.data.end(), 1.f);
  std::fill(pub.data.begin(), pub.data.end(), 0.f);
  auto a02 = tcl_fuse_weighted(priv, pub, 0.2);
  for (float v : a02.data) CHECK(std::fabs(v - 0.2f) < 1e-7f);
  nn::Batch<float> bad(1, 2, 2, 3);
  CHECK_THROWS_AS(tcl_fuse_weighted(priv, bad, 0.5), Error);
}

TEST_CASE("Eq.5 fusion equals a term-by-term oracle") {
  nn::AttentionFuse<double> fuse(4, nn::AttnMode::dual, false);
  std::vector<double> wq1, wk1, wq2, wk2;
  for (nn::Param<double>* p : fuse.params()) {
    fill_gauss(p->value, fnv1a64(p->name) + 7, 0.5);
    if (p->local == "wq1") wq1 = p->value;
    if (p->local == "wk1") wk1 = p->value;
    if (p->local == "wq2") wq2 = p->value;
    if (p->local == "wk2") wk2 = p->value;
  }
  nn::Batch<double> priv(1, 4, 3, 3), pub(1, 4, 3, 3);
  std::vector<double> tmp(priv.data.size());
  fill_gauss(tmp, 31);
  priv.data = tmp;
  fill_gauss(tmp, 32);
  pub.data = tmp;

  nn::Batch<double> got = tcl_fuse_attention(fuse, priv, pub);

  // independent enumeration: four attended terms plus 2 priv + 2 pub
  auto c1 = channel_attention(priv);
  auto c2 = channel_attention(pub);
  auto p1 = position_attention(priv, wq1, wk1);
  auto p2 = position_attention(pub, wq2, wk2);
  for (size_t i = 0; i < got.data.size(); ++i) {
    double want = c1.attended.data[i] + c2.attended.data[i] + p1.attended.data[i] +
                  p2.attended.data[i] + 2.0 * priv.data[i] + 2.0 * pub.data[i];
    CHECK(std::fabs(got.data[i] - want) < 1e-6);
  }

  // zero inputs give zero output
  nn::Batch<double> z(1, 4, 3, 3);
  nn::Batch<double> gz = tcl_fuse_attention(fuse, z, z);
  for (double v : gz.data) CHECK(v == 0.0);
}

TEST_CASE("Eq.5 averaged mode keeps single residuals") {
  nn::AttentionFuse<double> fuse(4, nn::AttnMode::dual, true);
  for (nn::Param<double>* p : fuse.params()) fill_gauss(p->value, fnv1a64(p->name), 0.5);
  nn::Batch<double> priv(1, 4, 2, 2), pub(1, 4, 2, 2);
  std::vector<double> tmp(priv.data.size());
  fill_gauss(tmp, 41);
  priv.data = tmp;
  fill_gauss(tmp, 42);
  pub.data = tmp;
  nn::AttentionFuse<double> literal(4, nn::AttnMode::dual, false);
  size_t i = 0;
  auto lp = literal.params();
  for (nn::Param<double>* p : fuse.params()) lp[i++]->value = p->value;
  nn::Batch<double> avg = tcl_fuse_attention(fuse, priv, pub);
  nn::Batch<double> lit = tcl_fuse_attention(literal, priv, pub);
  for (size_t j = 0; j < avg.data.size(); ++j)
    CHECK(std::fabs((lit.data[j] - avg.data[j]) - (priv.data[j] + pub.data[j])) < 1e-9);
}

TEST_CASE("Eq.5 is linear in the inputs once masks are frozen") {
  // with fixed masks the fusion is a fixed linear map, so doubling both
  // inputs doubles every term; verified on the enumeration oracle
  nn::Batch<double> priv(1, 4, 3, 3), pub(1, 4, 3, 3);
  std::vector<double> tmp(priv.data.size());
  fill_gauss(tmp, 51);
  priv.data = tmp;
  fill_gauss(tmp, 52);
  pub.data = tmp;
  auto c1 = channel_attention(priv);
  auto apply_mask = [&](const std::vector<double>& mask, const nn::Batch<double>& x) {
    // y[c, p] = sum_c' mask[c, c'] x[c', p]
    nn::Batch<double> y(1, 4, 3, 3);
    for (int c = 0; c < 4; ++c)
      for (int p = 0; p < 9; ++p) {
        double acc = 0;
        for (int cc = 0; cc < 4; ++cc)
          acc += mask[size_t(c) * 4 + cc] * x.data[size_t(cc) * 9 + p];
        y.data[size_t(c) * 9 + p] = acc;
      }
    return y;
  };
  nn::Batch<double> twice = priv;
  for (double& v : twice.data) v *= 2.0;
  auto y1 = apply_mask(c1.masks, priv);
  auto y2 = apply_mask(c1.masks, twice);
  for (size_t i = 0; i < y1.data.size(); ++i)
    CHECK(std::fabs(y2.data[i] - 2.0 * y1.data[i]) < 1e-12);
  // and the attended output matches the explicit mask application
  for (size_t i = 0; i < y1.data.size(); ++i)
    CHECK(std::fabs(y1.data[i] - c1.attended.data[i]) < 1e-12);
}

TEST_CASE("tcl block: identity parameters pass relu(priv_seg) through") {
  TclBlockOp<double> block(3, FuseMode::weighted, 0.2, Attention::none);
  auto& net = block.network();
  // bottleneck and convs become identity maps
  for (nn::Param<double>* p : net.params()) {
    std::fill(p->value.begin(), p->value.end(), 0.0);
    if (p->local != "w") continue;
    if (p->shape == std::vector<int>{3, 3, 1, 1}) {
      for (int i = 0; i < 3; ++i) p->value[size_t(i) * 3 + i] = 1.0;
    } else {
      // 3x3 identity: center tap of the matching channel
      for (int i = 0; i < 3; ++i) p->value[((size_t(i) * 3 + i) * 3 + 1) * 3 + 1] = 1.0;
    }
  }
  nn::Batch<double> seg(2, 3, 4, 4), zero(2, 3, 4, 4);
  std::vector<double> tmp(seg.data.size());
  fill_gauss(tmp, 61);
  seg.data = tmp;
  auto out = block(seg, zero);
  for (size_t i = 0; i < seg.data.size(); ++i)
    CHECK(out.tcl.data[i] == std::max(seg.data[i], 0.0));
}

TEST_CASE("tcl block is symmetric in its branch inputs_xi") {
  TclBlockOp<float> block(4, FuseMode::weighted, 0.3, Attention::none);
  nn::Batch<float> a = random_batchf(2, 4, 4, 4, 71);
  nn::Batch<float> b = random_batchf(2, 4, 4, 4, 72);
  auto ab = block(a, b);
  auto ba = block(b, a);
  CHECK(ab.tcl.data == ba.tcl.data);  // summation is commutative
  CHECK(ab.feedback_seg.data == ba.feedback_cont.data);
  // output shape equals branch shape
  CHECK(ab.tcl.same_shape(a));
  nn::Batch<float> bad = random_batchf(2, 4, 4, 6, 73);
  CHECK_THROWS_AS(block(a, bad), Error);
}

TEST_CASE("attention masks stay row-stochastic after a forward pass") {
  TopologyConfig cfg = cfg_of("hf-2-datt", 8);
  auto m = build_topology<float>(cfg);
  // record masks on every fusion node
  for (int i = 0; i < m.net.size(); ++i)
    if (auto* fuse = m.net.module_as<nn::AttentionFuse<float>>(i)) fuse->record_masks = true;
  nn::Batch<float> x = random_batchf(1, 3, 32, 32, 81);
  forward(m, x);
  int checked = 0;
  for (int i = 0; i < m.net.size(); ++i) {
    auto* fuse = m.net.module_as<nn::AttentionFuse<float>>(i);
    if (!fuse) continue;
    for (const auto* cache :
         {&fuse->channel_masks_priv(), &fuse->channel_masks_pub()}) {
      size_t d = 8;
      // channel masks exist at the fused widths; infer side length
      size_t total = cache->masks.size();
      if (!total) continue;
      d = size_t(std::lround(std::sqrt(double(total))));
      for (size_t r = 0; r < d; ++r) {
        float s = 0;
        for (size_t c = 0; c < d; ++c) s += cache->masks[r * d + c];
        CHECK(std::fabs(s - 1.f) < 1e-5f);
      }
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("checkpoint round trip restores parameters and config") {
  namespace fs = std::filesystem;
  TopologyConfig cfg = cfg_of("hf-3", 4);
  auto m = build_topology<float>(cfg, {.seed = 9});
  std::string path = (fs::temp_directory_path() / "hf_ckpt_test.hfck").string();
  save_checkpoint(path, m);
  auto r = load_checkpoint(path);
  CHECK(r.cfg.name() == "hf-3");
  REQUIRE(r.net.params().size() == m.net.params().size());
  for (size_t i = 0; i < m.net.params().size(); ++i) {
    CHECK(r.net.params()[i]->name == m.net.params()[i]->name);
    CHECK(r.net.params()[i]->value == m.net.params()[i]->value);
  }
  // identical outputs after reload
  nn::Batch<float> x = random_batchf(1, 3, 16, 16, 91);
  auto a = forward(m, x);
  auto b = forward(r, x);
  CHECK(a.seg_logits.data == b.seg_logits.data);

  // config disagreement is rejected
  TopologyConfig other = cfg_of("hf-6", 4);
  try {
    load_checkpoint(path, &other);
    FAIL("expected config mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::config);
  }
  TopologyConfig same = cfg;
  CHECK_NOTHROW(load_checkpoint(path, &same));
}
