#include "hf/model.hpp"

#include <cmath>

#include "hf/rng.hpp"

namespace hf::model {

namespace {

const char* family_token(Family f) {
  switch (f) {
    case Family::unet: return "unet";
    case Family::eb: return "eb";
    case Family::lb: return "lb";
    case Family::hf: return "hf";
  }
  return "?";
}

}  // namespace

std::string TopologyConfig::name() const {
  std::string s = family_token(family);
  if (family == Family::hf) {
    s += "-" + std::to_string(tcl_count);
    switch (attention) {
      case Attention::none: break;
      case Attention::channel: s += "-catt"; break;
      case Attention::position: s += "-patt"; break;
      case Attention::dual: s += "-datt"; break;
    }
  }
  return s;
}

TopologyConfig TopologyConfig::from_name(const std::string& token) {
  TopologyConfig cfg;
  cfg.attention = Attention::none;
  if (token == "unet") {
    cfg.family = Family::unet;
    cfg.tcl_count = 0;
    return cfg;
  }
  if (token == "eb") {
    cfg.family = Family::eb;
    cfg.tcl_count = 0;
    return cfg;
  }
  if (token == "lb") {
    cfg.family = Family::lb;
    cfg.tcl_count = 0;
    return cfg;
  }
  if (token.rfind("hf-", 0) == 0) {
    cfg.family = Family::hf;
    std::string rest = token.substr(3);
    std::string count = rest;
    size_t dash = rest.find('-');
    if (dash != std::string::npos) {
      count = rest.substr(0, dash);
      std::string att = rest.substr(dash + 1);
      if (att == "catt") cfg.attention = Attention::channel;
      else if (att == "patt") cfg.attention = Attention::position;
      else if (att == "datt") cfg.attention = Attention::dual;
      else fail(ErrorCode::config, "unknown attention suffix in topology '" + token + "'");
    }
    try {
      cfg.tcl_count = std::stoi(count);
    } catch (...) {
      fail(ErrorCode::config, "bad TCL count in topology '" + token + "'");
    }
    require(cfg.tcl_count >= 1, ErrorCode::config,
            "bad TCL count in topology '" + token + "'");
    return cfg;
  }
  fail(ErrorCode::config, "unknown topology '" + token + "'");
}

void validate_topology(const TopologyConfig& cfg) {
  require(cfg.base_width >= 1, ErrorCode::config, "base_width must be >= 1");
  require(cfg.depth >= 1, ErrorCode::config, "depth must be >= 1");
  require(cfg.in_slices >= 1 && cfg.in_slices % 2 == 1, ErrorCode::config,
          "in_slices must be odd");
  require(cfg.classes >= 2, ErrorCode::config, "classes must be >= 2");
  require(cfg.alpha >= 0.0 && cfg.alpha <= 1.0, ErrorCode::config,
          "alpha must be in [0,1]");
  if (cfg.family == Family::hf)
    require(cfg.tcl_count >= 1 && cfg.tcl_count <= 2 * cfg.depth, ErrorCode::config,
            "tcl_count must be in [1, " + std::to_string(2 * cfg.depth) +
                "] (the initial block stays shared)");
}

std::pair<int, int> count_blocks(const TopologyConfig& cfg) {
  validate_topology(cfg);
  int L = cfg.levels();
  switch (cfg.family) {
    case Family::unet: return {0, 0};  // single task: nothing shared between tasks
    case Family::eb: return {1, 0};
    case Family::lb: return {L, 0};
    case Family::hf: return {L - cfg.tcl_count, cfg.tcl_count};
  }
  return {0, 0};
}

namespace {

template <typename T>
using Net = nn::Network<T>;
using nn::Group;

template <typename T>
int add_conv(Net<T>& net, const std::string& name, Group g, int cin, int cout, int k,
             bool relu, int in, bool instnorm) {
  if (!instnorm) {
    return net.add(name, g, std::make_unique<nn::Conv2d<T>>(cin, cout, k, relu), {in});
  }
  int c = net.add(name, g, std::make_unique<nn::Conv2d<T>>(cin, cout, k, false), {in});
  return net.add(name + ".norm", g, std::make_unique<nn::InstanceNorm<T>>(cout, relu), {c});
}

struct BlockPlan {
  int level;      // 1..L
  bool is_down;   // starts with a pool
  bool is_up;     // starts with a tconv (+skip concat)
  int cin, cout;
  int skip_level; // pairing for up blocks, 0 otherwise
};

// channel width of the feature a block at this level outputs
inline int level_width(int level, int depth, int base) {
  int enc = level <= depth + 1 ? level : 2 * depth + 2 - level;
  return base << (enc - 1);
}

inline BlockPlan plan_block(int level, int depth, int base, int in_slices) {
  BlockPlan p{};
  p.level = level;
  p.cout = level_width(level, depth, base);
  if (level == 1) {
    p.cin = in_slices;
  } else if (level <= depth + 1) {
    p.is_down = true;
    p.cin = level_width(level - 1, depth, base);
  } else {
    p.is_up = true;
    p.cin = level_width(level - 1, depth, base);
    p.skip_level = 2 * depth + 2 - level;
  }
  return p;
}

// One encoder/decoder block: initial = two convs; down = pool + two convs;
// up = tconv + skip concat + two convs.
template <typename T>
int add_block(Net<T>& net, const std::string& prefix, Group g, const BlockPlan& p,
              int in, int skip, bool instnorm) {
  int cur = in;
  if (p.is_down) {
    cur = net.add(prefix + ".pool", g, std::make_unique<nn::MaxPool2<T>>(), {cur});
    cur = add_conv(net, prefix + ".conv1", g, p.cin, p.cout, 3, true, cur, instnorm);
  } else if (p.is_up) {
    cur = net.add(prefix + ".tconv", g, std::make_unique<nn::TConv2d<T>>(p.cin, p.cout),
                  {cur});
    cur = net.add(prefix + ".cat", g, std::make_unique<nn::Concat2<T>>(), {cur, skip});
    cur = add_conv(net, prefix + ".conv1", g, 2 * p.cout, p.cout, 3, true, cur, instnorm);
  } else {
    cur = add_conv(net, prefix + ".conv1", g, p.cin, p.cout, 3, true, cur, instnorm);
  }
  cur = add_conv(net, prefix + ".conv2", g, p.cout, p.cout, 3, true, cur, instnorm);
  return cur;
}

// Top-mapping head: 3x3 conv + ReLU then a linear 1x1 projection.
template <typename T>
int add_head(Net<T>& net, const std::string& prefix, Group g, int cin, int cout, int in,
             bool instnorm) {
  int cur = add_conv(net, prefix + ".conv1", g, cin, cin, 3, true, in, instnorm);
  return net.add(prefix + ".proj", g, std::make_unique<nn::Conv2d<T>>(cin, cout, 1, false),
                 {cur});
}

// TCL block at one level: sum of the branch features, 1x1 bottleneck, two
// 3x3 convs with ReLU, then Eq.-4 or Eq.-5 feedback into both branches.
template <typename T>
LevelIds add_tcl_level(Net<T>& net, const std::string& prefix, const TopologyConfig& cfg,
                       int level, int c, int id_seg, int id_cont) {
  LevelIds ids;
  ids.level = level;
  ids.seg_feat = id_seg;
  ids.cont_feat = id_cont;
  int sum = net.add(prefix + ".sum", Group::tcl, std::make_unique<nn::Add2<T>>(),
                    {id_seg, id_cont});
  int bn = net.add(prefix + ".bottleneck", Group::tcl,
                   std::make_unique<nn::Conv2d<T>>(c, c, 1, false), {sum});
  int c1 = add_conv(net, prefix + ".conv1", Group::tcl, c, c, 3, true, bn,
                    cfg.instance_norm);
  int c2 = add_conv(net, prefix + ".conv2", Group::tcl, c, c, 3, true, c1,
                    cfg.instance_norm);
  ids.tcl_feat = c2;
  if (cfg.attention == Attention::none) {
    ids.fb_seg = net.add(prefix + ".fb_seg", Group::tcl,
                         std::make_unique<nn::WeightedBlend<T>>(T(cfg.alpha)),
                         {id_seg, c2});
    ids.fb_cont = net.add(prefix + ".fb_cont", Group::tcl,
                          std::make_unique<nn::WeightedBlend<T>>(T(cfg.alpha)),
                          {id_cont, c2});
  } else {
    nn::AttnMode mode = cfg.attention == Attention::channel ? nn::AttnMode::channel
                        : cfg.attention == Attention::position
                            ? nn::AttnMode::position
                            : nn::AttnMode::dual;
    ids.fb_seg = net.add(prefix + ".fb_seg", Group::tcl,
                         std::make_unique<nn::AttentionFuse<T>>(
                             c, mode, cfg.averaged_attention),
                         {id_seg, c2});
    ids.fb_cont = net.add(prefix + ".fb_cont", Group::tcl,
                          std::make_unique<nn::AttentionFuse<T>>(
                              c, mode, cfg.averaged_attention),
                          {id_cont, c2});
  }
  return ids;
}

template <typename T>
void init_params(Net<T>& net, uint64_t seed, bool mirror) {
  for (nn::Param<T>* p : net.params()) {
    if (p->local == "b" || p->local == "beta") continue;  // stay zero
    if (p->local == "gamma") continue;                    // stays one
    Rng rng = make_rng(seed, p->name);
    size_t fan_in = 1;
    for (size_t i = 1; i < p->shape.size(); ++i) fan_in *= size_t(p->shape[i]);
    // He for conv weights, Xavier-ish for the linear attention projections
    double std = p->local[0] == 'w' && p->local.size() > 1
                     ? std::sqrt(1.0 / double(fan_in))
                     : std::sqrt(2.0 / double(fan_in));
    std::normal_distribution<double> gauss(0.0, std);
    for (T& v : p->value) v = T(gauss(rng));
  }
  if (mirror) {
    for (nn::Param<T>* p : net.params()) {
      if (p->name.rfind("cont.", 0) != 0) continue;
      nn::Param<T>* src = net.find_param("seg." + p->name.substr(5));
      if (src && src->size() == p->size()) p->value = src->value;
    }
  }
}

}  // namespace

template <typename T>
ModelState<T> build_topology(const TopologyConfig& cfg, const BuildOptions& opt) {
  validate_topology(cfg);
  ModelState<T> m;
  m.cfg = cfg;
  Net<T>& net = m.net;

  const int L = cfg.levels();
  const bool two_tasks = cfg.family != Family::unet;
  // first level at which the two tasks own private blocks (L+1 = never)
  int private_from = L + 1;
  if (cfg.family == Family::eb) private_from = 2;
  if (cfg.family == Family::hf) private_from = L - cfg.tcl_count + 1;

  int trunk = 0;  // input node
  int cur_seg = -1, cur_cont = -1;
  std::vector<int> skip_trunk(L + 1, -1), skip_seg(L + 1, -1), skip_cont(L + 1, -1);

  for (int level = 1; level <= L; ++level) {
    BlockPlan p = plan_block(level, cfg.depth, cfg.base_width, cfg.in_slices);
    if (level < private_from) {
      int skip = p.skip_level ? skip_trunk[p.skip_level] : -1;
      trunk = add_block(net, "trunk.b" + std::to_string(level), Group::shared, p, trunk,
                        skip, cfg.instance_norm);
      if (level <= cfg.depth) skip_trunk[level] = trunk;
    } else {
      if (cur_seg < 0) {
        cur_seg = trunk;
        cur_cont = trunk;
      }
      auto pick_skip = [&](const std::vector<int>& own) {
        if (!p.skip_level) return -1;
        return own[p.skip_level] >= 0 ? own[p.skip_level] : skip_trunk[p.skip_level];
      };
      int b = add_block(net, "seg.b" + std::to_string(level), Group::seg, p, cur_seg,
                        pick_skip(skip_seg), cfg.instance_norm);
      int c = add_block(net, "cont.b" + std::to_string(level), Group::cont, p, cur_cont,
                        pick_skip(skip_cont), cfg.instance_norm);
      if (level <= cfg.depth) {
        skip_seg[level] = b;
        skip_cont[level] = c;
      }
      if (cfg.family == Family::hf) {
        LevelIds ids = add_tcl_level(net, "tcl.l" + std::to_string(level), cfg, level,
                                     p.cout, b, c);
        m.levels.push_back(ids);
        cur_seg = ids.fb_seg;
        cur_cont = ids.fb_cont;
      } else {
        cur_seg = b;
        cur_cont = c;
      }
    }
  }

  int seg_in = cur_seg >= 0 ? cur_seg : trunk;
  int c1 = cfg.base_width;
  m.seg_logits = add_head(net, "seg.top", Group::seg, c1, cfg.classes, seg_in,
                          cfg.instance_norm);
  m.seg_prob = net.add("seg.softmax", Group::seg, std::make_unique<nn::SoftmaxC<T>>(),
                       {m.seg_logits});
  if (two_tasks) {
    int cont_in = cur_cont >= 0 ? cur_cont : trunk;
    m.contour_pred = add_head(net, "cont.top", Group::cont, c1, 1, cont_in,
                              cfg.instance_norm);
  }

  init_params(net, opt.seed, opt.mirror_branch_init);
  return m;
}

template <typename T>
ForwardResult<T> forward(ModelState<T>& m, const nn::Batch<T>& batch) {
  require(batch.c == m.cfg.in_slices, ErrorCode::geometry,
          "forward: batch channel count != in_slices");
  int div = 1 << m.cfg.depth;
  require(batch.h % div == 0 && batch.w % div == 0, ErrorCode::geometry,
          "forward: spatial dims must be divisible by " + std::to_string(div));
  m.net.forward(batch);

  ForwardResult<T> r;
  r.seg_logits = m.net.out(m.seg_logits);
  const nn::Batch<T>& sp = m.net.out(m.seg_prob);
  r.seg_prob.resize(sp.n, 1, sp.h, sp.w);
  std::copy(sp.row(1), sp.row(1) + sp.cols(), r.seg_prob.data.begin());
  if (m.contour_pred >= 0) r.contour_pred = m.net.out(m.contour_pred);
  for (const LevelIds& ids : m.levels) {
    FeatureTriple<T> t;
    t.level = ids.level;
    t.seg = m.net.out(ids.seg_feat);
    t.cont = m.net.out(ids.cont_feat);
    t.tcl = m.net.out(ids.tcl_feat);
    r.triples.push_back(std::move(t));
  }
  return r;
}

// --- standalone ops ----------------------------------------------------------

template <typename T>
nn::Batch<T> tcl_fuse_weighted(const nn::Batch<T>& priv, const nn::Batch<T>& pub,
                               double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::config,
          "tcl_fuse_weighted: alpha must be in [0,1]");
  nn::WeightedBlend<T> blend{T(alpha)};
  return blend.forward({&priv, &pub});
}

template <typename T>
AttentionResult<T> channel_attention(const nn::Batch<T>& feature) {
  AttentionResult<T> r;
  nn::ChannelAttnCache<T> cache;
  nn::channel_attention_forward(feature, r.attended, cache);
  r.masks = std::move(cache.masks);
  r.rows = feature.c;
  return r;
}

template <typename T>
AttentionResult<T> position_attention(const nn::Batch<T>& feature,
                                      const std::vector<T>& wq, const std::vector<T>& wk,
                                      int pool_limit) {
  AttentionResult<T> r;
  nn::PositionAttnCache<T> cache;
  int rch = std::max(feature.c / 8, 1);
  require(wq.size() == size_t(rch) * feature.c && wk.size() == wq.size(),
          ErrorCode::geometry, "position_attention: projection shape mismatch");
  nn::position_attention_forward(feature, wq, wk, rch, pool_limit, r.attended, cache,
                                 /*record_masks=*/true);
  r.masks = std::move(cache.masks);
  r.rows = cache.ph * cache.pw;
  return r;
}

template <typename T>
nn::Batch<T> tcl_fuse_attention(nn::AttentionFuse<T>& fuse, const nn::Batch<T>& priv,
                                const nn::Batch<T>& pub) {
  return fuse.forward({&priv, &pub});
}

template <typename T>
TclBlockOp<T>::TclBlockOp(int channels, FuseMode mode, double alpha, Attention attention,
                          bool averaged, uint64_t seed) {
  TopologyConfig cfg;
  cfg.alpha = alpha;
  cfg.attention = mode == FuseMode::weighted ? Attention::none : attention;
  if (mode == FuseMode::attention && attention == Attention::none)
    cfg.attention = Attention::dual;
  cfg.averaged_attention = averaged;
  in_seg_ = net_.add("in_seg", nn::Group::tcl, std::make_unique<nn::ConstBatch<T>>(), {});
  in_cont_ = net_.add("in_cont", nn::Group::tcl, std::make_unique<nn::ConstBatch<T>>(), {});
  LevelIds ids = add_tcl_level(net_, "tcl", cfg, 0, channels, in_seg_, in_cont_);
  tcl_ = ids.tcl_feat;
  fb_seg_ = ids.fb_seg;
  fb_cont_ = ids.fb_cont;
  init_params(net_, seed, false);
}

template <typename T>
TclBlockOut<T> TclBlockOp<T>::operator()(const nn::Batch<T>& priv_seg,
                                         const nn::Batch<T>& priv_cont) {
  require_same_shape(priv_seg, priv_cont, "tcl_block");
  net_.template module_as<nn::ConstBatch<T>>(in_seg_)->value = priv_seg;
  net_.template module_as<nn::ConstBatch<T>>(in_cont_)->value = priv_cont;
  nn::Batch<T> dummy;
  net_.forward(dummy);
  TclBlockOut<T> out;
  out.tcl = net_.out(tcl_);
  out.feedback_seg = net_.out(fb_seg_);
  out.feedback_cont = net_.out(fb_cont_);
  return out;
}

#define HF_MODEL_INSTANTIATE(T)                                                        \
  template ModelState<T> build_topology<T>(const TopologyConfig&, const BuildOptions&); \
  template ForwardResult<T> forward<T>(ModelState<T>&, const nn::Batch<T>&);            \
  template nn::Batch<T> tcl_fuse_weighted<T>(const nn::Batch<T>&, const nn::Batch<T>&,  \
                                             double);                                   \
  template AttentionResult<T> channel_attention<T>(const nn::Batch<T>&);                \
  template AttentionResult<T> position_attention<T>(const nn::Batch<T>&,                \
                                                    const std::vector<T>&,              \
                                                    const std::vector<T>&, int);        \
  template nn::Batch<T> tcl_fuse_attention<T>(nn::AttentionFuse<T>&,                    \
                                              const nn::Batch<T>&, const nn::Batch<T>&); \
  template class TclBlockOp<T>;

HF_MODEL_INSTANTIATE(float)
HF_MODEL_INSTANTIATE(double)
#undef HF_MODEL_INSTANTIATE

}  // namespace hf::model
