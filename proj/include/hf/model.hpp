#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hf/nn/graph.hpp"

namespace hf::model {

enum class Family { unet, eb, lb, hf };
enum class Attention { none, channel, position, dual };

// Declarative description of one network topology; the sole input to the
// builder. The 7-level layout is: initial conv block, `depth` down blocks,
// `depth` up blocks, plus a per-task top-mapping head (two conv layers).
struct TopologyConfig {
  Family family = Family::hf;
  int tcl_count = 6;       // hf only: fusion blocks at the last tcl_count levels
  double alpha = 0.2;      // weighted-residual blend; ignored when attention != none
  Attention attention = Attention::none;
  int base_width = 8;
  int depth = 3;           // down blocks (= up blocks)
  int in_slices = 3;
  int classes = 2;
  bool averaged_attention = false;  // single residuals in Eq.-5 fusion
  bool instance_norm = false;       // stability switch, off by default

  int levels() const { return 2 * depth + 1; }
  std::string name() const;
  static TopologyConfig from_name(const std::string& token);
};

void validate_topology(const TopologyConfig& cfg);

// Table-I FB accounting: blocks shared between the two tasks + TCL blocks.
// The plain U-Net has a single task, hence (0, 0).
std::pair<int, int> count_blocks(const TopologyConfig& cfg);

// Node bookkeeping for one fused level.
struct LevelIds {
  int level = 0;
  int seg_feat = -1;   // branch block output (xi_seg)
  int cont_feat = -1;  // xi_cont
  int tcl_feat = -1;   // xi_tcl
  int fb_seg = -1;     // post-fusion input to the next seg block
  int fb_cont = -1;
};

template <typename T>
struct ModelState {
  TopologyConfig cfg;
  nn::Network<T> net;
  int seg_logits = -1;
  int seg_prob = -1;      // softmax over classes
  int contour_pred = -1;  // -1 for unet
  std::vector<LevelIds> levels;
};

struct BuildOptions {
  uint64_t seed = 1;
  bool mirror_branch_init = false;  // copy seg-branch init onto the contour branch
};

template <typename T>
ModelState<T> build_topology(const TopologyConfig& cfg, const BuildOptions& opt = {});

template <typename T>
struct FeatureTriple {
  int level = 0;
  nn::Batch<T> seg, cont, tcl;
};

template <typename T>
struct ForwardResult {
  nn::Batch<T> seg_logits;    // B x classes x p x p
  nn::Batch<T> seg_prob;      // B x 1 x p x p, foreground channel
  nn::Batch<T> contour_pred;  // B x 1 x p x p; empty for unet
  std::vector<FeatureTriple<T>> triples;
};

template <typename T>
ForwardResult<T> forward(ModelState<T>& m, const nn::Batch<T>& batch);

// --- standalone fusion operations -------------------------------------------

template <typename T>
nn::Batch<T> tcl_fuse_weighted(const nn::Batch<T>& priv, const nn::Batch<T>& pub,
                               double alpha);

template <typename T>
struct AttentionResult {
  std::vector<T> masks;  // per-sample row-stochastic masks, n * rows * rows
  int rows = 0;          // mask side: d for channel, (pooled) h*w for position
  nn::Batch<T> attended;
};

template <typename T>
AttentionResult<T> channel_attention(const nn::Batch<T>& feature);

template <typename T>
AttentionResult<T> position_attention(const nn::Batch<T>& feature,
                                      const std::vector<T>& wq, const std::vector<T>& wk,
                                      int pool_limit = 4096);

template <typename T>
nn::Batch<T> tcl_fuse_attention(nn::AttentionFuse<T>& fuse, const nn::Batch<T>& priv,
                                const nn::Batch<T>& pub);

// Standalone TCL block with its own parameters: fuse-by-sum, bottleneck,
// two 3x3 convolutions, then feedback to each branch.
enum class FuseMode { weighted, attention };

template <typename T>
struct TclBlockOut {
  nn::Batch<T> tcl, feedback_seg, feedback_cont;
};

template <typename T>
class TclBlockOp {
public:
  TclBlockOp(int channels, FuseMode mode, double alpha, Attention attention,
             bool averaged = false, uint64_t seed = 1);
  TclBlockOut<T> operator()(const nn::Batch<T>& priv_seg, const nn::Batch<T>& priv_cont);
  nn::Network<T>& network() { return net_; }

private:
  nn::Network<T> net_;
  int in_seg_ = -1, in_cont_ = -1, tcl_ = -1, fb_seg_ = -1, fb_cont_ = -1;
};

}  // namespace hf::model
