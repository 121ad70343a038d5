#pragma once

#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hf/nn/kernels.hpp"
#include "hf/rng.hpp"

namespace hf::nn {

// Parameter ownership groups, mirroring the multi-task split of the model:
// trunk blocks, the two task branches, and the fusion blocks.
enum class Group { shared, seg, cont, tcl };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::shared: return "shared";
    case Group::seg: return "seg_branch";
    case Group::cont: return "contour_branch";
    case Group::tcl: return "tcl_blocks";
  }
  return "?";
}

template <typename T>
struct Param {
  std::string local;  // name within the module, e.g. "w"
  std::string name;   // full name, assigned when the module joins a network
  Group group = Group::shared;
  std::vector<int> shape;
  std::vector<T> value, grad;

  size_t size() const { return value.size(); }
  void alloc(std::vector<int> s) {
    shape = std::move(s);
    size_t n = 1;
    for (int d : shape) n *= size_t(d);
    value.assign(n, T(0));
    grad.assign(n, T(0));
  }
};

template <typename T>
class Module {
public:
  virtual ~Module() = default;
  virtual const char* kind() const = 0;
  // forward caches whatever backward needs; backward must be called with the
  // same inputs as the preceding forward. backward may clobber gout: the
  // graph never reads a node's gradient after its backward ran.
  virtual Batch<T> forward(const std::vector<const Batch<T>*>& in) = 0;
  virtual std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>& in,
                                         const Batch<T>& out, Batch<T>& gout) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
};

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d : public Module<T> {
public:
  Conv2d(int cin, int cout, int k, bool relu) : cin_(cin), cout_(cout), k_(k), relu_(relu) {
    w_.local = "w";
    w_.alloc({cout, cin, k, k});
    b_.local = "b";
    b_.alloc({cout});
  }
  const char* kind() const override { return relu_ ? "conv+relu" : "conv"; }
  Batch<T> forward(const std::vector<const Batch<T>*>& in) override {
    const Batch<T>& x = *in[0];
    require(x.c == cin_, ErrorCode::geometry, "conv: channel mismatch");
    Batch<T> y;
    conv2d_forward(x, w_.value, b_.value, cout_, k_, y, cols_);
    if (relu_) relu_forward(y);
    return y;
  }
  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>& in,
                                 const Batch<T>& out, Batch<T>& gout) override {
    if (relu_) relu_backward_from_output(out, gout);
    Batch<T> gx;
    std::vector<T> gw, gb;
    conv2d_backward(*in[0], w_.value, cout_, k_, gout, cols_, &gx, gw, gb);
    for (size_t i = 0; i < gw.size(); ++i) w_.grad[i] += gw[i];
    for (size_t i = 0; i < gb.size(); ++i) b_.grad[i] += gb[i];
    std::vector<Batch<T>> gin;
    gin.push_back(std::move(gx));
    return gin;
  }
  std::vector<Param<T>*> params() override { return {&w_, &b_}; }

private:
  int cin_, cout_, k_;
  bool relu_;
  Param<T> w_, b_;
  std::vector<T> cols_;  // im2col scratch, reused by backward
};

template <typename T>
class TConv2d : public Module<T> {
public:
  TConv2d(int cin, int cout) : cin_(cin), cout_(cout) {
    w_.local = "w";
    w_.alloc({cout, cin, 2, 2});
    b_.local = "b";
    b_.alloc({cout});
  }
  const char* kind() const override { return "tconv"; }
  Batch<T> forward(const std::vector<const Batch<T>*>& in) override {
    require(in[0]->c == cin_, ErrorCode::geometry, "tconv: channel mismatch");
    Batch<T> y;
    tconv2_forward(*in[0], w_.value, b_.value, cout_, y);
    return y;
  }
  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>& in, const Batch<T>&,
                                 Batch<T>& gout) override {
    Batch<T> gx;
    std::vector<T> gw, gb;
    tconv2_backward(*in[0], w_.value, cout_, gout, &gx, gw, gb);
    for (size_t i = 0; i < gw.size(); ++i) w_.grad[i] += gw[i];
    for (size_t i = 0; i < gb.size(); ++i) b_.grad[i] += gb[i];
    std::vector<Batch<T>> gin;
    gin.push_back(std::move(gx));
    return gin;
  }
  std::vector<Param<T>*> params() override { return {&w_, &b_}; }

private:
  int cin_, cout_;
  Param<T> w_, b_;
};

template <typename T>
class MaxPool2 : public Module<T> {
public:
  const char* kind() const override { return "maxpool2"; }
  Batch<T> forward(const std::vector<const Batch<T>*>& in) override {
    h_in_ = in[0]->h;
    w_in_ = in[0]->w;
    Batch<T> y;
    maxpool2_forward(*in[0], y, argmax_);
    return y;
  }
  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>&, const Batch<T>&,
                                 Batch<T>& gout) override {
    Batch<T> gx;
    maxpool2_backward(gout, argmax_, h_in_, w_in_, gx);
    std::vector<Batch<T>> gin;
    gin.push_back(std::move(gx));
    return gin;
  }

private:
  int h_in_ = 0, w_in_ = 0;
  std::vector<uint8_t> argmax_;
};

template <typename T>
class InstanceNorm : public Module<T> {
public:
  InstanceNorm(int c, bool relu) : c_(c), relu_(relu) {
    gamma_.local = "gamma";
    gamma_.alloc({c});
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    beta_.local = "beta";
    beta_.alloc({c});
  }
  const char* kind() const override { return "instnorm"; }
  Batch<T> forward(const std::vector<const Batch<T>*>& in) override {
    Batch<T> y;
    instnorm_forward(*in[0], gamma_.value, beta_.value, eps_, y);
    if (relu_) relu_forward(y);
    return y;
  }
  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>& in,
                                 const Batch<T>& out, Batch<T>& gout) override {
    if (relu_) relu_backward_from_output(out, gout);
    Batch<T> gx;
    std::vector<T> ggamma, gbeta;
    instnorm_backward(*in[0], gamma_.value, eps_, gout, gx, ggamma, gbeta);
    for (int i = 0; i < c_; ++i) {
      gamma_.grad[i] += ggamma[i];
      beta_.grad[i] += gbeta[i];
    }
    std::vector<Batch<T>> gin;
    gin.push_back(std::move(gx));
    return gin;
  }
  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }

private:
  int c_;
  bool relu_;
  T eps_ = T(1e-5);
  Param<T> gamma_, beta_;
};

template <typename T>
class SoftmaxC : public Module<T> {
public:
  const char* kind() const override { return "softmax_c"; }
  Batch<T> forward(const std::vector<const Batch<T>*>& in) override {
    Batch<T> y;
    softmax_channels_forward(*in[0], y);
    return y;
  }
  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>&, const Batch<T>& out,
                                 Batch<T>& gout) override {
    Batch<T> gx;
    softmax_channels_backward(out, gout, gx);
    std::vector<Batch<T>> gin;
    gin.push_back(std::move(gx));
    return gin;
  }
};

template <typename T>
class Concat2 : public Module<T> {
public:
  const char* kind() const override { return "concat"; }
  Batch<T> forward(const std::vector<const Batch<T>*>& in) override {
    const Batch<T>&a = *in[0], &b = *in[1];
    require(a.n == b.n && a.h == b.h && a.w == b.w, ErrorCode::geometry,
            "concat: spatial/batch mismatch");
    c0_ = a.c;
    Batch<T> y(a.n, a.c + b.c, a.h, a.w);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.data.size());
    return y;
  }
  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>& in, const Batch<T>&,
                                 Batch<T>& gout) override {
    const Batch<T>&a = *in[0], &b = *in[1];
    Batch<T> ga, gb;
    ga.reshape_for_overwrite(a.n, a.c, a.h, a.w);
    gb.reshape_for_overwrite(b.n, b.c, b.h, b.w);
    std::copy(gout.data.begin(), gout.data.begin() + ga.data.size(), ga.data.begin());
    std::copy(gout.data.begin() + ga.data.size(), gout.data.end(), gb.data.begin());
    std::vector<Batch<T>> gin;
    gin.push_back(std::move(ga));
    gin.push_back(std::move(gb));
    return gin;
  }

private:
  int c0_ = 0;
};

template <typename T>
class Add2 : public Module<T> {
public:
  const char* kind() const override { return "add"; }
  Batch<T> forward(const std::vector<const Batch<T>*>& in) override {
    require_same_shape(*in[0], *in[1], "add");
    Batch<T> y = *in[0];
    add_scaled(y, *in[1], T(1));
    return y;
  }
  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>&, const Batch<T>&,
                                 Batch<T>& gout) override {
    std::vector<Batch<T>> gin;
    gin.push_back(gout);             // copy
    gin.push_back(std::move(gout));  // hand over the original
    return gin;
  }
};

// Eq.-4-style blend: out = alpha * priv + (1 - alpha) * pub.
template <typename T>
class WeightedBlend : public Module<T> {
public:
  explicit WeightedBlend(T alpha) : alpha_(alpha) {}
  const char* kind() const override { return "weighted_blend"; }
  Batch<T> forward(const std::vector<const Batch<T>*>& in) override {
    require_same_shape(*in[0], *in[1], "weighted_blend");
    Batch<T> y(in[0]->n, in[0]->c, in[0]->h, in[0]->w);
    add_scaled(y, *in[0], alpha_);
    add_scaled(y, *in[1], T(1) - alpha_);
    return y;
  }
  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>&, const Batch<T>&,
                                 Batch<T>& gout) override {
    Batch<T> gb;
    gb.reshape_for_overwrite(gout.n, gout.c, gout.h, gout.w);
    const T beta = T(1) - alpha_;
    for (size_t i = 0; i < gout.data.size(); ++i) {
      gb.data[i] = beta * gout.data[i];
      gout.data[i] *= alpha_;
    }
    std::vector<Batch<T>> gin;
    gin.push_back(std::move(gout));
    gin.push_back(std::move(gb));
    return gin;
  }

private:
  T alpha_;
};

// Fixed-value source node; lets small op-level graphs take several inputs.
template <typename T>
class ConstBatch : public Module<T> {
public:
  Batch<T> value;
  const char* kind() const override { return "const"; }
  Batch<T> forward(const std::vector<const Batch<T>*>&) override { return value; }
  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>&, const Batch<T>&,
                                 Batch<T>&) override {
    return {};
  }
};

enum class AttnMode { channel, position, dual };

// Eq.-5 fusion of (priv, pub): attended terms plus literal duplicated
// residuals; `averaged` keeps each residual once instead.
template <typename T>
class AttentionFuse : public Module<T> {
public:
  AttentionFuse(int c, AttnMode mode, bool averaged, int pool_limit = 4096)
      : c_(c), mode_(mode), averaged_(averaged), pool_limit_(pool_limit),
        r_(std::max(c / 8, 1)) {
    if (mode != AttnMode::channel) {
      wq1_.local = "wq1";
      wq1_.alloc({r_, c});
      wk1_.local = "wk1";
      wk1_.alloc({r_, c});
      wq2_.local = "wq2";
      wq2_.alloc({r_, c});
      wk2_.local = "wk2";
      wk2_.alloc({r_, c});
    }
  }
  const char* kind() const override { return "attention_fuse"; }

  Batch<T> forward(const std::vector<const Batch<T>*>& in) override {
    const Batch<T>&priv = *in[0], &pub = *in[1];
    require_same_shape(priv, pub, "attention_fuse");
    T rc = residual_coeff();
    Batch<T> y(priv.n, priv.c, priv.h, priv.w);
    add_scaled(y, priv, rc);
    add_scaled(y, pub, rc);
    Batch<T> tmp;
    if (mode_ != AttnMode::position) {
      channel_attention_forward(priv, tmp, cpriv_);
      add_scaled(y, tmp, T(1));
      channel_attention_forward(pub, tmp, cpub_);
      add_scaled(y, tmp, T(1));
    }
    if (mode_ != AttnMode::channel) {
      position_attention_forward(priv, wq1_.value, wk1_.value, r_, pool_limit_, tmp,
                                 ppriv_, record_masks);
      add_scaled(y, tmp, T(1));
      position_attention_forward(pub, wq2_.value, wk2_.value, r_, pool_limit_, tmp,
                                 ppub_, record_masks);
      add_scaled(y, tmp, T(1));
    }
    return y;
  }

  std::vector<Batch<T>> backward(const std::vector<const Batch<T>*>& in, const Batch<T>&,
                                 Batch<T>& gout) override {
    const Batch<T>&priv = *in[0], &pub = *in[1];
    T rc = residual_coeff();
    Batch<T> gpriv(priv.n, priv.c, priv.h, priv.w), gpub = gpriv;
    add_scaled(gpriv, gout, rc);
    add_scaled(gpub, gout, rc);
    Batch<T> tmp;
    if (mode_ != AttnMode::position) {
      channel_attention_backward(priv, cpriv_, gout, tmp);
      add_scaled(gpriv, tmp, T(1));
      channel_attention_backward(pub, cpub_, gout, tmp);
      add_scaled(gpub, tmp, T(1));
    }
    if (mode_ != AttnMode::channel) {
      std::vector<T> gwq, gwk;
      position_attention_backward(priv, wq1_.value, wk1_.value, r_, ppriv_, gout, tmp,
                                  gwq, gwk);
      add_scaled(gpriv, tmp, T(1));
      for (size_t i = 0; i < gwq.size(); ++i) {
        wq1_.grad[i] += gwq[i];
        wk1_.grad[i] += gwk[i];
      }
      position_attention_backward(pub, wq2_.value, wk2_.value, r_, ppub_, gout, tmp,
                                  gwq, gwk);
      add_scaled(gpub, tmp, T(1));
      for (size_t i = 0; i < gwq.size(); ++i) {
        wq2_.grad[i] += gwq[i];
        wk2_.grad[i] += gwk[i];
      }
    }
    std::vector<Batch<T>> gin;
    gin.push_back(std::move(gpriv));
    gin.push_back(std::move(gpub));
    return gin;
  }

  std::vector<Param<T>*> params() override {
    if (mode_ == AttnMode::channel) return {};
    return {&wq1_, &wk1_, &wq2_, &wk2_};
  }

  bool record_masks = false;
  const ChannelAttnCache<T>& channel_masks_priv() const { return cpriv_; }
  const ChannelAttnCache<T>& channel_masks_pub() const { return cpub_; }
  const PositionAttnCache<T>& position_masks_priv() const { return ppriv_; }
  const PositionAttnCache<T>& position_masks_pub() const { return ppub_; }

private:
  T residual_coeff() const {
    // the literal equation lists each residual twice in dual mode
    return (mode_ == AttnMode::dual && !averaged_) ? T(2) : T(1);
  }
  int c_;
  AttnMode mode_;
  bool averaged_;
  int pool_limit_;
  int r_;
  Param<T> wq1_, wk1_, wq2_, wk2_;
  ChannelAttnCache<T> cpriv_, cpub_;
  PositionAttnCache<T> ppriv_, ppub_;
};

// ---------------------------------------------------------------------------

template <typename T>
struct Node {
  std::string name;
  std::unique_ptr<Module<T>> mod;  // null for the input node
  std::vector<int> in;
  Batch<T> out;
  Batch<T> grad;
  bool has_grad = false;
};

// Static forward graph. Nodes must be added in topological order; node 0 is
// the input placeholder.
template <typename T>
class Network {
public:
  Network() { nodes_.emplace_back(); nodes_[0].name = "input"; }

  int add(const std::string& name, Group group, std::unique_ptr<Module<T>> mod,
          std::vector<int> inputs) {
    for (int i : inputs)
      require(i >= 0 && i < int(nodes_.size()), ErrorCode::config,
              "graph: input id out of range for node " + name);
    Node<T> node;
    node.name = name;
    node.mod = std::move(mod);
    node.in = std::move(inputs);
    for (Param<T>* p : node.mod->params()) {
      p->name = name + "." + p->local;
      p->group = group;
      for (const Param<T>* q : params_)
        require(q->name != p->name, ErrorCode::config, "duplicate param " + p->name);
      params_.push_back(p);
    }
    nodes_.push_back(std::move(node));
    return int(nodes_.size()) - 1;
  }

  int size() const { return int(nodes_.size()); }
  const Node<T>& node(int id) const { return nodes_[id]; }
  const Batch<T>& out(int id) const { return nodes_[id].out; }
  const Batch<T>& input_grad() const { return nodes_[0].grad; }

  void forward(const Batch<T>& input) {
    nodes_[0].out = input;
    std::vector<const Batch<T>*> in;
    for (size_t i = 1; i < nodes_.size(); ++i) {
      in.clear();
      for (int j : nodes_[i].in) in.push_back(&nodes_[j].out);
      nodes_[i].out = nodes_[i].mod->forward(in);
    }
  }

  void zero_grad() {
    for (Param<T>* p : params_) std::fill(p->grad.begin(), p->grad.end(), T(0));
  }

  // seeds: external gradients at chosen nodes (losses). When
  // `keep_activations` is false, node outputs are released as soon as the
  // backward sweep no longer needs them.
  void backward(std::vector<std::pair<int, Batch<T>>> seeds,
                bool want_input_grad = false, bool keep_activations = false) {
    for (auto& n : nodes_) {
      n.grad.release();
      n.has_grad = false;
    }
    for (auto& [id, g] : seeds) accumulate(id, std::move(g));
    std::vector<const Batch<T>*> in;
    for (int i = int(nodes_.size()) - 1; i >= 1; --i) {
      Node<T>& node = nodes_[i];
      if (node.has_grad) {
        in.clear();
        for (int j : node.in) in.push_back(&nodes_[j].out);
        std::vector<Batch<T>> gins = node.mod->backward(in, node.out, node.grad);
        for (size_t j = 0; j < node.in.size(); ++j)
          if (node.in[j] != 0 || want_input_grad)
            accumulate(node.in[j], std::move(gins[j]));
      }
      if (!keep_activations) {
        node.out.release();
        node.grad.release();
        node.has_grad = false;
      }
    }
  }

  const std::vector<Param<T>*>& params() const { return params_; }
  std::vector<Param<T>*> params(Group g) const {
    std::vector<Param<T>*> out;
    for (Param<T>* p : params_)
      if (p->group == g) out.push_back(p);
    return out;
  }
  Param<T>* find_param(const std::string& name) const {
    for (Param<T>* p : params_)
      if (p->name == name) return p;
    return nullptr;
  }
  size_t param_count(std::optional<Group> g = {}) const {
    size_t n = 0;
    for (const Param<T>* p : params_)
      if (!g || p->group == *g) n += p->size();
    return n;
  }
  uint64_t group_checksum(Group g) const {
    uint64_t h = 1469598103934665603ull;
    for (const Param<T>* p : params_)
      if (p->group == g)
        h = fnv1a64(p->value.data(), p->value.size() * sizeof(T), h);
    return h;
  }

  std::string describe() const {
    std::ostringstream os;
    for (size_t i = 0; i < nodes_.size(); ++i) {
      os << i << " " << nodes_[i].name << " "
         << (nodes_[i].mod ? nodes_[i].mod->kind() : "input") << " <-";
      for (int j : nodes_[i].in) os << " " << j;
      os << "\n";
    }
    return os.str();
  }

  template <typename M>
  M* module_as(int id) {
    return dynamic_cast<M*>(nodes_[id].mod.get());
  }

private:
  void accumulate(int id, Batch<T> g) {
    Node<T>& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = std::move(g);
      n.has_grad = true;
    } else {
      add_scaled(n.grad, g, T(1));
    }
  }

  std::vector<Node<T>> nodes_;
  std::vector<Param<T>*> params_;
};

}  // namespace hf::nn
