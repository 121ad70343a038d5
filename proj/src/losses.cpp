#include "hf/losses.hpp"

#include <cmath>

namespace hf::loss {

template <typename T>
double classification_loss(const nn::Batch<T>& prob, const nn::Batch<T>& target,
                           nn::Batch<T>* grad) {
  require_same_shape(prob, target, "classification_loss");
  const T eps = T(kProbEps);
  const T lo = eps, hi = T(1) - eps;
  const size_t n = prob.data.size();
  if (grad) grad->resize(prob.n, prob.c, prob.h, prob.w);
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    T p = prob.data[i];
    bool clamped = p < lo || p > hi;
    T pc = std::min(std::max(p, lo), hi);
    T y = target.data[i];
    acc -= double(y) * std::log(double(pc)) + (1.0 - double(y)) * std::log(1.0 - double(pc));
    if (grad)
      grad->data[i] = clamped ? T(0) : T((double(pc) - double(y)) /
                                         (double(pc) * (1.0 - double(pc)) * double(n)));
  }
  return acc / double(n);
}

template <typename T>
double regression_loss(const nn::Batch<T>& pred, const nn::Batch<T>& target,
                       nn::Batch<T>* grad) {
  require_same_shape(pred, target, "regression_loss");
  const size_t n = pred.data.size();
  if (grad) grad->resize(pred.n, pred.c, pred.h, pred.w);
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = double(target.data[i]) - double(pred.data[i]);
    acc += d * d;
    if (grad) grad->data[i] = T(2.0 * (double(pred.data[i]) - double(target.data[i])) / double(n));
  }
  return acc / double(n);
}

template <typename T>
double tcl_consistency_loss(const std::vector<TriplePtrs<T>>& triples,
                            std::vector<TripleGrads<T>>* grads) {
  if (grads) grads->assign(triples.size(), {});
  double total = 0.0;
  for (size_t m = 0; m < triples.size(); ++m) {
    const auto& t = triples[m];
    require_same_shape(*t.seg, *t.tcl, "tcl_consistency_loss");
    require_same_shape(*t.cont, *t.tcl, "tcl_consistency_loss");
    const size_t n = t.tcl->data.size();
    TripleGrads<T>* g = grads ? &(*grads)[m] : nullptr;
    if (g) {
      g->seg.resize(t.seg->n, t.seg->c, t.seg->h, t.seg->w);
      g->cont.resize(t.cont->n, t.cont->c, t.cont->h, t.cont->w);
      g->tcl.resize(t.tcl->n, t.tcl->c, t.tcl->h, t.tcl->w);
    }
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double ds = double(t.seg->data[i]) - double(t.tcl->data[i]);
      double dc = double(t.cont->data[i]) - double(t.tcl->data[i]);
      acc += ds * ds + dc * dc;
      if (g) {
        g->seg.data[i] = T(2.0 * ds / double(n));
        g->cont.data[i] = T(2.0 * dc / double(n));
        g->tcl.data[i] = T(-2.0 * (ds + dc) / double(n));
      }
    }
    total += acc / double(n);
  }
  return total;
}

template <typename T>
double tcl_consistency_loss(const std::vector<model::FeatureTriple<T>>& triples) {
  std::vector<TriplePtrs<T>> ptrs;
  for (const auto& t : triples) ptrs.push_back({t.level, &t.seg, &t.cont, &t.tcl});
  return tcl_consistency_loss<T>(ptrs, nullptr);
}

template <typename T>
double regularizer(const nn::Network<T>& net, double weight_decay) {
  double acc = 0.0;
  for (const nn::Param<T>* p : net.params())
    for (T v : p->value) acc += double(v) * double(v);
  return weight_decay * acc / 2.0;
}

template <typename T>
void add_regularizer_grads(nn::Network<T>& net, double weight_decay) {
  for (nn::Param<T>* p : net.params())
    for (size_t i = 0; i < p->value.size(); ++i)
      p->grad[i] += T(weight_decay) * p->value[i];
}

LossBreakdown combine(double l_cls, double l_reg, double l_tcl, double l_regularizer,
                      const LossWeights& w) {
  auto check = [](double v, const char* name) {
    require(std::isfinite(v), ErrorCode::numeric,
            std::string("total_loss: non-finite component ") + name);
  };
  check(l_cls, "l_cls");
  check(l_reg, "l_reg");
  check(l_tcl, "l_tcl");
  check(l_regularizer, "l_regularizer");
  LossBreakdown b;
  b.l_cls = l_cls;
  b.l_reg = l_reg;
  b.l_tcl = l_tcl;
  b.l_regularizer = l_regularizer;
  b.total = w.lambda1 * l_cls + w.lambda2 * l_reg + w.lambda3 * l_tcl + l_regularizer;
  check(b.total, "total");
  return b;
}

template <typename T>
LossBreakdown total_loss(double l_cls, double l_reg, double l_tcl,
                         const LossWeights& w, const nn::Network<T>& net) {
  return combine(l_cls, l_reg, l_tcl, regularizer(net, w.weight_decay), w);
}

#define HF_LOSS_INSTANTIATE(T)                                                         \
  template double classification_loss<T>(const nn::Batch<T>&, const nn::Batch<T>&,     \
                                         nn::Batch<T>*);                               \
  template double regression_loss<T>(const nn::Batch<T>&, const nn::Batch<T>&,         \
                                     nn::Batch<T>*);                                   \
  template double tcl_consistency_loss<T>(const std::vector<TriplePtrs<T>>&,           \
                                          std::vector<TripleGrads<T>>*);               \
  template double tcl_consistency_loss<T>(const std::vector<model::FeatureTriple<T>>&); \
  template double regularizer<T>(const nn::Network<T>&, double);                       \
  template void add_regularizer_grads<T>(nn::Network<T>&, double);                     \
  template LossBreakdown total_loss<T>(double, double, double, const LossWeights&,     \
                                       const nn::Network<T>&);

HF_LOSS_INSTANTIATE(float)
HF_LOSS_INSTANTIATE(double)
#undef HF_LOSS_INSTANTIATE

}  // namespace hf::loss
