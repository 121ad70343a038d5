#pragma once

#include <vector>

#include "hf/model.hpp"
#include "hf/nn/batch.hpp"
#include "hf/nn/graph.hpp"

namespace hf::loss {

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.01;
  double lambda3 = 1.0;
  double weight_decay = 1e-4;
};

struct LossBreakdown {
  double l_cls = 0, l_reg = 0, l_tcl = 0, l_regularizer = 0, total = 0;
};

// Mean binary cross-entropy of foreground probabilities against a binary
// target; probabilities are clamped into [eps, 1-eps] before the logs.
inline constexpr double kProbEps = 1e-7;

template <typename T>
double classification_loss(const nn::Batch<T>& prob, const nn::Batch<T>& target,
                           nn::Batch<T>* grad = nullptr);

// Mean squared error against the contour heatmap target.
template <typename T>
double regression_loss(const nn::Batch<T>& pred, const nn::Batch<T>& target,
                       nn::Batch<T>* grad = nullptr);

template <typename T>
struct TriplePtrs {
  int level = 0;
  const nn::Batch<T>* seg = nullptr;
  const nn::Batch<T>* cont = nullptr;
  const nn::Batch<T>* tcl = nullptr;
};

template <typename T>
struct TripleGrads {
  nn::Batch<T> seg, cont, tcl;
};

// Per level: mean||xi_seg - xi_tcl||^2 + mean||xi_cont - xi_tcl||^2, summed
// over levels. An empty list is the single-path degeneracy and yields 0.
template <typename T>
double tcl_consistency_loss(const std::vector<TriplePtrs<T>>& triples,
                            std::vector<TripleGrads<T>>* grads = nullptr);

template <typename T>
double tcl_consistency_loss(const std::vector<model::FeatureTriple<T>>& triples);

// L2 regularizer: weight_decay * sum ||theta||^2 / 2 over every group.
template <typename T>
double regularizer(const nn::Network<T>& net, double weight_decay);

template <typename T>
void add_regularizer_grads(nn::Network<T>& net, double weight_decay);

// Weighted combination per the objective; errors on any non-finite component,
// naming the offender.
template <typename T>
LossBreakdown total_loss(double l_cls, double l_reg, double l_tcl,
                         const LossWeights& w, const nn::Network<T>& net);

LossBreakdown combine(double l_cls, double l_reg, double l_tcl, double l_regularizer,
                      const LossWeights& w);

}  // namespace hf::loss
