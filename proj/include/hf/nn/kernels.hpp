#pragma once

#include <cstdint>
#include <vector>

#include "hf/nn/batch.hpp"

namespace hf::nn {

// Stride-1 convolution with odd kernel k and pad (k-1)/2; spatial dims are
// preserved. Weight layout (cout, cin, k, k) row-major, i.e. a
// (cout) x (cin*k*k) matrix. cols is the im2col scratch, reusable between
// forward and backward of the same call.
template <typename T>
void im2col(const Batch<T>& x, int k, std::vector<T>& cols);

template <typename T>
void conv2d_forward(const Batch<T>& x, const std::vector<T>& w, const std::vector<T>& b,
                    int cout, int k, Batch<T>& y, std::vector<T>& cols);

template <typename T>
void conv2d_backward(const Batch<T>& x, const std::vector<T>& w, int cout, int k,
                     const Batch<T>& gy, const std::vector<T>& cols, Batch<T>* gx,
                     std::vector<T>& gw, std::vector<T>& gb);

// 2x2 max-pool, stride 2; h and w must be even. argmax stores 0..3 per output.
template <typename T>
void maxpool2_forward(const Batch<T>& x, Batch<T>& y, std::vector<uint8_t>& argmax);

template <typename T>
void maxpool2_backward(const Batch<T>& gy, const std::vector<uint8_t>& argmax,
                       int h_in, int w_in, Batch<T>& gx);

// 2x2 transposed convolution with stride 2 (exact 2x upsampling; output
// blocks are disjoint). Weight layout (cout, cin, 2, 2).
template <typename T>
void tconv2_forward(const Batch<T>& x, const std::vector<T>& w, const std::vector<T>& b,
                    int cout, Batch<T>& y);

template <typename T>
void tconv2_backward(const Batch<T>& x, const std::vector<T>& w, int cout,
                     const Batch<T>& gy, Batch<T>* gx, std::vector<T>& gw,
                     std::vector<T>& gb);

template <typename T>
void relu_forward(Batch<T>& y);  // in place

template <typename T>
void relu_backward_from_output(const Batch<T>& y, Batch<T>& gy);  // in place on gy

// Softmax over the channel axis, per (sample, pixel) column.
template <typename T>
void softmax_channels_forward(const Batch<T>& x, Batch<T>& y);

template <typename T>
void softmax_channels_backward(const Batch<T>& y, const Batch<T>& gy, Batch<T>& gx);

// Row softmax of a dense p x p matrix (attention masks), and its adjoint.
template <typename T>
void softmax_rows(T* m, int rows, int cols);

template <typename T>
void softmax_rows_backward(const T* a, const T* ga, T* ge, int rows, int cols);

// Instance norm over each (sample, channel) plane, with affine params
// gamma/beta of length c. Caches nothing; backward recomputes the moments.
template <typename T>
void instnorm_forward(const Batch<T>& x, const std::vector<T>& gamma,
                      const std::vector<T>& beta, T eps, Batch<T>& y);

template <typename T>
void instnorm_backward(const Batch<T>& x, const std::vector<T>& gamma, T eps,
                       const Batch<T>& gy, Batch<T>& gx, std::vector<T>& ggamma,
                       std::vector<T>& gbeta);

// --- attention kernels -----------------------------------------------------
//
// Channel attention: per sample, mask A = row-softmax(V V^T) over the d x d
// channel affinity, attended output A V. Parameter-free.
// Position attention: per sample, Q = Wq X, K = Wk X with r = max(c/8, 1)
// reduced channels; mask A = row-softmax(Q^T K) over (h*w)^2; attended
// output X A^T. When h*w exceeds `pool_limit` the feature is 2x2
// average-pooled (repeatedly) before attention and the attended result is
// replicated back (documented deviation for tractability).

template <typename T>
struct ChannelAttnCache {
  std::vector<T> masks;  // n * c * c, per-sample row-stochastic masks
};

template <typename T>
void channel_attention_forward(const Batch<T>& x, Batch<T>& y, ChannelAttnCache<T>& cache);

template <typename T>
void channel_attention_backward(const Batch<T>& x, const ChannelAttnCache<T>& cache,
                                const Batch<T>& gy, Batch<T>& gx);

template <typename T>
struct PositionAttnCache {
  int pool = 1;          // pooling factor applied before attention
  int ph = 0, pw = 0;    // pooled spatial dims
  std::vector<T> q, k;   // n * r * (ph*pw) each
  std::vector<T> xp;     // pooled feature, n * c * (ph*pw); empty when pool == 1
  std::vector<T> masks;  // only filled when record_masks; n * (ph*pw)^2
};

template <typename T>
void position_attention_forward(const Batch<T>& x, const std::vector<T>& wq,
                                const std::vector<T>& wk, int r, int pool_limit,
                                Batch<T>& y, PositionAttnCache<T>& cache,
                                bool record_masks = false);

template <typename T>
void position_attention_backward(const Batch<T>& x, const std::vector<T>& wq,
                                 const std::vector<T>& wk, int r,
                                 const PositionAttnCache<T>& cache, const Batch<T>& gy,
                                 Batch<T>& gx, std::vector<T>& gwq, std::vector<T>& gwk);

// --- elementwise helpers ----------------------------------------------------

template <typename T>
void add_scaled(Batch<T>& acc, const Batch<T>& x, T scale);  // acc += scale * x

template <typename T>
uint64_t checksum(const std::vector<T>& v);

}  // namespace hf::nn
