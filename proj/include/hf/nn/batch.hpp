#pragma once

#include <cstddef>
#include <vector>

#include "hf/common.hpp"

namespace hf::nn {

// Activation tensor with logical shape (n, c, h, w) stored channel-major
// across the whole batch: index (c, n, y, x) = ((c*N + n)*H + y)*W + x.
// Viewed as a row-major matrix it is c rows by (n*h*w) columns, so a
// convolution over the batch collapses to a single GEMM; a per-sample view
// is the same matrix restricted to a column window of width h*w.
template <typename T>
struct Batch {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Batch() = default;
  Batch(int n_, int c_, int h_, int w_) { resize(n_, c_, h_, w_); }

  void resize(int n_, int c_, int h_, int w_) {
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    data.assign(numel(), T(0));
  }
  // shape change without the zero fill, for outputs that overwrite every
  // element; reuses capacity across calls
  void reshape_for_overwrite(int n_, int c_, int h_, int w_) {
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    data.resize(numel());
  }
  size_t numel() const { return size_t(n) * c * h * w; }
  size_t cols() const { return size_t(n) * h * w; }  // matrix columns
  size_t spatial() const { return size_t(h) * w; }
  bool empty() const { return data.empty(); }
  bool same_shape(const Batch& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  T* row(int ci) { return data.data() + size_t(ci) * cols(); }
  const T* row(int ci) const { return data.data() + size_t(ci) * cols(); }
  // contiguous h*w plane of one (channel, sample) pair
  T* plane(int ci, int ni) { return row(ci) + size_t(ni) * spatial(); }
  const T* plane(int ci, int ni) const { return row(ci) + size_t(ni) * spatial(); }

  T& at(int ni, int ci, int y, int x) {
    return data[((size_t(ci) * n + ni) * h + y) * w + x];
  }
  T at(int ni, int ci, int y, int x) const {
    return data[((size_t(ci) * n + ni) * h + y) * w + x];
  }

  void release() {
    data.clear();
    data.shrink_to_fit();
    n = c = h = w = 0;
  }
};

template <typename T>
void require_same_shape(const Batch<T>& a, const Batch<T>& b, const char* what) {
  require(a.same_shape(b), ErrorCode::geometry, std::string(what) + ": shape mismatch");
}

}  // namespace hf::nn
