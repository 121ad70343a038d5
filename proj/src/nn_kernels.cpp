#include "hf/nn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hf/nn/blas.hpp"
#include "hf/rng.hpp"

namespace hf::nn {

namespace {

// reusable per-thread scratch; contents are always fully overwritten by the
// caller before use
template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
T* scratch_for(size_t n) {
  std::vector<T>& buf = scratch<T>();
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

}  // namespace

template <typename T>
void im2col(const Batch<T>& x, int k, std::vector<T>& cols) {
  const int pad = (k - 1) / 2;
  const int h = x.h, w = x.w;
  const size_t ncols = x.cols();
  // every byte below is written exactly once (pad zeros included); rows are
  // disjoint, so the parallel split stays bit-deterministic
  cols.resize(size_t(x.c) * k * k * ncols);
  const int rows = x.c * k * k;
#pragma omp parallel for schedule(static)
  for (int row = 0; row < rows; ++row) {
    int ci = row / (k * k), dy = (row / k) % k, dx = row % k;
    T* dst_row = cols.data() + size_t(row) * ncols;
    int x0 = std::max(0, pad - dx);  // valid output x range for this tap
    int x1 = std::min(w, w + pad - dx);
    for (int ni = 0; ni < x.n; ++ni) {
      const T* src_plane = x.plane(ci, ni);
      T* dst_plane = dst_row + size_t(ni) * h * w;
      for (int y = 0; y < h; ++y) {
        int sy = y + dy - pad;
        T* dst = dst_plane + size_t(y) * w;
        if (sy < 0 || sy >= h || x0 >= x1) {
          std::memset(dst, 0, size_t(w) * sizeof(T));
          continue;
        }
        if (x0 > 0) std::memset(dst, 0, size_t(x0) * sizeof(T));
        if (x1 < w) std::memset(dst + x1, 0, size_t(w - x1) * sizeof(T));
        const T* src = src_plane + size_t(sy) * w + (x0 + dx - pad);
        std::memcpy(dst + x0, src, size_t(x1 - x0) * sizeof(T));
      }
    }
  }
}

template <typename T>
void conv2d_forward(const Batch<T>& x, const std::vector<T>& w, const std::vector<T>& b,
                    int cout, int k, Batch<T>& y, std::vector<T>& cols) {
  im2col(x, k, cols);
  y.reshape_for_overwrite(x.n, cout, x.h, x.w);
  const int kk = x.c * k * k;
  const size_t ncols = x.cols();
  gemm(false, false, cout, int(ncols), kk, T(1), w.data(), kk, cols.data(), int(ncols),
       T(0), y.data.data(), int(ncols));
  for (int o = 0; o < cout; ++o) {
    T* row = y.row(o);
    T bias = b[o];
    for (size_t j = 0; j < ncols; ++j) row[j] += bias;
  }
}

template <typename T>
void conv2d_backward(const Batch<T>& x, const std::vector<T>& w, int cout, int k,
                     const Batch<T>& gy, const std::vector<T>& cols, Batch<T>* gx,
                     std::vector<T>& gw, std::vector<T>& gb) {
  const int kk = x.c * k * k;
  const size_t ncols = x.cols();
  gw.assign(size_t(cout) * kk, T(0));
  gb.assign(cout, T(0));
  for (int o = 0; o < cout; ++o) {
    const T* row = gy.row(o);
    T acc = 0;
    for (size_t j = 0; j < ncols; ++j) acc += row[j];
    gb[o] = acc;
  }
  gemm(false, true, cout, kk, int(ncols), T(1), gy.data.data(), int(ncols), cols.data(),
       int(ncols), T(0), gw.data(), kk);
  if (!gx) return;

  // dcols = W^T * dY, then gather back onto the input grid
  T* gcols = scratch_for<T>(size_t(kk) * ncols);
  gemm(true, false, kk, int(ncols), cout, T(1), w.data(), kk, gy.data.data(),
       int(ncols), T(0), gcols, int(ncols));

  gx->reshape_for_overwrite(x.n, x.c, x.h, x.w);
  std::memset(gx->data.data(), 0, gx->data.size() * sizeof(T));
  const int pad = (k - 1) / 2, h = x.h, ww = x.w;
  // dX[ci][n][y][x] += dcols[(ci,dy,dx)][(n, y+pad-dy, x+pad-dx)];
  // channels are disjoint, taps iterate per plane for locality
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < x.c; ++ci) {
    for (int ni = 0; ni < x.n; ++ni) {
      T* dst_plane = gx->plane(ci, ni);
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          const T* src_plane =
              gcols + ((size_t(ci) * k + dy) * k + dx) * ncols + size_t(ni) * h * ww;
          int yo = pad - dy, xo = pad - dx;
          int ylo = std::max(0, -yo), yhi = std::min(h, h - yo);
          int xlo = std::max(0, -xo), xhi = std::min(ww, ww - xo);
          for (int y = ylo; y < yhi; ++y) {
            T* __restrict dst = dst_plane + size_t(y) * ww;
            const T* __restrict src = src_plane + size_t(y + yo) * ww + xo;
            for (int xx = xlo; xx < xhi; ++xx) dst[xx] += src[xx];
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool2_forward(const Batch<T>& x, Batch<T>& y, std::vector<uint8_t>& argmax) {
  require(x.h % 2 == 0 && x.w % 2 == 0, ErrorCode::geometry,
          "maxpool2: spatial dims must be even");
  const int oh = x.h / 2, ow = x.w / 2;
  y.reshape_for_overwrite(x.n, x.c, oh, ow);
  argmax.resize(y.numel());
  for (int ci = 0; ci < x.c; ++ci)
    for (int ni = 0; ni < x.n; ++ni) {
      const T* src = x.plane(ci, ni);
      T* dst = y.plane(ci, ni);
      uint8_t* am = argmax.data() + (size_t(ci) * x.n + ni) * oh * ow;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const T* c0 = src + size_t(2 * oy) * x.w + 2 * ox;
          T v0 = c0[0], v1 = c0[1], v2 = c0[x.w], v3 = c0[x.w + 1];
          int best = 0;
          T bv = v0;
          if (v1 > bv) { bv = v1; best = 1; }
          if (v2 > bv) { bv = v2; best = 2; }
          if (v3 > bv) { bv = v3; best = 3; }
          dst[size_t(oy) * ow + ox] = bv;
          am[size_t(oy) * ow + ox] = uint8_t(best);
        }
    }
}

template <typename T>
void maxpool2_backward(const Batch<T>& gy, const std::vector<uint8_t>& argmax,
                       int h_in, int w_in, Batch<T>& gx) {
  gx.reshape_for_overwrite(gy.n, gy.c, h_in, w_in);
  std::memset(gx.data.data(), 0, gx.data.size() * sizeof(T));
  const int oh = gy.h, ow = gy.w;
  for (int ci = 0; ci < gy.c; ++ci)
    for (int ni = 0; ni < gy.n; ++ni) {
      const T* src = gy.plane(ci, ni);
      T* dst = gx.plane(ci, ni);
      const uint8_t* am = argmax.data() + (size_t(ci) * gy.n + ni) * oh * ow;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          int a = am[size_t(oy) * ow + ox];
          int y = 2 * oy + (a >> 1), x = 2 * ox + (a & 1);
          dst[size_t(y) * w_in + x] += src[size_t(oy) * ow + ox];
        }
    }
}

namespace {
// (cout*4) x cin matrix from the (cout, cin, 2, 2) weight layout
template <typename T>
void tconv_matrix(const std::vector<T>& w, int cout, int cin, std::vector<T>& wm) {
  wm.resize(size_t(cout) * 4 * cin);
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cin; ++i)
      for (int t = 0; t < 4; ++t)
        wm[(size_t(o) * 4 + t) * cin + i] = w[(size_t(o) * cin + i) * 4 + t];
}
}  // namespace

template <typename T>
void tconv2_forward(const Batch<T>& x, const std::vector<T>& w, const std::vector<T>& b,
                    int cout, Batch<T>& y) {
  std::vector<T> wm;
  tconv_matrix(w, cout, x.c, wm);
  const size_t ncols = x.cols();
  T* yb = scratch_for<T>(size_t(cout) * 4 * ncols);
  gemm(false, false, cout * 4, int(ncols), x.c, T(1), wm.data(), x.c, x.data.data(),
       int(ncols), T(0), yb, int(ncols));

  y.reshape_for_overwrite(x.n, cout, 2 * x.h, 2 * x.w);
  for (int o = 0; o < cout; ++o) {
    T bias = b[o];
    for (int t = 0; t < 4; ++t) {
      int dy = t >> 1, dx = t & 1;
      const T* src_row = yb + (size_t(o) * 4 + t) * ncols;
      for (int ni = 0; ni < x.n; ++ni) {
        const T* src = src_row + size_t(ni) * x.h * x.w;
        T* dst = y.plane(o, ni);
        for (int sy = 0; sy < x.h; ++sy) {
          T* d = dst + size_t(2 * sy + dy) * y.w + dx;
          const T* s = src + size_t(sy) * x.w;
          for (int sx = 0; sx < x.w; ++sx) d[2 * sx] = s[sx] + bias;
        }
      }
    }
  }
}

template <typename T>
void tconv2_backward(const Batch<T>& x, const std::vector<T>& w, int cout,
                     const Batch<T>& gy, Batch<T>* gx, std::vector<T>& gw,
                     std::vector<T>& gb) {
  const size_t ncols = x.cols();
  T* gyb = scratch_for<T>(size_t(cout) * 4 * ncols);
  gb.assign(cout, T(0));
  for (int o = 0; o < cout; ++o) {
    T acc = 0;
    const T* gplane_row = gy.row(o);
    for (size_t j = 0; j < gy.cols(); ++j) acc += gplane_row[j];
    gb[o] = acc;
    for (int t = 0; t < 4; ++t) {
      int dy = t >> 1, dx = t & 1;
      T* dst_row = gyb + (size_t(o) * 4 + t) * ncols;
      for (int ni = 0; ni < x.n; ++ni) {
        const T* src = gy.plane(o, ni);
        T* dst = dst_row + size_t(ni) * x.h * x.w;
        for (int sy = 0; sy < x.h; ++sy) {
          const T* s = src + size_t(2 * sy + dy) * gy.w + dx;
          T* d = dst + size_t(sy) * x.w;
          for (int sx = 0; sx < x.w; ++sx) d[sx] = s[2 * sx];
        }
      }
    }
  }

  std::vector<T> gwm(size_t(cout) * 4 * x.c);
  gemm(false, true, cout * 4, x.c, int(ncols), T(1), gyb, int(ncols),
       x.data.data(), int(ncols), T(0), gwm.data(), x.c);
  gw.assign(size_t(cout) * x.c * 4, T(0));
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < x.c; ++i)
      for (int t = 0; t < 4; ++t)
        gw[(size_t(o) * x.c + i) * 4 + t] = gwm[(size_t(o) * 4 + t) * x.c + i];

  if (!gx) return;
  std::vector<T> wm;
  tconv_matrix(w, cout, x.c, wm);
  gx->reshape_for_overwrite(x.n, x.c, x.h, x.w);
  gemm(true, false, x.c, int(ncols), cout * 4, T(1), wm.data(), x.c, gyb,
       int(ncols), T(0), gx->data.data(), int(ncols));
}

template <typename T>
void relu_forward(Batch<T>& y) {
  for (T& v : y.data)
    if (v < T(0)) v = T(0);
}

template <typename T>
void relu_backward_from_output(const Batch<T>& y, Batch<T>& gy) {
  for (size_t i = 0; i < y.data.size(); ++i)
    if (y.data[i] <= T(0)) gy.data[i] = T(0);
}

template <typename T>
void softmax_channels_forward(const Batch<T>& x, Batch<T>& y) {
  y.reshape_for_overwrite(x.n, x.c, x.h, x.w);
  const size_t ncols = x.cols();
  for (size_t j = 0; j < ncols; ++j) {
    T m = x.data[j];
    for (int ci = 1; ci < x.c; ++ci) m = std::max(m, x.data[size_t(ci) * ncols + j]);
    T sum = 0;
    for (int ci = 0; ci < x.c; ++ci) {
      T e = std::exp(x.data[size_t(ci) * ncols + j] - m);
      y.data[size_t(ci) * ncols + j] = e;
      sum += e;
    }
    for (int ci = 0; ci < x.c; ++ci) y.data[size_t(ci) * ncols + j] /= sum;
  }
}

template <typename T>
void softmax_channels_backward(const Batch<T>& y, const Batch<T>& gy, Batch<T>& gx) {
  gx.reshape_for_overwrite(y.n, y.c, y.h, y.w);
  const size_t ncols = y.cols();
  for (size_t j = 0; j < ncols; ++j) {
    T dot = 0;
    for (int ci = 0; ci < y.c; ++ci)
      dot += gy.data[size_t(ci) * ncols + j] * y.data[size_t(ci) * ncols + j];
    for (int ci = 0; ci < y.c; ++ci) {
      size_t ix = size_t(ci) * ncols + j;
      gx.data[ix] = y.data[ix] * (gy.data[ix] - dot);
    }
  }
}

template <typename T>
void softmax_rows(T* m, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    T* row = m + size_t(i) * cols;
    T mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < cols; ++j) row[j] /= sum;
  }
}

template <typename T>
void softmax_rows_backward(const T* a, const T* ga, T* ge, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const T* arow = a + size_t(i) * cols;
    const T* garow = ga + size_t(i) * cols;
    T* gerow = ge + size_t(i) * cols;
    T dot = 0;
    for (int j = 0; j < cols; ++j) dot += arow[j] * garow[j];
    for (int j = 0; j < cols; ++j) gerow[j] = arow[j] * (garow[j] - dot);
  }
}

template <typename T>
void instnorm_forward(const Batch<T>& x, const std::vector<T>& gamma,
                      const std::vector<T>& beta, T eps, Batch<T>& y) {
  y.reshape_for_overwrite(x.n, x.c, x.h, x.w);
  const size_t m = x.spatial();
  for (int ci = 0; ci < x.c; ++ci)
    for (int ni = 0; ni < x.n; ++ni) {
      const T* src = x.plane(ci, ni);
      T* dst = y.plane(ci, ni);
      T mu = 0;
      for (size_t i = 0; i < m; ++i) mu += src[i];
      mu /= T(m);
      T var = 0;
      for (size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
      var /= T(m);
      T inv = T(1) / std::sqrt(var + eps);
      for (size_t i = 0; i < m; ++i) dst[i] = gamma[ci] * (src[i] - mu) * inv + beta[ci];
    }
}

template <typename T>
void instnorm_backward(const Batch<T>& x, const std::vector<T>& gamma, T eps,
                       const Batch<T>& gy, Batch<T>& gx, std::vector<T>& ggamma,
                       std::vector<T>& gbeta) {
  gx.reshape_for_overwrite(x.n, x.c, x.h, x.w);
  ggamma.assign(x.c, T(0));
  gbeta.assign(x.c, T(0));
  const size_t m = x.spatial();
  for (int ci = 0; ci < x.c; ++ci)
    for (int ni = 0; ni < x.n; ++ni) {
      const T* src = x.plane(ci, ni);
      const T* gsrc = gy.plane(ci, ni);
      T* dst = gx.plane(ci, ni);
      T mu = 0;
      for (size_t i = 0; i < m; ++i) mu += src[i];
      mu /= T(m);
      T var = 0;
      for (size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
      var /= T(m);
      T inv = T(1) / std::sqrt(var + eps);
      T gsum = 0, gdot = 0;
      for (size_t i = 0; i < m; ++i) {
        T xhat = (src[i] - mu) * inv;
        ggamma[ci] += gsrc[i] * xhat;
        gbeta[ci] += gsrc[i];
        gsum += gsrc[i];
        gdot += gsrc[i] * xhat;
      }
      for (size_t i = 0; i < m; ++i) {
        T xhat = (src[i] - mu) * inv;
        dst[i] = gamma[ci] * inv * (gsrc[i] - gsum / T(m) - xhat * gdot / T(m));
      }
    }
}

// --- attention ---------------------------------------------------------------

template <typename T>
void channel_attention_forward(const Batch<T>& x, Batch<T>& y,
                               ChannelAttnCache<T>& cache) {
  const int c = x.c;
  const size_t hw = x.spatial();
  const int ld = int(x.cols());
  y.resize(x.n, x.c, x.h, x.w);
  cache.masks.assign(size_t(x.n) * c * c, T(0));
  for (int ni = 0; ni < x.n; ++ni) {
    const T* v = x.data.data() + size_t(ni) * hw;  // c x hw view, leading dim ld
    T* a = cache.masks.data() + size_t(ni) * c * c;
    gemm(false, true, c, c, int(hw), T(1), v, ld, v, ld, T(0), a, c);
    softmax_rows(a, c, c);
    T* out = y.data.data() + size_t(ni) * hw;
    gemm(false, false, c, int(hw), c, T(1), a, c, v, ld, T(0), out, ld);
  }
}

template <typename T>
void channel_attention_backward(const Batch<T>& x, const ChannelAttnCache<T>& cache,
                                const Batch<T>& gy, Batch<T>& gx) {
  const int c = x.c;
  const size_t hw = x.spatial();
  const int ld = int(x.cols());
  gx.resize(x.n, x.c, x.h, x.w);
  std::vector<T> ga(size_t(c) * c), ge(size_t(c) * c);
  for (int ni = 0; ni < x.n; ++ni) {
    const T* v = x.data.data() + size_t(ni) * hw;
    const T* gout = gy.data.data() + size_t(ni) * hw;
    const T* a = cache.masks.data() + size_t(ni) * c * c;
    T* gv = gx.data.data() + size_t(ni) * hw;
    // y = A v :  dv += A^T gy ; dA = gy v^T
    gemm(true, false, c, int(hw), c, T(1), a, c, gout, ld, T(0), gv, ld);
    gemm(false, true, c, c, int(hw), T(1), gout, ld, v, ld, T(0), ga.data(), c);
    softmax_rows_backward(a, ga.data(), ge.data(), c, c);
    // e = v v^T :  dv += (e + e^T) v
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < i; ++j) {
        T s = ge[size_t(i) * c + j] + ge[size_t(j) * c + i];
        ge[size_t(i) * c + j] = s;
        ge[size_t(j) * c + i] = s;
      }
    for (int i = 0; i < c; ++i) ge[size_t(i) * c + i] *= T(2);
    gemm(false, false, c, int(hw), c, T(1), ge.data(), c, v, ld, T(1), gv, ld);
  }
}

namespace {

// repeated 2x2 average pooling until h*w <= limit; returns the factor
inline int pool_factor(int h, int w, int limit) {
  int f = 1;
  while (size_t(h / f) * size_t(w / f) > size_t(limit) && (h / f) % 2 == 0 &&
         (w / f) % 2 == 0)
    f *= 2;
  return f;
}

template <typename T>
void avgpool_plane(const T* src, int h, int w, int f, T* dst) {
  const int ph = h / f, pw = w / f;
  const T inv = T(1) / (T(f) * T(f));
  for (int py = 0; py < ph; ++py)
    for (int px = 0; px < pw; ++px) {
      T acc = 0;
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) acc += src[size_t(py * f + dy) * w + px * f + dx];
      dst[size_t(py) * pw + px] = acc * inv;
    }
}

}  // namespace

template <typename T>
void position_attention_forward(const Batch<T>& x, const std::vector<T>& wq,
                                const std::vector<T>& wk, int r, int pool_limit,
                                Batch<T>& y, PositionAttnCache<T>& cache,
                                bool record_masks) {
  const int c = x.c;
  const int f = pool_factor(x.h, x.w, pool_limit);
  const int ph = x.h / f, pw = x.w / f;
  const size_t p = size_t(ph) * pw;
  const int ld = int(x.cols());
  cache.pool = f;
  cache.ph = ph;
  cache.pw = pw;
  cache.q.assign(size_t(x.n) * r * p, T(0));
  cache.k.assign(size_t(x.n) * r * p, T(0));
  cache.xp.clear();
  if (f > 1) cache.xp.assign(size_t(x.n) * c * p, T(0));
  cache.masks.clear();
  if (record_masks) cache.masks.assign(size_t(x.n) * p * p, T(0));

  y.resize(x.n, x.c, x.h, x.w);
  std::vector<T> a(p * p), yp(f > 1 ? size_t(c) * p : 0);
  for (int ni = 0; ni < x.n; ++ni) {
    const T* xv = x.data.data() + size_t(ni) * x.spatial();
    const T* xp = xv;
    int xld = ld;
    if (f > 1) {
      T* dst = cache.xp.data() + size_t(ni) * c * p;
      for (int ci = 0; ci < c; ++ci)
        avgpool_plane(x.plane(ci, ni), x.h, x.w, f, dst + size_t(ci) * p);
      xp = dst;
      xld = int(p);
    }
    T* q = cache.q.data() + size_t(ni) * r * p;
    T* k = cache.k.data() + size_t(ni) * r * p;
    gemm(false, false, r, int(p), c, T(1), wq.data(), c, xp, xld, T(0), q, int(p));
    gemm(false, false, r, int(p), c, T(1), wk.data(), c, xp, xld, T(0), k, int(p));
    gemm(true, false, int(p), int(p), r, T(1), q, int(p), k, int(p), T(0), a.data(),
         int(p));
    softmax_rows(a.data(), int(p), int(p));
    if (record_masks)
      std::copy(a.begin(), a.end(), cache.masks.begin() + size_t(ni) * p * p);

    T* out = f > 1 ? yp.data() : y.data.data() + size_t(ni) * x.spatial();
    int old = f > 1 ? int(p) : ld;
    // attended[c_, p_] = sum_q A[p_, q_] * xp[c_, q_]
    gemm(false, true, c, int(p), int(p), T(1), xp, xld, a.data(), int(p), T(0), out,
         old);
    if (f > 1) {
      for (int ci = 0; ci < c; ++ci) {
        const T* src = yp.data() + size_t(ci) * p;
        T* dst = y.plane(ci, ni);
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx)
            dst[size_t(yy) * x.w + xx] = src[size_t(yy / f) * pw + xx / f];
      }
    }
  }
}

template <typename T>
void position_attention_backward(const Batch<T>& x, const std::vector<T>& wq,
                                 const std::vector<T>& wk, int r,
                                 const PositionAttnCache<T>& cache, const Batch<T>& gy,
                                 Batch<T>& gx, std::vector<T>& gwq, std::vector<T>& gwk) {
  const int c = x.c;
  const int f = cache.pool;
  const int ph = cache.ph, pw = cache.pw;
  const size_t p = size_t(ph) * pw;
  const int ld = int(x.cols());
  gx.resize(x.n, x.c, x.h, x.w);
  gwq.assign(size_t(r) * c, T(0));
  gwk.assign(size_t(r) * c, T(0));

  std::vector<T> a(p * p), ga(p * p), ge(p * p);
  std::vector<T> gq(size_t(r) * p), gk(size_t(r) * p);
  std::vector<T> gyp(f > 1 ? size_t(c) * p : 0), gxp(f > 1 ? size_t(c) * p : 0);
  for (int ni = 0; ni < x.n; ++ni) {
    const T* xp = f > 1 ? cache.xp.data() + size_t(ni) * c * p
                        : x.data.data() + size_t(ni) * x.spatial();
    int xld = f > 1 ? int(p) : ld;
    const T* q = cache.q.data() + size_t(ni) * r * p;
    const T* k = cache.k.data() + size_t(ni) * r * p;
    // recompute the mask (Q, K are cached; the p x p matrix is transient)
    gemm(true, false, int(p), int(p), r, T(1), q, int(p), k, int(p), T(0), a.data(),
         int(p));
    softmax_rows(a.data(), int(p), int(p));

    const T* gout;
    int gld;
    if (f > 1) {
      // adjoint of nearest-neighbor replication: sum each f x f block
      for (int ci = 0; ci < c; ++ci) {
        const T* src = gy.plane(ci, ni);
        T* dst = gyp.data() + size_t(ci) * p;
        std::fill(dst, dst + p, T(0));
        for (int yy = 0; yy < gy.h; ++yy)
          for (int xx = 0; xx < gy.w; ++xx)
            dst[size_t(yy / f) * pw + xx / f] += src[size_t(yy) * gy.w + xx];
      }
      gout = gyp.data();
      gld = int(p);
    } else {
      gout = gy.data.data() + size_t(ni) * gy.spatial();
      gld = ld;
    }

    // y = xp A^T : dxp = gy A ; dA = gy^T xp
    T* gxp_ptr;
    int gxld;
    if (f > 1) {
      gxp_ptr = gxp.data();
      gxld = int(p);
    } else {
      gxp_ptr = gx.data.data() + size_t(ni) * x.spatial();
      gxld = ld;
    }
    gemm(false, false, c, int(p), int(p), T(1), gout, gld, a.data(), int(p), T(0),
         gxp_ptr, gxld);
    gemm(true, false, int(p), int(p), c, T(1), gout, gld, xp, xld, T(0), ga.data(),
         int(p));
    softmax_rows_backward(a.data(), ga.data(), ge.data(), int(p), int(p));
    // e = q^T k
    gemm(false, true, r, int(p), int(p), T(1), k, int(p), ge.data(), int(p), T(0),
         gq.data(), int(p));
    gemm(false, false, r, int(p), int(p), T(1), q, int(p), ge.data(), int(p), T(0),
         gk.data(), int(p));
    gemm(false, true, r, c, int(p), T(1), gq.data(), int(p), xp, xld, T(1), gwq.data(),
         c);
    gemm(false, true, r, c, int(p), T(1), gk.data(), int(p), xp, xld, T(1), gwk.data(),
         c);
    gemm(true, false, c, int(p), r, T(1), wq.data(), c, gq.data(), int(p), T(1),
         gxp_ptr, gxld);
    gemm(true, false, c, int(p), r, T(1), wk.data(), c, gk.data(), int(p), T(1),
         gxp_ptr, gxld);

    if (f > 1) {
      // adjoint of average pooling: spread evenly over each f x f block
      const T inv = T(1) / (T(f) * T(f));
      for (int ci = 0; ci < c; ++ci) {
        const T* src = gxp.data() + size_t(ci) * p;
        T* dst = gx.plane(ci, ni);
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx)
            dst[size_t(yy) * x.w + xx] = src[size_t(yy / f) * pw + xx / f] * inv;
      }
    }
  }
}

template <typename T>
void add_scaled(Batch<T>& acc, const Batch<T>& x, T scale) {
  require_same_shape(acc, x, "add_scaled");
  for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += scale * x.data[i];
}

template <typename T>
uint64_t checksum(const std::vector<T>& v) {
  return fnv1a64(v.data(), v.size() * sizeof(T));
}

#define HF_INSTANTIATE(T)                                                               \
  template void im2col<T>(const Batch<T>&, int, std::vector<T>&);                       \
  template void conv2d_forward<T>(const Batch<T>&, const std::vector<T>&,               \
                                  const std::vector<T>&, int, int, Batch<T>&,           \
                                  std::vector<T>&);                                     \
  template void conv2d_backward<T>(const Batch<T>&, const std::vector<T>&, int, int,    \
                                   const Batch<T>&, const std::vector<T>&, Batch<T>*,   \
                                   std::vector<T>&, std::vector<T>&);                   \
  template void maxpool2_forward<T>(const Batch<T>&, Batch<T>&, std::vector<uint8_t>&); \
  template void maxpool2_backward<T>(const Batch<T>&, const std::vector<uint8_t>&, int, \
                                     int, Batch<T>&);                                   \
  template void tconv2_forward<T>(const Batch<T>&, const std::vector<T>&,               \
                                  const std::vector<T>&, int, Batch<T>&);               \
  template void tconv2_backward<T>(const Batch<T>&, const std::vector<T>&, int,         \
                                   const Batch<T>&, Batch<T>*, std::vector<T>&,         \
                                   std::vector<T>&);                                    \
  template void relu_forward<T>(Batch<T>&);                                             \
  template void relu_backward_from_output<T>(const Batch<T>&, Batch<T>&);               \
  template void softmax_channels_forward<T>(const Batch<T>&, Batch<T>&);                \
  template void softmax_channels_backward<T>(const Batch<T>&, const Batch<T>&,          \
                                             Batch<T>&);                                \
  template void softmax_rows<T>(T*, int, int);                                          \
  template void softmax_rows_backward<T>(const T*, const T*, T*, int, int);             \
  template void instnorm_forward<T>(const Batch<T>&, const std::vector<T>&,             \
                                    const std::vector<T>&, T, Batch<T>&);               \
  template void instnorm_backward<T>(const Batch<T>&, const std::vector<T>&, T,         \
                                     const Batch<T>&, Batch<T>&, std::vector<T>&,       \
                                     std::vector<T>&);                                  \
  template void channel_attention_forward<T>(const Batch<T>&, Batch<T>&,                \
                                             ChannelAttnCache<T>&);                     \
  template void channel_attention_backward<T>(const Batch<T>&,                          \
                                              const ChannelAttnCache<T>&,               \
                                              const Batch<T>&, Batch<T>&);              \
  template void position_attention_forward<T>(const Batch<T>&, const std::vector<T>&,   \
                                              const std::vector<T>&, int, int,          \
                                              Batch<T>&, PositionAttnCache<T>&, bool);  \
  template void position_attention_backward<T>(                                         \
      const Batch<T>&, const std::vector<T>&, const std::vector<T>&, int,               \
      const PositionAttnCache<T>&, const Batch<T>&, Batch<T>&, std::vector<T>&,         \
      std::vector<T>&);                                                                 \
  template void add_scaled<T>(Batch<T>&, const Batch<T>&, T);                           \
  template uint64_t checksum<T>(const std::vector<T>&);

HF_INSTANTIATE(float)
HF_INSTANTIATE(double)
#undef HF_INSTANTIATE

}  // namespace hf::nn
