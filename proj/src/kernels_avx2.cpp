#include <algorithm>
#include <cmath>
#include <immintrin.h>

#include "yolors/kernels.hpp"

namespace yolors::kern {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void v_add(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}
void v_sub(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}
void v_mul(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}
void v_scale(const double* a, double s, double* out, size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), sv));
  for (; i < n; ++i) out[i] = a[i] * s;
}
void v_relu(const double* a, double* out, size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(a + i), zero));
  for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}
void v_abs(const double* a, double* out, size_t n) {
  const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_and_pd(_mm256_loadu_pd(a + i), mask));
  for (; i < n; ++i) out[i] = std::fabs(a[i]);
}

void v_axpy(double alpha, const double* x, double* y, size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}
void v_mul_acc(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a[i] * b[i];
}
void v_relu_bwd(const double* x, const double* g, double* dx, size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d gv = _mm256_and_pd(_mm256_loadu_pd(g + i), mask);
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), gv));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) dx[i] += g[i];
}
void v_sign_mul_acc(const double* x, const double* g, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    if (x[i] > 0.0)
      dx[i] += g[i];
    else if (x[i] < 0.0)
      dx[i] -= g[i];
  }
}

double v_sum(const double* a, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}
double v_max(const double* a, size_t n) {
  if (n < 8) {
    double m = a[0];
    for (size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
    return m;
  }
  __m256d acc = _mm256_loadu_pd(a);
  size_t i = 4;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(a + i));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double m = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) m = std::max(m, a[i]);
  return m;
}
double v_dot(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void v_mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      v_axpy(arow[p], b + static_cast<size_t>(p) * n, crow, static_cast<size_t>(n));
    }
  }
}
void v_mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      c[static_cast<size_t>(i) * n + j] +=
          v_dot(a + static_cast<size_t>(i) * k, b + static_cast<size_t>(j) * k, static_cast<size_t>(k));
}
void v_mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * m;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i)
      v_axpy(arow[i], brow, c + static_cast<size_t>(i) * n, static_cast<size_t>(n));
  }
}

// Stride-1 rows are contiguous in both input and output, so forward and both
// backward passes reduce to shifted axpy / dot over row segments.
void v_conv2d_fwd(const double* in, const double* kern, double* out, const Conv2dDims& d) {
  if (d.stride != 1) {
    scalar_ops().conv2d_fwd(in, kern, out, d);
    return;
  }
  for (int co = 0; co < d.cout; ++co)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int ky = 0; ky < d.k; ++ky)
        for (int kx = 0; kx < d.k; ++kx) {
          const double w =
              kern[((static_cast<size_t>(co) * d.cin + ci) * d.k + ky) * d.k + kx];
          if (w == 0.0) continue;
          const int ox_lo = std::max(0, d.pad - kx);
          const int ox_hi = std::min(d.ow, d.w + d.pad - kx);
          if (ox_hi <= ox_lo) continue;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            const double* irow =
                in + (static_cast<size_t>(ci) * d.h + iy) * d.w + (ox_lo + kx - d.pad);
            double* orow = out + (static_cast<size_t>(co) * d.oh + oy) * d.ow + ox_lo;
            v_axpy(w, irow, orow, static_cast<size_t>(ox_hi - ox_lo));
          }
        }
}

void v_conv2d_bwd_input(const double* dout, const double* kern, double* din,
                        const Conv2dDims& d) {
  if (d.stride != 1) {
    scalar_ops().conv2d_bwd_input(dout, kern, din, d);
    return;
  }
  for (int co = 0; co < d.cout; ++co)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int ky = 0; ky < d.k; ++ky)
        for (int kx = 0; kx < d.k; ++kx) {
          const double w =
              kern[((static_cast<size_t>(co) * d.cin + ci) * d.k + ky) * d.k + kx];
          if (w == 0.0) continue;
          const int ox_lo = std::max(0, d.pad - kx);
          const int ox_hi = std::min(d.ow, d.w + d.pad - kx);
          if (ox_hi <= ox_lo) continue;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            const double* gorow = dout + (static_cast<size_t>(co) * d.oh + oy) * d.ow + ox_lo;
            double* dirow =
                din + (static_cast<size_t>(ci) * d.h + iy) * d.w + (ox_lo + kx - d.pad);
            v_axpy(w, gorow, dirow, static_cast<size_t>(ox_hi - ox_lo));
          }
        }
}

void v_conv2d_bwd_kern(const double* dout, const double* in, double* dkern,
                       const Conv2dDims& d) {
  if (d.stride != 1) {
    scalar_ops().conv2d_bwd_kern(dout, in, dkern, d);
    return;
  }
  for (int co = 0; co < d.cout; ++co)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int ky = 0; ky < d.k; ++ky)
        for (int kx = 0; kx < d.k; ++kx) {
          const int ox_lo = std::max(0, d.pad - kx);
          const int ox_hi = std::min(d.ow, d.w + d.pad - kx);
          if (ox_hi <= ox_lo) continue;
          double acc = 0.0;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            const double* gorow = dout + (static_cast<size_t>(co) * d.oh + oy) * d.ow + ox_lo;
            const double* irow =
                in + (static_cast<size_t>(ci) * d.h + iy) * d.w + (ox_lo + kx - d.pad);
            acc += v_dot(gorow, irow, static_cast<size_t>(ox_hi - ox_lo));
          }
          dkern[((static_cast<size_t>(co) * d.cin + ci) * d.k + ky) * d.k + kx] += acc;
        }
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops table = {
      "avx2", v_add,  v_sub,    v_mul,   v_scale, v_relu,  v_abs,
      v_axpy, v_mul_acc, v_relu_bwd, v_sign_mul_acc,
      v_sum,  v_max,  v_dot,
      v_mm_nn, v_mm_nt, v_mm_tn,
      v_conv2d_fwd, v_conv2d_bwd_input, v_conv2d_bwd_kern,
  };
  return table;
}

}  // namespace yolors::kern
