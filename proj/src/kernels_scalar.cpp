#include <algorithm>
#include <cmath>

#include "yolors/kernels.hpp"

namespace yolors::kern {
namespace {

void s_add(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void s_sub(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void s_mul(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void s_scale(const double* a, double s, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}
void s_relu(const double* a, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}
void s_abs(const double* a, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = std::fabs(a[i]);
}

void s_axpy(double alpha, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void s_mul_acc(const double* a, const double* b, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}
void s_relu_bwd(const double* x, const double* g, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) dx[i] += g[i];
}
void s_sign_mul_acc(const double* x, const double* g, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    if (x[i] > 0.0)
      dx[i] += g[i];
    else if (x[i] < 0.0)
      dx[i] -= g[i];
  }
}

double s_sum(const double* a, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}
double s_max(const double* a, size_t n) {
  double m = a[0];
  for (size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
  return m;
}
double s_dot(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void s_mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}
void s_mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      c[static_cast<size_t>(i) * n + j] +=
          s_dot(a + static_cast<size_t>(i) * k, b + static_cast<size_t>(j) * k, k);
}
void s_mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * m;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void s_conv2d_fwd(const double* in, const double* kern, double* out, const Conv2dDims& d) {
  for (int co = 0; co < d.cout; ++co)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int ky = 0; ky < d.k; ++ky)
        for (int kx = 0; kx < d.k; ++kx) {
          const double w =
              kern[((static_cast<size_t>(co) * d.cin + ci) * d.k + ky) * d.k + kx];
          if (w == 0.0) continue;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            const double* irow = in + (static_cast<size_t>(ci) * d.h + iy) * d.w;
            double* orow = out + (static_cast<size_t>(co) * d.oh + oy) * d.ow;
            for (int ox = 0; ox < d.ow; ++ox) {
              const int ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.w) continue;
              orow[ox] += w * irow[ix];
            }
          }
        }
}

void s_conv2d_bwd_input(const double* dout, const double* kern, double* din,
                        const Conv2dDims& d) {
  for (int co = 0; co < d.cout; ++co)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int ky = 0; ky < d.k; ++ky)
        for (int kx = 0; kx < d.k; ++kx) {
          const double w =
              kern[((static_cast<size_t>(co) * d.cin + ci) * d.k + ky) * d.k + kx];
          if (w == 0.0) continue;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            const double* gorow = dout + (static_cast<size_t>(co) * d.oh + oy) * d.ow;
            double* dirow = din + (static_cast<size_t>(ci) * d.h + iy) * d.w;
            for (int ox = 0; ox < d.ow; ++ox) {
              const int ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.w) continue;
              dirow[ix] += w * gorow[ox];
            }
          }
        }
}

void s_conv2d_bwd_kern(const double* dout, const double* in, double* dkern,
                       const Conv2dDims& d) {
  for (int co = 0; co < d.cout; ++co)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int ky = 0; ky < d.k; ++ky)
        for (int kx = 0; kx < d.k; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < d.oh; ++oy) {
            const int iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            const double* gorow = dout + (static_cast<size_t>(co) * d.oh + oy) * d.ow;
            const double* irow = in + (static_cast<size_t>(ci) * d.h + iy) * d.w;
            for (int ox = 0; ox < d.ow; ++ox) {
              const int ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.w) continue;
              acc += gorow[ox] * irow[ix];
            }
          }
          dkern[((static_cast<size_t>(co) * d.cin + ci) * d.k + ky) * d.k + kx] += acc;
        }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops table = {
      "scalar", s_add,  s_sub,    s_mul,   s_scale, s_relu,  s_abs,
      s_axpy,   s_mul_acc, s_relu_bwd, s_sign_mul_acc,
      s_sum,    s_max,  s_dot,
      s_mm_nn,  s_mm_nt, s_mm_tn,
      s_conv2d_fwd, s_conv2d_bwd_input, s_conv2d_bwd_kern,
  };
  return table;
}

}  // namespace yolors::kern
