#pragma once

#include <cstddef>
#include <string>

// Low-level arithmetic kernels on raw double arrays. Two implementations
// exist: a scalar reference (kernels_scalar.cpp) and an AVX2/FMA variant
// (kernels_avx2.cpp). The active table is selected once at startup from
// CPU capabilities, overridable with YOLORS_KERNELS=scalar|avx2 or
// force_backend(). The tensor engine calls only through this table, so the
// whole stack runs on either backend; equivalence tests compare the two.

namespace yolors::kern {

enum class Backend { scalar, avx2 };

struct Conv2dDims {
  int cin, h, w;       // input channels / height / width
  int cout, k;         // output channels, square kernel size
  int stride, pad;
  int oh, ow;          // output height / width
};

struct Ops {
  const char* name;

  // Elementwise, contiguous, equal length. out may not alias inputs.
  void (*add)(const double* a, const double* b, double* out, size_t n);
  void (*sub)(const double* a, const double* b, double* out, size_t n);
  void (*mul)(const double* a, const double* b, double* out, size_t n);
  void (*scale)(const double* a, double s, double* out, size_t n);
  void (*relu)(const double* a, double* out, size_t n);
  void (*abs)(const double* a, double* out, size_t n);

  // Accumulating backward helpers.
  void (*axpy)(double alpha, const double* x, double* y, size_t n);   // y += alpha*x
  void (*mul_acc)(const double* a, const double* b, double* y, size_t n);  // y += a.*b
  void (*relu_bwd)(const double* x, const double* g, double* dx, size_t n);  // dx += g.*(x>0)
  void (*sign_mul_acc)(const double* x, const double* g, double* dx, size_t n);  // dx += g.*sign(x)

  // Reductions.
  double (*sum)(const double* a, size_t n);
  double (*max)(const double* a, size_t n);   // n >= 1
  double (*dot)(const double* a, const double* b, size_t n);

  // Dense matrix products, row-major, accumulate into c.
  void (*mm_nn)(const double* a, const double* b, double* c, int m, int k, int n);
  // c[m,n] += a[m,k] * b[n,k]^T
  void (*mm_nt)(const double* a, const double* b, double* c, int m, int k, int n);
  // c[m,n] += a[k,m]^T * b[k,n]
  void (*mm_tn)(const double* a, const double* b, double* c, int m, int k, int n);

  // Direct 2-D cross-correlation, zero padding; all accumulate.
  void (*conv2d_fwd)(const double* in, const double* kern, double* out, const Conv2dDims& d);
  void (*conv2d_bwd_input)(const double* dout, const double* kern, double* din, const Conv2dDims& d);
  void (*conv2d_bwd_kern)(const double* dout, const double* in, double* dkern, const Conv2dDims& d);
};

const Ops& scalar_ops();
#if defined(YOLORS_HAVE_AVX2)
const Ops& avx2_ops();
#endif

bool avx2_available();            // compiled in and supported by this CPU
Backend active_backend();
const Ops& ops();                 // the active table
void force_backend(Backend b);    // test hook; throws if unavailable
const Ops& ops_for(Backend b);

}  // namespace yolors::kern
