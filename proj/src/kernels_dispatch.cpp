#include <cstdlib>
#include <stdexcept>
#include <string>

#include "yolors/kernels.hpp"

namespace yolors::kern {
namespace {

Backend detect_backend() {
  if (const char* env = std::getenv("YOLORS_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2") {
      if (!avx2_available())
        throw std::runtime_error("YOLORS_KERNELS=avx2 requested but AVX2 is unavailable");
      return Backend::avx2;
    }
    if (!v.empty()) throw std::runtime_error("unknown YOLORS_KERNELS value: " + v);
  }
  return avx2_available() ? Backend::avx2 : Backend::scalar;
}

Backend& current() {
  static Backend b = detect_backend();
  return b;
}

}  // namespace

bool avx2_available() {
#if defined(YOLORS_HAVE_AVX2)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() { return current(); }

const Ops& ops_for(Backend b) {
#if defined(YOLORS_HAVE_AVX2)
  if (b == Backend::avx2) return avx2_ops();
#else
  if (b == Backend::avx2) throw std::runtime_error("AVX2 backend not compiled in");
#endif
  return scalar_ops();
}

const Ops& ops() { return ops_for(current()); }

void force_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_available())
    throw std::runtime_error("cannot force AVX2 backend: unavailable");
  current() = b;
}

}  // namespace yolors::kern
