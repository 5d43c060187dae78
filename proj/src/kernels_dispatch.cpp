#include <atomic>
#include <cstdlib>
#include <cstring>

#include "clasp/kernels.hpp"

namespace clasp::kern {
namespace {

std::atomic<const KernelTable*> g_active{nullptr};
std::atomic<Backend> g_backend{Backend::Scalar};

const KernelTable* resolve() {
  const KernelTable* avx2 = avx2_table();
  const char* env = std::getenv("CLASP_KERNELS");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) avx2 = nullptr;
    // "avx2" and "auto" both fall through to the capability check.
  }
#if defined(__x86_64__) || defined(__amd64__)
  if (avx2 != nullptr && __builtin_cpu_supports("avx2") &&
      __builtin_cpu_supports("fma")) {
    g_backend.store(Backend::Avx2);
    return avx2;
  }
#endif
  g_backend.store(Backend::Scalar);
  return &scalar_table();
}

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    t = resolve();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(__amd64__)
  return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
         __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() {
  active();
  return g_backend.load();
}

void set_backend(Backend b) {
  if (b == Backend::Avx2 && avx2_supported()) {
    g_active.store(avx2_table());
    g_backend.store(Backend::Avx2);
  } else {
    g_active.store(&scalar_table());
    g_backend.store(Backend::Scalar);
  }
}

const char* backend_name(Backend b) {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

double dot(const double* x, const double* y, std::size_t n) {
  return active().dot(x, y, n);
}
double sum(const double* x, std::size_t n) { return active().sum(x, n); }
double sumsq(const double* x, std::size_t n) { return active().sumsq(x, n); }
double maxv(const double* x, std::size_t n) { return active().maxv(x, n); }
void axpy(double a, const double* x, double* y, std::size_t n) {
  active().axpy(a, x, y, n);
}
void scal(double a, double* x, std::size_t n) { active().scal(a, x, n); }
void vadd(const double* x, const double* y, double* z, std::size_t n) {
  active().vadd(x, y, z, n);
}
void vsub(const double* x, const double* y, double* z, std::size_t n) {
  active().vsub(x, y, z, n);
}
void vmul(const double* x, const double* y, double* z, std::size_t n) {
  active().vmul(x, y, z, n);
}
void vmuladd(const double* x, const double* y, double* z, std::size_t n) {
  active().vmuladd(x, y, z, n);
}
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  active().gemm_nn(m, k, n, a, b, c, accumulate);
}
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  active().gemm_tn(m, k, n, a, b, c, accumulate);
}
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  active().gemm_nt(m, k, n, a, b, c, accumulate);
}
void adamw_update(double* p, const double* g, double* m, double* v,
                  std::size_t n, double lr, double beta1, double beta2,
                  double eps, double weight_decay, double bc1, double bc2) {
  active().adamw_update(p, g, m, v, n, lr, beta1, beta2, eps, weight_decay,
                        bc1, bc2);
}
void ema_update(double* t, const double* s, double momentum, std::size_t n) {
  active().ema_update(t, s, momentum, n);
}

}  // namespace clasp::kern
