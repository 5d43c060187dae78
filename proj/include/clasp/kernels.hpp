#pragma once

// Low-level f64 array kernels. Every routine has a scalar reference
// implementation and, on x86-64 with AVX2+FMA, a vectorized variant chosen at
// runtime. Within one process the active backend never changes unless
// set_backend() is called, so results are reproducible run to run on the same
// machine. The CLASP_KERNELS environment variable ("scalar" | "avx2" | "auto")
// pins the choice before first use.

#include <cstddef>

namespace clasp::kern {

enum class Backend { Scalar, Avx2 };

bool avx2_supported();
Backend active_backend();
void set_backend(Backend b);
const char* backend_name(Backend b);

double dot(const double* x, const double* y, std::size_t n);
double sum(const double* x, std::size_t n);
double sumsq(const double* x, std::size_t n);
double maxv(const double* x, std::size_t n);

// y += a * x
void axpy(double a, const double* x, double* y, std::size_t n);
// x *= a
void scal(double a, double* x, std::size_t n);
// z = x + y, z = x - y, z = x .* y, z += x .* y
void vadd(const double* x, const double* y, double* z, std::size_t n);
void vsub(const double* x, const double* y, double* z, std::size_t n);
void vmul(const double* x, const double* y, double* z, std::size_t n);
void vmuladd(const double* x, const double* y, double* z, std::size_t n);

// Row-major GEMM, C is m x n. With accumulate=false C is overwritten.
// gemm_nn: C (+)= A[m,k] * B[k,n]
// gemm_tn: C (+)= A[k,m]^T * B[k,n]
// gemm_nt: C (+)= A[m,k] * B[n,k]^T
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate);

// Decoupled weight decay Adam step on one tensor. bc1/bc2 are the bias
// corrections 1-beta1^t and 1-beta2^t already evaluated by the caller.
void adamw_update(double* p, const double* g, double* m, double* v,
                  std::size_t n, double lr, double beta1, double beta2,
                  double eps, double weight_decay, double bc1, double bc2);

// t = momentum * t + (1 - momentum) * s
void ema_update(double* t, const double* s, double momentum, std::size_t n);

// Implementation tables; one per backend.
struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  double (*sumsq)(const double*, std::size_t);
  double (*maxv)(const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scal)(double, double*, std::size_t);
  void (*vadd)(const double*, const double*, double*, std::size_t);
  void (*vsub)(const double*, const double*, double*, std::size_t);
  void (*vmul)(const double*, const double*, double*, std::size_t);
  void (*vmuladd)(const double*, const double*, double*, std::size_t);
  void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const double*,
                  const double*, double*, bool);
  void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const double*,
                  const double*, double*, bool);
  void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const double*,
                  const double*, double*, bool);
  void (*adamw_update)(double*, const double*, double*, double*, std::size_t,
                       double, double, double, double, double, double, double);
  void (*ema_update)(double*, const double*, double, std::size_t);
};

const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when unsupported at build or run time

}  // namespace clasp::kern
