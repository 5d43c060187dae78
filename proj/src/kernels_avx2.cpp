// AVX2+FMA variants of the f64 kernels. Compiled with -mavx2 -mfma on x86-64
// only; kernels_dispatch.cpp decides at runtime whether this table is used.

#include "clasp/kernels.hpp"

#if defined(__x86_64__) || defined(__amd64__)

#include <immintrin.h>

#include <cmath>
#include <cstring>

namespace clasp::kern {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double a_dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double r = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) r += x[i] * y[i];
  return r;
}

double a_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

double a_sumsq(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i] * x[i];
  return r;
}

double a_maxv(const double* x, std::size_t n) {
  std::size_t i = 0;
  double r = x[0];
  if (n >= 4) {
    __m256d m = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) m = _mm256_max_pd(m, _mm256_loadu_pd(x + i));
    __m128d lo = _mm_max_pd(_mm256_castpd256_pd128(m), _mm256_extractf128_pd(m, 1));
    r = _mm_cvtsd_f64(_mm_max_sd(lo, _mm_unpackhi_pd(lo, lo)));
  }
  for (; i < n; ++i)
    if (x[i] > r) r = x[i];
  return r;
}

void a_axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void a_scal(double a, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

void a_vadd(const double* x, const double* y, double* z, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] + y[i];
}

void a_vsub(const double* x, const double* y, double* z, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] - y[i];
}

void a_vmul(const double* x, const double* y, double* z, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] * y[i];
}

void a_vmuladd(const double* x, const double* y, double* z, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vz = _mm256_loadu_pd(z + i);
    vz = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), vz);
    _mm256_storeu_pd(z + i, vz);
  }
  for (; i < n; ++i) z[i] += x[i] * y[i];
}

// Broadcast-A row kernel: for each (i,p), c_row += a_ip * b_row. The j loop is
// the vector axis.
void a_gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      a_axpy(aip, b + p * n, crow, n);
    }
  }
}

void a_gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (arow[i] == 0.0) continue;
      a_axpy(arow[i], brow, c + i * n, n);
    }
  }
}

void a_gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
               const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = a_dot(arow, b + j * k, k);
      crow[j] = accumulate ? crow[j] + d : d;
    }
  }
}

void a_adamw(double* p, const double* g, double* m, double* v, std::size_t n,
             double lr, double beta1, double beta2, double eps,
             double weight_decay, double bc1, double bc2) {
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb1c = _mm256_set1_pd(1.0 - beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d vb2c = _mm256_set1_pd(1.0 - beta2);
  const __m256d vbc1 = _mm256_set1_pd(bc1);
  const __m256d vbc2 = _mm256_set1_pd(bc2);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d vwd = _mm256_set1_pd(weight_decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vg = _mm256_loadu_pd(g + i);
    __m256d vm = _mm256_fmadd_pd(vb1c, vg, _mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)));
    __m256d vv = _mm256_fmadd_pd(vb2c, _mm256_mul_pd(vg, vg),
                                 _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)));
    _mm256_storeu_pd(m + i, vm);
    _mm256_storeu_pd(v + i, vv);
    __m256d mhat = _mm256_div_pd(vm, vbc1);
    __m256d vhat = _mm256_div_pd(vv, vbc2);
    __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
    __m256d vp = _mm256_loadu_pd(p + i);
    __m256d step = _mm256_fmadd_pd(vwd, vp, _mm256_div_pd(mhat, denom));
    _mm256_storeu_pd(p + i, _mm256_fnmadd_pd(vlr, step, vp));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]);
  }
}

// No FMA here: the teacher update must equal the literal two-rounding
// expression m*t + (1-m)*s bitwise, matching the scalar kernel.
void a_ema(double* t, const double* s, double momentum, std::size_t n) {
  const __m256d vm = _mm256_set1_pd(momentum);
  const __m256d vc = _mm256_set1_pd(1.0 - momentum);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vt = _mm256_mul_pd(vm, _mm256_loadu_pd(t + i));
    const __m256d vs = _mm256_mul_pd(vc, _mm256_loadu_pd(s + i));
    _mm256_storeu_pd(t + i, _mm256_add_pd(vt, vs));
  }
  for (; i < n; ++i) t[i] = momentum * t[i] + (1.0 - momentum) * s[i];
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table = {
      a_dot,     a_sum,     a_sumsq,   a_maxv,    a_axpy,
      a_scal,    a_vadd,    a_vsub,    a_vmul,    a_vmuladd,
      a_gemm_nn, a_gemm_tn, a_gemm_nt, a_adamw,   a_ema,
  };
  return &table;
}

}  // namespace clasp::kern

#else

namespace clasp::kern {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace clasp::kern

#endif
