#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <vector>

#include "clasp/kernels.hpp"
#include "clasp/rng.hpp"

using namespace clasp;

namespace {

std::vector<double> rand_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, scale);
  return v;
}

// Sizes that exercise full 4-lane blocks, remainders, and the empty case.
const std::size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 16, 31, 64, 257};

bool close(double a, double b, double tol = 1e-12) {
  return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

}  // namespace

TEST_CASE("backend dispatch") {
  const kern::Backend initial = kern::active_backend();
  kern::set_backend(kern::Backend::Scalar);
  CHECK(kern::active_backend() == kern::Backend::Scalar);
  CHECK(std::string(kern::backend_name(kern::Backend::Scalar)) == "scalar");
  CHECK(std::string(kern::backend_name(kern::Backend::Avx2)) == "avx2");
  if (kern::avx2_supported()) {
    CHECK(kern::avx2_table() != nullptr);
    kern::set_backend(kern::Backend::Avx2);
    CHECK(kern::active_backend() == kern::Backend::Avx2);
  }
  kern::set_backend(initial);
}

TEST_CASE("reductions match across backends") {
  const kern::KernelTable* avx2 = kern::avx2_table();
  if (avx2 == nullptr) return;  // nothing to compare on this machine
  const kern::KernelTable& sc = kern::scalar_table();
  Rng rng(101);
  for (const std::size_t n : kSizes) {
    auto x = rand_vec(rng, n, 2.0);
    auto y = rand_vec(rng, n, 0.5);
    CHECK(close(sc.dot(x.data(), y.data(), n), avx2->dot(x.data(), y.data(), n)));
    CHECK(close(sc.sum(x.data(), n), avx2->sum(x.data(), n)));
    CHECK(close(sc.sumsq(x.data(), n), avx2->sumsq(x.data(), n)));
    if (n > 0)
      CHECK(sc.maxv(x.data(), n) == avx2->maxv(x.data(), n));  // max is exact
  }
}

TEST_CASE("elementwise ops match across backends") {
  const kern::KernelTable* avx2 = kern::avx2_table();
  if (avx2 == nullptr) return;
  const kern::KernelTable& sc = kern::scalar_table();
  Rng rng(202);
  for (const std::size_t n : kSizes) {
    const auto x = rand_vec(rng, n);
    const auto y = rand_vec(rng, n);
    const double a = rng.normal();

    auto y1 = y, y2 = y;
    sc.axpy(a, x.data(), y1.data(), n);
    avx2->axpy(a, x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i]));

    auto s1 = x, s2 = x;
    sc.scal(a, s1.data(), n);
    avx2->scal(a, s2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(s1[i] == s2[i]);

    std::vector<double> z1(n), z2(n);
    sc.vadd(x.data(), y.data(), z1.data(), n);
    avx2->vadd(x.data(), y.data(), z2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(z1[i] == z2[i]);
    sc.vsub(x.data(), y.data(), z1.data(), n);
    avx2->vsub(x.data(), y.data(), z2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(z1[i] == z2[i]);
    sc.vmul(x.data(), y.data(), z1.data(), n);
    avx2->vmul(x.data(), y.data(), z2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(z1[i] == z2[i]);

    auto m1 = rand_vec(rng, n);
    auto m2 = m1;
    sc.vmuladd(x.data(), y.data(), m1.data(), n);
    avx2->vmuladd(x.data(), y.data(), m2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(close(m1[i], m2[i]));
  }
}

TEST_CASE("gemm variants match naive reference and each other") {
  const kern::KernelTable& sc = kern::scalar_table();
  const kern::KernelTable* avx2 = kern::avx2_table();
  Rng rng(303);
  const std::size_t dims[][3] = {
      {1, 1, 1}, {2, 3, 4}, {4, 4, 4}, {5, 7, 3}, {8, 16, 8}, {13, 9, 17}};
  for (const auto& d : dims) {
    const std::size_t m = d[0], k = d[1], n = d[2];
    const auto a = rand_vec(rng, m * k);
    const auto b = rand_vec(rng, k * n);
    // Transposed layouts for tn / nt.
    std::vector<double> at(k * m), bt(n * k);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];

    std::vector<double> ref(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j)
          ref[i * n + j] += a[i * k + p] * b[p * n + j];

    std::vector<double> c(m * n, 7.0);
    sc.gemm_nn(m, k, n, a.data(), b.data(), c.data(), false);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(close(c[i], ref[i]));

    // accumulate=true adds on top of the existing C.
    sc.gemm_nn(m, k, n, a.data(), b.data(), c.data(), true);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(close(c[i], 2.0 * ref[i]));

    std::vector<double> c_tn(m * n, 0.0), c_nt(m * n, 0.0);
    sc.gemm_tn(m, k, n, at.data(), b.data(), c_tn.data(), false);
    sc.gemm_nt(m, k, n, a.data(), bt.data(), c_nt.data(), false);
    for (std::size_t i = 0; i < m * n; ++i) {
      CHECK(close(c_tn[i], ref[i]));
      CHECK(close(c_nt[i], ref[i]));
    }

    if (avx2 != nullptr) {
      std::vector<double> v(m * n, 0.0);
      avx2->gemm_nn(m, k, n, a.data(), b.data(), v.data(), false);
      for (std::size_t i = 0; i < m * n; ++i) CHECK(close(v[i], ref[i]));
      v.assign(m * n, 0.0);
      avx2->gemm_tn(m, k, n, at.data(), b.data(), v.data(), false);
      for (std::size_t i = 0; i < m * n; ++i) CHECK(close(v[i], ref[i]));
      v.assign(m * n, 0.0);
      avx2->gemm_nt(m, k, n, a.data(), bt.data(), v.data(), false);
      for (std::size_t i = 0; i < m * n; ++i) CHECK(close(v[i], ref[i]));
    }
  }
}

TEST_CASE("adamw single update matches the closed form") {
  Rng rng(404);
  const std::size_t n = 37;
  const double lr = 3e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
  auto p0 = rand_vec(rng, n);
  const auto g = rand_vec(rng, n);
  auto m0 = rand_vec(rng, n, 0.1);
  auto v0 = rand_vec(rng, n, 0.01);
  for (double& x : v0) x = std::fabs(x);

  const long t = 5;  // pretend this is the 5th update
  const double bc1 = 1.0 - std::pow(b1, t), bc2 = 1.0 - std::pow(b2, t);

  auto check_table = [&](const kern::KernelTable& kt) {
    auto p = p0, m = m0, v = v0;
    kt.adamw_update(p.data(), g.data(), m.data(), v.data(), n, lr, b1, b2, eps,
                    wd, bc1, bc2);
    for (std::size_t i = 0; i < n; ++i) {
      const double em = b1 * m0[i] + (1 - b1) * g[i];
      const double ev = b2 * v0[i] + (1 - b2) * g[i] * g[i];
      const double expect = p0[i] - lr * ((em / bc1) / (std::sqrt(ev / bc2) + eps) +
                                          wd * p0[i]);
      CHECK(close(m[i], em));
      CHECK(close(v[i], ev));
      CHECK(close(p[i], expect, 1e-14));
    }
  };
  check_table(kern::scalar_table());
  if (kern::avx2_table() != nullptr) check_table(*kern::avx2_table());
}

TEST_CASE("ema update is the literal convex expression") {
  Rng rng(505);
  const std::size_t n = 41;
  const auto t0 = rand_vec(rng, n);
  const auto s = rand_vec(rng, n);
  const double m = 0.996;
  auto check_table = [&](const kern::KernelTable& kt) {
    auto t = t0;
    kt.ema_update(t.data(), s.data(), m, n);
    for (std::size_t i = 0; i < n; ++i) {
      const double expect = m * t0[i] + (1.0 - m) * s[i];
      CHECK(t[i] == expect);  // bitwise: same rounding as the written formula
    }
  };
  check_table(kern::scalar_table());
  if (kern::avx2_table() != nullptr) check_table(*kern::avx2_table());
}

TEST_CASE("public entry points follow the active backend") {
  const kern::Backend initial = kern::active_backend();
  Rng rng(606);
  const std::size_t n = 19;
  const auto x = rand_vec(rng, n);
  const auto y = rand_vec(rng, n);
  kern::set_backend(kern::Backend::Scalar);
  const double d_scalar = kern::dot(x.data(), y.data(), n);
  CHECK(d_scalar == kern::scalar_table().dot(x.data(), y.data(), n));
  if (kern::avx2_table() != nullptr) {
    kern::set_backend(kern::Backend::Avx2);
    const double d_avx = kern::dot(x.data(), y.data(), n);
    CHECK(d_avx == kern::avx2_table()->dot(x.data(), y.data(), n));
    CHECK(close(d_scalar, d_avx));
  }
  kern::set_backend(initial);
}
