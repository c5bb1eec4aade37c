// AVX2+FMA variants of the dense kernels. This translation unit is compiled
// with -mavx2 -mfma; callers must not reach it unless avx2_supported().

#include <cstddef>

#include "lingo/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace lingo::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double v_dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                           acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                           acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void v_axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_scale(double alpha, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void v_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i,
                     _mm256_add_pd(_mm256_loadu_pd(a + i),
                                   _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i,
                     _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                   _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i,
                     _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                   _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_matvec(const double* m, const double* x, double* y, std::size_t rows,
              std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = v_dot(m + r * cols, x, cols);
}

void v_matvec_t(const double* m, const double* x, double* y, std::size_t rows,
                std::size_t cols) {
  std::size_t c = 0;
  for (; c + 4 <= cols; c += 4) _mm256_storeu_pd(y + c, _mm256_setzero_pd());
  for (; c < cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) v_axpy(x[r], m + r * cols, y, cols);
}

void v_ger(double alpha, const double* x, const double* y, double* m,
           std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    v_axpy(alpha * x[r], y, m + r * cols, cols);
}

double v_sum(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}

double v_max(const double* a, std::size_t n) {
  std::size_t i = 0;
  double m = a[0];
  if (n >= 4) {
    __m256d vm = _mm256_loadu_pd(a);
    for (i = 4; i + 4 <= n; i += 4)
      vm = _mm256_max_pd(vm, _mm256_loadu_pd(a + i));
    __m128d lo = _mm256_castpd256_pd128(vm);
    __m128d hi = _mm256_extractf128_pd(vm, 1);
    lo = _mm_max_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    m = _mm_cvtsd_f64(_mm_max_sd(lo, shuf));
  }
  for (; i < n; ++i) m = a[i] > m ? a[i] : m;
  return m;
}

void v_decayed_accum(double rho, const double* g, double* acc, std::size_t n) {
  const __m256d vr = _mm256_set1_pd(rho);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vg = _mm256_loadu_pd(g + i);
    __m256d va = _mm256_mul_pd(vr, _mm256_loadu_pd(acc + i));
    _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(vg, vg, va));
  }
  for (; i < n; ++i) acc[i] = rho * acc[i] + g[i] * g[i];
}

void v_adagrad_apply(double lr, double wd, double eps, const double* g,
                     const double* acc, double* p, std::size_t n) {
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d vwd = _mm256_set1_pd(wd);
  const __m256d veps = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vp = _mm256_loadu_pd(p + i);
    __m256d num = _mm256_fmadd_pd(vwd, vp, _mm256_loadu_pd(g + i));
    __m256d den = _mm256_add_pd(_mm256_sqrt_pd(_mm256_loadu_pd(acc + i)),
                                veps);
    vp = _mm256_sub_pd(vp, _mm256_mul_pd(vlr, _mm256_div_pd(num, den)));
    _mm256_storeu_pd(p + i, vp);
  }
  for (; i < n; ++i)
    p[i] -= lr * (g[i] + wd * p[i]) / (__builtin_sqrt(acc[i]) + eps);
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable t = {
      v_dot,  v_axpy,     v_scale, v_add, v_sub,           v_mul,
      v_matvec, v_matvec_t, v_ger,   v_sum, v_max,           v_decayed_accum,
      v_adagrad_apply,
  };
  return t;
}

}  // namespace lingo::kernels

#else  // non-x86: the dispatcher never asks for this table

namespace lingo::kernels {
const KernelTable& scalar_table();
const KernelTable& avx2_table() { return scalar_table(); }
}  // namespace lingo::kernels

#endif
