#include <cmath>
#include <cstddef>

#include "lingo/kernels.hpp"

namespace lingo::kernels {
namespace {

double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void s_axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void s_scale(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void s_add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_matvec(const double* m, const double* x, double* y, std::size_t rows,
              std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = s_dot(m + r * cols, x, cols);
}

void s_matvec_t(const double* m, const double* x, double* y, std::size_t rows,
                std::size_t cols) {
  for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) s_axpy(x[r], m + r * cols, y, cols);
}

void s_ger(double alpha, const double* x, const double* y, double* m,
           std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    s_axpy(alpha * x[r], y, m + r * cols, cols);
}

double s_sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double s_max(const double* a, std::size_t n) {
  double m = a[0];
  for (std::size_t i = 1; i < n; ++i) m = a[i] > m ? a[i] : m;
  return m;
}

void s_decayed_accum(double rho, const double* g, double* acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] = rho * acc[i] + g[i] * g[i];
}

void s_adagrad_apply(double lr, double wd, double eps, const double* g,
                     const double* acc, double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    p[i] -= lr * (g[i] + wd * p[i]) / (std::sqrt(acc[i]) + eps);
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t = {
      s_dot,  s_axpy,     s_scale, s_add, s_sub,           s_mul,
      s_matvec, s_matvec_t, s_ger,   s_sum, s_max,           s_decayed_accum,
      s_adagrad_apply,
  };
  return t;
}

}  // namespace lingo::kernels
