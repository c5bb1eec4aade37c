#pragma once

#include <cstddef>
#include <string>

// Dense f64 kernels behind a runtime-dispatched table. Every entry has a
// scalar reference implementation and, on x86-64 with AVX2+FMA, a vectorized
// variant. The two are equivalence-tested; a process uses one backend for
// its whole lifetime unless forced, so repeated runs stay bit-identical.
namespace lingo::kernels {

enum class Backend { scalar, avx2 };

struct KernelTable {
  // y = sum_i a[i]*b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // x[i] *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  // Hadamard product
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // y = M x, M row-major rows x cols
  void (*matvec)(const double* m, const double* x, double* y, std::size_t rows,
                 std::size_t cols);
  // y = M^T x, M row-major rows x cols, y has length cols
  void (*matvec_t)(const double* m, const double* x, double* y,
                   std::size_t rows, std::size_t cols);
  // M += alpha * x y^T, M row-major rows x cols, x length rows, y length cols
  void (*ger)(double alpha, const double* x, const double* y, double* m,
              std::size_t rows, std::size_t cols);
  double (*sum)(const double* a, std::size_t n);
  // max over a nonempty finite range
  double (*max_val)(const double* a, std::size_t n);
  // acc[i] = rho*acc[i] + g[i]*g[i]
  void (*decayed_accum)(double rho, const double* g, double* acc,
                        std::size_t n);
  // p[i] -= lr * (g[i] + wd*p[i]) / (sqrt(acc[i]) + eps)
  void (*adagrad_apply)(double lr, double wd, double eps, const double* g,
                        const double* acc, double* p, std::size_t n);
};

// Active table. Auto-detects AVX2+FMA on first use; the LINGO_KERNELS
// environment variable ("scalar" or "avx2") overrides detection.
const KernelTable& table();

// Explicit table lookup, used by the equivalence tests.
const KernelTable& table_for(Backend b);

Backend active_backend();
void force_backend(Backend b);
bool avx2_supported();
std::string backend_name(Backend b);

}  // namespace lingo::kernels
