#include "lingo/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace lingo::kernels {

const KernelTable& scalar_table();
const KernelTable& avx2_table();

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

Backend detect() {
  if (const char* env = std::getenv("LINGO_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!avx2_supported())
        throw std::runtime_error("LINGO_KERNELS=avx2 but CPU lacks AVX2/FMA");
      return Backend::avx2;
    }
    throw std::runtime_error(std::string("unknown LINGO_KERNELS value: ") +
                             env);
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

std::atomic<int> g_forced{-1};

}  // namespace

Backend active_backend() {
  int f = g_forced.load(std::memory_order_acquire);
  if (f >= 0) return static_cast<Backend>(f);
  static const Backend detected = detect();
  return detected;
}

void force_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_supported())
    throw std::runtime_error("cannot force avx2 backend: CPU lacks AVX2/FMA");
  g_forced.store(static_cast<int>(b), std::memory_order_release);
}

const KernelTable& table_for(Backend b) {
  return b == Backend::avx2 ? avx2_table() : scalar_table();
}

const KernelTable& table() { return table_for(active_backend()); }

std::string backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

}  // namespace lingo::kernels
