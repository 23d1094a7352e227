#include "fewloc/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace fewloc::kernels {
namespace {

std::atomic<const Ops*> g_active{nullptr};

const Ops* resolve_auto() {
#if defined(FEWLOC_HAVE_AVX2)
  if (avx2_available()) return &avx2_ops();
#endif
  return &scalar_ops();
}

const Ops* resolve_from_env() {
  if (const char* env = std::getenv("FEWLOC_KERNELS")) {
    const std::string name(env);
    if (name == "scalar") return &scalar_ops();
#if defined(FEWLOC_HAVE_AVX2)
    if (name == "avx2" && avx2_available()) return &avx2_ops();
#endif
  }
  return resolve_auto();
}

}  // namespace

bool avx2_available() {
#if defined(FEWLOC_HAVE_AVX2)
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

const Ops& active() {
  const Ops* ops = g_active.load(std::memory_order_acquire);
  if (!ops) {
    ops = resolve_from_env();
    g_active.store(ops, std::memory_order_release);
  }
  return *ops;
}

bool set_backend(std::string_view name) {
  if (name == "scalar") {
    g_active.store(&scalar_ops(), std::memory_order_release);
    return true;
  }
  if (name == "avx2") {
#if defined(FEWLOC_HAVE_AVX2)
    if (avx2_available()) {
      g_active.store(&avx2_ops(), std::memory_order_release);
      return true;
    }
#endif
    return false;
  }
  if (name == "auto") {
    g_active.store(resolve_auto(), std::memory_order_release);
    return true;
  }
  return false;
}

}  // namespace fewloc::kernels
