#include <atomic>

#include "orthofe/kernels.hpp"

namespace orthofe::kernels {

namespace {

Isa detect() {
#if defined(ORTHOFE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::Avx2;
#endif
  return Isa::Scalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{&table(detect())};
  return ptr;
}

}  // namespace

std::string_view to_string(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool available(Isa isa) {
  if (isa == Isa::Scalar) return true;
#if defined(ORTHOFE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& table(Isa isa) {
#if defined(ORTHOFE_HAVE_AVX2)
  if (isa == Isa::Avx2 && available(Isa::Avx2)) return detail::avx2_table;
#endif
  (void)isa;
  return detail::scalar_table;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

Isa active_isa() { return &active() == &detail::scalar_table ? Isa::Scalar : Isa::Avx2; }

void force_isa(Isa isa) { current().store(&table(isa), std::memory_order_release); }

}  // namespace orthofe::kernels
