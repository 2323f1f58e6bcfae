#pragma once

// Dense double-precision kernels used by the coordinate-descent solver and
// the residual-variance estimators. Each kernel has a portable scalar
// reference and, on x86-64, an AVX2/FMA variant. The variant is chosen once
// at first use from the running CPU's capabilities; every thread sees the
// same choice, so results do not depend on the worker count.

#include <cstddef>
#include <span>
#include <string_view>

namespace orthofe::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa);

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*sum_squares)(const double* a, std::size_t n);
};

/// True when the kernels for `isa` are compiled in and the CPU supports them.
bool available(Isa isa);

/// Kernel table for a specific ISA. Falls back to scalar when unavailable.
const KernelTable& table(Isa isa);

/// The ISA picked by runtime dispatch.
Isa active_isa();

/// Overrides runtime dispatch (process-wide). Intended for tests and
/// benchmarks; call before any worker threads start.
void force_isa(Isa isa);

const KernelTable& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size() < y.size() ? x.size() : y.size());
}

inline double sum_squares(std::span<const double> a) { return active().sum_squares(a.data(), a.size()); }

namespace detail {
extern const KernelTable scalar_table;
#if defined(ORTHOFE_HAVE_AVX2)
extern const KernelTable avx2_table;
#endif
}  // namespace detail

}  // namespace orthofe::kernels
