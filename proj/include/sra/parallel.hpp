// Parallel sweep helpers: OpenMP kernels with a serial reference path.
#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sra {

/// Execution policy for sweep kernels. Every kernel that accepts a policy
/// produces identical results under both policies; the serial path is kept
/// as the reference implementation for tests and benchmarks.
enum class Exec { serial, parallel };

inline int hardware_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_max_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

/// Runs body(i) for i in [0, n). Results must be written to disjoint slots so
/// that serial and parallel execution are bit-identical.
template <class F>
void for_each_index(Exec exec, std::int64_t n, F&& body) {
#ifdef _OPENMP
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

}  // namespace sra
