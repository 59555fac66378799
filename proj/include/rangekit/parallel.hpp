#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

// Execution policy for the data-parallel kernels (MLP slots, EDT lines,
// per-window gradients). Serial is the reference path the tests compare
// against; Parallel fans out with OpenMP.

namespace rangekit {

enum class Exec { Serial, Parallel };

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline int thread_index() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

template <typename Fn>
void parallel_for(int n, Exec policy, Fn&& fn) {
  if (policy == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) fn(i);
  } else {
    for (int i = 0; i < n; ++i) fn(i);
  }
}

}  // namespace rangekit
