#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace din {

// Global worker-count knob. 0 means "library default" (OpenMP's choice).
// Every parallel loop in this project writes disjoint outputs and any
// cross-iteration aggregation happens serially afterwards, so results are
// bit-identical for every thread count.
void set_threads(int n);
int get_threads();

template <typename F>
void parallel_for(size_t n, F&& body) {
#ifdef _OPENMP
    int req = get_threads();
    if (req == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) body(i);
        return;
    }
    if (req > 0) {
#pragma omp parallel for schedule(static) num_threads(req)
        for (long long i = 0; i < static_cast<long long>(n); ++i) body(static_cast<size_t>(i));
    } else {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(n); ++i) body(static_cast<size_t>(i));
    }
#else
    for (size_t i = 0; i < n; ++i) body(i);
#endif
}

}  // namespace din
