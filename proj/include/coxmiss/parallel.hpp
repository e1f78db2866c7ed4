#pragma once

#include <exception>
#include <vector>

namespace coxmiss {

// Worker count: requested > 0 wins, then COXMISS_WORKERS, then the OpenMP default.
int resolve_workers(int requested);

// Run fn(i) for i in [0, n) on up to `workers` OpenMP threads. Each index
// must write only its own output slot. If any call throws, the exception from
// the lowest failing index is rethrown after the loop, so error reporting does
// not depend on scheduling.
template <class Fn>
void parallel_for(int n, int workers, Fn&& fn) {
    if (n <= 0) return;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
    bool any = false;
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers) if (workers > 1) reduction(|| : any)
    for (int i = 0; i < n; ++i) {
        try {
            fn(i);
        } catch (...) {
            errors[static_cast<size_t>(i)] = std::current_exception();
            any = true;
        }
    }
    if (any)
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
}

}  // namespace coxmiss
