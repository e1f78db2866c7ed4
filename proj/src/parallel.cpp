#include "coxmiss/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace coxmiss {

int resolve_workers(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("COXMISS_WORKERS")) {
        try {
            int v = std::stoi(env);
            if (v > 0) return v;
        } catch (...) {
        }
    }
    return omp_get_max_threads();
}

}  // namespace coxmiss
