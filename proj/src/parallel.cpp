// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace splatterlab {

int worker_count() {
    if (const char *env = std::getenv("SPLATTERLAB_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (...) {
        }
    }
    return omp_get_max_threads();
}

void configure_threads() { omp_set_num_threads(worker_count()); }

} // namespace splatterlab
