// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// Randomized central finite-difference checks of every analytic backward pass.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace splatterlab {

struct GradcheckOptions {
    int cases = 100;
    double rel_tol = 1e-3;
    double abs_tol = 1e-6;
    std::uint64_t seed = 0;
    int coordinates = 6; // checked per case: half largest-gradient, half random
    std::vector<std::string> ops; // empty means all
};

struct GradcheckReport {
    std::string op;
    int cases = 0;
    int passed = 0;
    // Draws discarded because the step-halving test found a kink under the stencil.
    int redrawn = 0;
    double worst_rel = 0.0;
    double worst_abs = 0.0;
    double seconds = 0.0;

    bool ok() const { return passed == cases; }
};

std::vector<std::string> gradcheck_ops();

// Throws InvalidArgument for an unknown op name.
std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions &opt);

} // namespace splatterlab
