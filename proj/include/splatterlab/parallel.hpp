// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace splatterlab {

// Worker count for parallel loops: SPLATTERLAB_THREADS when set and positive,
// otherwise the OpenMP default.
int worker_count();

// Applies worker_count() to the OpenMP runtime. Called once by the CLI.
void configure_threads();

} // namespace splatterlab
