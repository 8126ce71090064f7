// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

#include "splatterlab/synthgen.hpp"
#include "splatterlab/training.hpp"

namespace splatterlab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

// Union of the component configurations plus I/O paths. Loaded from a JSON
// file of the form {"dataset": {...}, "fit": {...}, "data": ..., "out": ...};
// unknown keys are rejected at every level.
struct RunConfig {
    DatasetConfig dataset;
    FitConfig fit;
    std::filesystem::path data;
    std::filesystem::path out;
};

RunConfig run_config_from_json(const nlohmann::json &j);
nlohmann::json run_config_to_json(const RunConfig &cfg);

// Runs one subcommand. Returns 0 on success, 1 on a domain error and 2 on a
// usage error (after printing the synopsis to `err`).
int dispatch(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

// Sweep angles of the novel-view render, degrees.
inline constexpr double kSweepAngles[5] = {-40.0, -20.0, 0.0, 20.0, 40.0};
std::string sweep_file_name(double angle_deg);

} // namespace splatterlab
