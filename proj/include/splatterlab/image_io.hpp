// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "splatterlab/core.hpp"

namespace splatterlab {

// 8-bit RGBA PNG, linear storage: values are clamped to [0,1] and scaled by 255.
// 1-channel images are written as gray with opaque alpha, 3-channel as opaque RGB.
void write_png(const std::filesystem::path &path, const Image &img);

// Reads any PNG as a 4-channel image with values in [0,1].
Image read_png(const std::filesystem::path &path);

// Single-channel little-endian PFM ("Pf", scale -1.0), rows stored bottom-up.
void write_pfm(const std::filesystem::path &path, const Image &depth);
Image read_pfm(const std::filesystem::path &path);

} // namespace splatterlab
