// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// Image quality and temporal stability metrics, plus shaded geometry renders.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "splatterlab/core.hpp"
#include "splatterlab/splatter.hpp"
#include "splatterlab/synthgen.hpp"
#include "splatterlab/training.hpp"

namespace splatterlab {

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) for 3-channel images with peak 1. The optional mask is a
// 1-channel image selecting pixels with value > 0.5. Throws EmptyMask.
double psnr(const Image &x, const Image &y, const Image *mask = nullptr);

// Mean SSIM of the luma images over the valid region of an 11x11 Gaussian
// window (sigma 1.5). Images smaller than the window use a single window.
double ssim(const Image &x, const Image &y);

// Mean over views of the per-pixel L2 norm of (I_t - I_{t-1}) - (R_t - R_{t-1}),
// averaged over pixels and consecutive frame pairs. Indexed [view][frame].
double jitter_metric(const std::vector<std::vector<Image>> &frames_gt,
                     const std::vector<std::vector<Image>> &frames_rd);

inline constexpr double kGeometryScaleInflation = 1.5;
inline constexpr double kShadeLinear = 0.35;
inline constexpr double kShadeQuadratic = 0.65;

struct GeometryRender {
    Image shade;   // 1 channel
    Image alpha;   // 1 channel
    Image normals; // 3 channels, camera frame
};

GeometryRender geometry_render(const GaussianSet &gs, const Camera &cam);

struct ViewMetrics {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct MetricsReport {
    std::vector<ViewMetrics> views;
    double input_psnr = 0.0;
    double input_ssim = 0.0;
    double mean_heldout_psnr = 0.0;
    double mean_heldout_ssim = 0.0;
    double jitter = 0.0;
    nlohmann::json config;
    std::vector<std::string> renders;
};

nlohmann::json metrics_to_json(const MetricsReport &r);

// Face-box perturbation of the jitter metric, fixed so that fits trained with
// different perturbation settings are measured alike.
inline constexpr double kJitterEvalPerturbation = 0.02;

// Input view and every held-out view against the fitted grid, plus the jitter
// metric over `jitter_draws` perturbed face boxes drawn from `eval_seed`.
MetricsReport evaluate_fit(const SplatterImage &grid, const MultiViewSample &sample, const FitConfig &cfg,
                           int jitter_draws = 4, std::uint64_t eval_seed = 0x5eed);

} // namespace splatterlab
