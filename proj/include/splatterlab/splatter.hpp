// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// The splatter image: a pixel-aligned H x W x K grid of raw Gaussian
// parameters, decoded along each pixel's camera ray.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "splatterlab/core.hpp"

namespace splatterlab {

// Raw channel layout of one Gaussian.
namespace channel {
inline constexpr int kDepth = 0;
inline constexpr int kOffset = 1; // 3 channels
inline constexpr int kQuat = 4;   // 4 channels, (w, x, y, z)
inline constexpr int kLogScale = 8; // 3 channels
inline constexpr int kOpacity = 11;
inline constexpr int kColor = 12; // 3 channels
inline constexpr int kCount = 15;
} // namespace channel

struct SplatterImage {
    int height = 0;
    int width = 0;
    int layers = 0;
    std::vector<double> raw;

    SplatterImage() = default;
    SplatterImage(int h, int w, int k)
        : height(h), width(w), layers(k),
          raw(static_cast<std::size_t>(h) * w * k * channel::kCount, 0.0) {}

    std::size_t gaussian_count() const { return static_cast<std::size_t>(height) * width * layers; }

    // Gaussian index of pixel (i, j), layer k. Layers vary fastest.
    std::size_t gaussian_index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * width + j) * layers + k;
    }
    double *gaussian(std::size_t g) { return raw.data() + g * channel::kCount; }
    const double *gaussian(std::size_t g) const { return raw.data() + g * channel::kCount; }
};

struct DecodeConfig {
    double z_near = 0.15;
    double z_range = 1.5;
    double offset_bound = 0.1;
    double logscale_min = -9.210340371976182; // ln(1e-4)
    double logscale_max = -2.995732273553991; // ln(0.05)
    double color_mix = 0.5;

    void validate() const;
    double z_mid() const { return z_near + 0.5 * z_range; }
};

nlohmann::json decode_config_to_json(const DecodeConfig &cfg);
DecodeConfig decode_config_from_json(const nlohmann::json &j);

// Throws DimensionMismatch unless cam_roi is width x height of the grid.
GaussianSet decode(const SplatterImage &sp, const Camera &cam_roi, const DecodeConfig &cfg);

// Gradient with respect to the raw grid given per-Gaussian adjoints.
std::vector<double> decode_backward(const SplatterImage &sp, const Camera &cam_roi, const DecodeConfig &cfg,
                                    const std::vector<Gaussian3D> &d_gaussians);

// Bilinear sample of the first three channels at a continuous pixel location
// (pixel centers at integer + 0.5). Returns false outside the sampling domain.
bool bilinear_rgb(const Image &img, const Vec2 &pixel, Vec3 &out, Eigen::Matrix<double, 3, 2> *d_pixel = nullptr);

// Mixes each decoded color with the input-image color where the Gaussian
// reprojects into cam_roi.
GaussianSet direct_color_sample(const GaussianSet &gs, const Image &input_image, const Camera &cam_roi,
                                const DecodeConfig &cfg);

// Maps adjoints on the sampled set back onto the decoded set (mean and color).
std::vector<Gaussian3D> direct_color_sample_backward(const GaussianSet &gs, const Image &input_image,
                                                     const Camera &cam_roi, const DecodeConfig &cfg,
                                                     const std::vector<Gaussian3D> &d_out);

// Initial standard deviation of every Gaussian, in ROI pixels at z_mid.
inline constexpr double kInitScalePixels = 0.7;

SplatterImage init_params(int height, int width, int layers, std::uint64_t seed, double focal_roi,
                          const DecodeConfig &cfg = {});

// Mean decoded opacity of each layer.
std::vector<double> layer_mean_opacity(const GaussianSet &gs, int layers);

// Adds d_mean[k] / (H W) to the opacity adjoint of every Gaussian in layer k.
void layer_mean_opacity_backward(const std::vector<double> &d_mean, int layers, std::vector<Gaussian3D> &d_gaussians);

// Blob: 16-byte header (H, W, K, version; little-endian u32) then f32 values.
inline constexpr std::uint32_t kSplatterFormatVersion = 1;
void save_splatter(const std::filesystem::path &path, const SplatterImage &sp);
SplatterImage load_splatter(const std::filesystem::path &path);

} // namespace splatterlab
