// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// Differentiable front-to-back Gaussian splat rasterizer with an analytic
// backward pass.

#pragma once

#include <optional>
#include <vector>

#include "splatterlab/core.hpp"

namespace splatterlab {

inline constexpr double kLowPassDilation = 0.3;
inline constexpr double kAlphaCap = 0.999;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kNearPlane = 0.01;
inline constexpr double kDepthNormEps = 1e-8;
inline constexpr int kTileSize = 16;
// A pixel stops accumulating once its transmittance falls below this; the
// omitted mass is bounded by the same value.
inline constexpr double kTransmittanceFloor = 1e-7;

struct Splat2D {
    Vec2 mean2d;
    Mat2 cov2d;
    // Upper triangle (a, b, c) of the inverse covariance.
    Vec3 conic;
    double z = 0.0;
    double opacity = 0.0;
    Vec3 color;
    int source_index = 0;
    // Half extents of the region where alpha can reach kAlphaMin, in pixels.
    Vec2 extent;
    // Inclusive pixel bounds clipped to the image.
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

// EWA projection. Returns nullopt when the Gaussian is behind the near plane,
// too transparent to ever reach kAlphaMin, or entirely off-screen.
std::optional<Splat2D> project_gaussian(const Gaussian3D &g, const Camera &cam, int source_index = 0);

// Per-pixel alpha of a projected splat at a continuous pixel location, before
// the kAlphaMin cutoff.
double splat_alpha(const Splat2D &s, const Vec2 &pixel);

struct RenderOutput {
    Image color;        // 3 channels, premultiplied
    Image alpha;        // 1 channel
    Image depth_premul; // 1 channel
    Image depth_norm;   // 1 channel, depth_premul / max(alpha, eps)
};

// Adjoint of a scalar functional with respect to the render outputs. Empty
// images are treated as zero.
struct RenderAdjoint {
    Image color;
    Image alpha;
    Image depth_premul;

    static RenderAdjoint zeros(int width, int height);
};

// Forward state retained for the backward pass.
struct RasterState {
    Camera camera;
    std::vector<Splat2D> splats; // sorted front to back
    int tiles_x = 0, tiles_y = 0;
    std::vector<int> tile_offsets; // size tiles_x * tiles_y + 1
    std::vector<int> tile_entries; // indices into `splats`
    std::vector<double> final_transmittance;
    // Front-to-back list of the entries that contributed to each pixel, with
    // their unclamped opacity * exp(power). Pixel p in tile t owns
    // tile_contributions[t][contribution_begin[p] .. contribution_end[p]).
    struct Contribution {
        int entry;
        double gauss;
    };
    std::vector<std::vector<Contribution>> tile_contributions;
    std::vector<std::size_t> contribution_begin;
    std::vector<std::size_t> contribution_end;
    RenderOutput output;
};

// Throws SingularCovariance if a projected covariance degenerates.
RasterState rasterize(const GaussianSet &gs, const Camera &cam);

inline RenderOutput render(const GaussianSet &gs, const Camera &cam) {
    return rasterize(gs, cam).output;
}

// Gradient of the functional described by `adjoint` with respect to every
// Gaussian parameter. The result has one entry per Gaussian in `gs`.
std::vector<Gaussian3D> render_backward(const GaussianSet &gs, const RasterState &state,
                                        const RenderAdjoint &adjoint);

std::vector<Gaussian3D> render_backward(const GaussianSet &gs, const Camera &cam,
                                        const RenderAdjoint &adjoint);

// Routes an adjoint on depth_norm into the alpha and depth_premul adjoints.
// With `detach_denominator` the alpha in the denominator is treated as constant.
void depth_norm_backward(const RenderOutput &out, const Image &d_depth_norm, RenderAdjoint &adjoint,
                         bool detach_denominator = false);

} // namespace splatterlab
