// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace splatterlab {

namespace {

struct ProjectionJacobian {
    Eigen::Matrix<double, 2, 3> j;
    Vec3 t;
};

ProjectionJacobian projection_jacobian(const Camera &cam, const Vec3 &mean) {
    ProjectionJacobian out;
    out.t = cam.to_camera(mean);
    const double f = cam.focal, tx = out.t.x(), ty = out.t.y(), tz = out.t.z();
    out.j << f / tz, 0.0, -f * tx / (tz * tz),
             0.0, f / tz, -f * ty / (tz * tz);
    return out;
}

// Per-entry gradient record produced by the per-pixel backward loop.
struct SplatGrad {
    double d_mean2d[2] = {0.0, 0.0};
    double d_conic[3] = {0.0, 0.0, 0.0};
    double d_opacity = 0.0;
    double d_color[3] = {0.0, 0.0, 0.0};
    double d_z = 0.0;

    void add(const SplatGrad &o) {
        for (int k = 0; k < 2; ++k) d_mean2d[k] += o.d_mean2d[k];
        for (int k = 0; k < 3; ++k) d_conic[k] += o.d_conic[k];
        d_opacity += o.d_opacity;
        for (int k = 0; k < 3; ++k) d_color[k] += o.d_color[k];
        d_z += o.d_z;
    }
};

// Compact copy of the fields the per-pixel loops read.
struct PixelSplat {
    double mx, my;
    double ca, cb, cc;
    double opacity;
    // alpha < kAlphaMin exactly when power < cutoff.
    double cutoff;
    double r, g, b, z;
    int x0, x1, y0, y1;
};

std::vector<PixelSplat> pixel_splats(const std::vector<Splat2D> &splats) {
    std::vector<PixelSplat> out(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const Splat2D &s = splats[i];
        out[i] = {s.mean2d.x(), s.mean2d.y(), s.conic[0], s.conic[1], s.conic[2], s.opacity,
                  std::log(kAlphaMin / s.opacity), s.color[0], s.color[1], s.color[2], s.z,
                  s.x0, s.x1, s.y0, s.y1};
    }
    return out;
}

inline double adjoint_at(const Image &img, std::size_t idx) { return img.data.empty() ? 0.0 : img.data[idx]; }

} // namespace

std::optional<Splat2D> project_gaussian(const Gaussian3D &g, const Camera &cam, int source_index) {
    const Vec3 t = cam.to_camera(g.mean);
    if (!(t.z() > kNearPlane)) return std::nullopt;
    if (!(g.opacity * 255.0 > 1.0)) return std::nullopt;

    const ProjectionJacobian pj = projection_jacobian(cam, g.mean);
    const Mat3 w = cam.rotation.transpose();
    const Mat3 cov_cam = w * compose_covariance(g.rotation, g.scales) * w.transpose();

    Splat2D s;
    s.mean2d = cam.principal_point + cam.focal * Vec2(t.x() / t.z(), t.y() / t.z());
    s.cov2d = pj.j * cov_cam * pj.j.transpose() + kLowPassDilation * kLowPassDilation * Mat2::Identity();
    const double det = s.cov2d.determinant();
    if (!(det >= 1e-12)) {
        throw Error(ErrorCode::SingularCovariance,
                    "projected covariance determinant " + std::to_string(det) + " for Gaussian " +
                        std::to_string(source_index));
    }
    s.conic = Vec3(s.cov2d(1, 1) / det, -s.cov2d(0, 1) / det, s.cov2d(0, 0) / det);
    s.z = t.z();
    s.opacity = g.opacity;
    s.color = g.color;
    s.source_index = source_index;

    // alpha >= kAlphaMin requires the Mahalanobis radius to stay below m.
    const double m = std::sqrt(2.0 * std::log(255.0 * g.opacity));
    s.extent = Vec2(m * std::sqrt(s.cov2d(0, 0)), m * std::sqrt(s.cov2d(1, 1)));
    if (!std::isfinite(s.mean2d.x()) || !std::isfinite(s.mean2d.y())) return std::nullopt;

    // Pixel centers sit at integer + 0.5; one pixel of slack absorbs rounding.
    const double fx0 = std::ceil(s.mean2d.x() - s.extent.x() - 0.5) - 1.0;
    const double fx1 = std::floor(s.mean2d.x() + s.extent.x() - 0.5) + 1.0;
    const double fy0 = std::ceil(s.mean2d.y() - s.extent.y() - 0.5) - 1.0;
    const double fy1 = std::floor(s.mean2d.y() + s.extent.y() - 0.5) + 1.0;
    if (fx1 < 0.0 || fy1 < 0.0 || fx0 > cam.width - 1.0 || fy0 > cam.height - 1.0) return std::nullopt;
    s.x0 = static_cast<int>(std::max(0.0, fx0));
    s.x1 = static_cast<int>(std::min<double>(cam.width - 1, fx1));
    s.y0 = static_cast<int>(std::max(0.0, fy0));
    s.y1 = static_cast<int>(std::min<double>(cam.height - 1, fy1));
    return s;
}

double splat_alpha(const Splat2D &s, const Vec2 &pixel) {
    const double dx = pixel.x() - s.mean2d.x();
    const double dy = pixel.y() - s.mean2d.y();
    const double power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
    return std::min(kAlphaCap, s.opacity * std::exp(power));
}

RenderAdjoint RenderAdjoint::zeros(int width, int height) {
    return {Image(width, height, 3), Image(width, height, 1), Image(width, height, 1)};
}

RasterState rasterize(const GaussianSet &gs, const Camera &cam) {
    RasterState st;
    st.camera = cam;
    const int w = cam.width, h = cam.height;

    for (std::size_t i = 0; i < gs.items.size(); ++i) {
        if (auto s = project_gaussian(gs.items[i], cam, static_cast<int>(i))) st.splats.push_back(*s);
    }
    std::sort(st.splats.begin(), st.splats.end(), [](const Splat2D &a, const Splat2D &b) {
        if (a.z != b.z) return a.z < b.z;
        return a.source_index < b.source_index;
    });

    st.tiles_x = (w + kTileSize - 1) / kTileSize;
    st.tiles_y = (h + kTileSize - 1) / kTileSize;
    const int tile_count = st.tiles_x * st.tiles_y;
    std::vector<int> counts(tile_count, 0);
    for (const auto &s : st.splats)
        for (int ty = s.y0 / kTileSize; ty <= s.y1 / kTileSize; ++ty)
            for (int tx = s.x0 / kTileSize; tx <= s.x1 / kTileSize; ++tx) ++counts[ty * st.tiles_x + tx];
    st.tile_offsets.assign(tile_count + 1, 0);
    std::partial_sum(counts.begin(), counts.end(), st.tile_offsets.begin() + 1);
    st.tile_entries.resize(st.tile_offsets.back());
    std::vector<int> cursor(st.tile_offsets.begin(), st.tile_offsets.end() - 1);
    for (int si = 0; si < static_cast<int>(st.splats.size()); ++si) {
        const auto &s = st.splats[si];
        for (int ty = s.y0 / kTileSize; ty <= s.y1 / kTileSize; ++ty)
            for (int tx = s.x0 / kTileSize; tx <= s.x1 / kTileSize; ++tx)
                st.tile_entries[cursor[ty * st.tiles_x + tx]++] = si;
    }

    RenderOutput &out = st.output;
    out.color = Image(w, h, 3);
    out.alpha = Image(w, h, 1);
    out.depth_premul = Image(w, h, 1);
    out.depth_norm = Image(w, h, 1);
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    st.final_transmittance.assign(npix, 1.0);
    st.contribution_begin.assign(npix, 0);
    st.contribution_end.assign(npix, 0);
    st.tile_contributions.assign(tile_count, {});
    const std::vector<PixelSplat> hot = pixel_splats(st.splats);

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < tile_count; ++tile) {
        const int tx = tile % st.tiles_x, ty = tile / st.tiles_x;
        const int begin = st.tile_offsets[tile], end = st.tile_offsets[tile + 1];
        auto &contribs = st.tile_contributions[tile];
        for (int y = ty * kTileSize; y < std::min(h, (ty + 1) * kTileSize); ++y) {
            for (int x = tx * kTileSize; x < std::min(w, (tx + 1) * kTileSize); ++x) {
                const double px = x + 0.5, py = y + 0.5;
                double t = 1.0, r = 0.0, g = 0.0, b = 0.0, a = 0.0, d = 0.0;
                const std::size_t first = contribs.size();
                for (int e = begin; e < end; ++e) {
                    const int si = st.tile_entries[e];
                    const PixelSplat &s = hot[si];
                    if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
                    const double dx = px - s.mx, dy = py - s.my;
                    const double power = -0.5 * (s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy);
                    if (power < s.cutoff) continue;
                    const double gauss = s.opacity * std::exp(power);
                    const double alpha = std::min(kAlphaCap, gauss);
                    contribs.push_back({e, gauss});
                    const double wgt = alpha * t;
                    r += s.r * wgt;
                    g += s.g * wgt;
                    b += s.b * wgt;
                    a += wgt;
                    d += s.z * wgt;
                    t *= 1.0 - alpha;
                    if (t < kTransmittanceFloor) break;
                }
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                out.color.data[p * 3 + 0] = r;
                out.color.data[p * 3 + 1] = g;
                out.color.data[p * 3 + 2] = b;
                out.alpha.data[p] = a;
                out.depth_premul.data[p] = d;
                out.depth_norm.data[p] = d / std::max(a, kDepthNormEps);
                st.final_transmittance[p] = t;
                st.contribution_begin[p] = first;
                st.contribution_end[p] = contribs.size();
            }
        }
    }

    return st;
}

std::vector<Gaussian3D> render_backward(const GaussianSet &gs, const RasterState &st,
                                        const RenderAdjoint &adj) {
    const Camera &cam = st.camera;
    const int w = cam.width, h = cam.height;
    const int tile_count = st.tiles_x * st.tiles_y;
    std::vector<SplatGrad> entry_grad(st.tile_entries.size());
    const std::vector<PixelSplat> hot = pixel_splats(st.splats);

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < tile_count; ++tile) {
        const int tx = tile % st.tiles_x, ty = tile / st.tiles_x;
        for (int y = ty * kTileSize; y < std::min(h, (ty + 1) * kTileSize); ++y) {
            for (int x = tx * kTileSize; x < std::min(w, (tx + 1) * kTileSize); ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                const double gc0 = adjoint_at(adj.color, p * 3), gc1 = adjoint_at(adj.color, p * 3 + 1),
                             gc2 = adjoint_at(adj.color, p * 3 + 2);
                const double g_alpha = adjoint_at(adj.alpha, p);
                const double g_depth = adjoint_at(adj.depth_premul, p);
                if (gc0 == 0.0 && gc1 == 0.0 && gc2 == 0.0 && g_alpha == 0.0 && g_depth == 0.0) continue;

                const double px = x + 0.5, py = y + 0.5;
                double t_after = st.final_transmittance[p];
                double behind = 0.0; // sum over later splats of value * weight
                const auto &contribs = st.tile_contributions[tile];
                const std::size_t c_begin = st.contribution_begin[p];
                for (std::size_t k = st.contribution_end[p]; k-- > c_begin;) {
                    const int e = contribs[k].entry;
                    const double gauss = contribs[k].gauss;
                    const PixelSplat &s = hot[st.tile_entries[e]];
                    const double dx = px - s.mx, dy = py - s.my;
                    const double alpha = std::min(kAlphaCap, gauss);

                    const double inv = 1.0 / (1.0 - alpha);
                    const double t = t_after * inv;
                    const double wgt = alpha * t;
                    const double value = gc0 * s.r + gc1 * s.g + gc2 * s.b + g_alpha + g_depth * s.z;
                    const double d_alpha = t * value - behind * inv;
                    behind += value * wgt;
                    t_after = t;

                    SplatGrad &rec = entry_grad[e];
                    rec.d_color[0] += gc0 * wgt;
                    rec.d_color[1] += gc1 * wgt;
                    rec.d_color[2] += gc2 * wgt;
                    rec.d_z += g_depth * wgt;
                    if (gauss >= kAlphaCap) continue;
                    rec.d_opacity += d_alpha * (gauss / s.opacity);
                    const double d_power = d_alpha * alpha;
                    rec.d_conic[0] += -0.5 * d_power * dx * dx;
                    rec.d_conic[1] += -d_power * dx * dy;
                    rec.d_conic[2] += -0.5 * d_power * dy * dy;
                    rec.d_mean2d[0] += d_power * (s.ca * dx + s.cb * dy);
                    rec.d_mean2d[1] += d_power * (s.cb * dx + s.cc * dy);
                }
            }
        }
    }

    // Fixed-order reduction keeps gradients bit-identical across thread counts.
    std::vector<SplatGrad> splat_grad(st.splats.size());
    for (std::size_t e = 0; e < st.tile_entries.size(); ++e) splat_grad[st.tile_entries[e]].add(entry_grad[e]);

    std::vector<Gaussian3D> grad(gs.items.size(), Gaussian3D::zero());
    const Mat3 w_rot = cam.rotation.transpose();
    const double f = cam.focal;
    for (std::size_t si = 0; si < st.splats.size(); ++si) {
        const Splat2D &s = st.splats[si];
        const SplatGrad &sg = splat_grad[si];
        const Gaussian3D &g = gs.items[s.source_index];
        Gaussian3D &out = grad[s.source_index];
        out.opacity += sg.d_opacity;
        out.color += Vec3(sg.d_color[0], sg.d_color[1], sg.d_color[2]);

        // conic -> cov2d
        const Mat2 q = s.cov2d.inverse();
        Mat2 d_q;
        d_q << sg.d_conic[0], 0.5 * sg.d_conic[1], 0.5 * sg.d_conic[1], sg.d_conic[2];
        const Mat2 d_cov2d = -q * d_q * q;

        const ProjectionJacobian pj = projection_jacobian(cam, g.mean);
        const Mat3 cov3d = compose_covariance(g.rotation, g.scales);
        const Mat3 cov_cam = w_rot * cov3d * w_rot.transpose();
        const Mat3 d_cov_cam = pj.j.transpose() * d_cov2d * pj.j;
        const Eigen::Matrix<double, 2, 3> d_j = (d_cov2d + d_cov2d.transpose()) * pj.j * cov_cam;
        const Mat3 d_cov3d = w_rot.transpose() * d_cov_cam * w_rot;
        const CovarianceGrad cg = compose_covariance_backward(g.rotation, g.scales, d_cov3d);
        out.rotation += cg.d_rotation;
        out.scales += cg.d_scales;

        const double tx = pj.t.x(), ty = pj.t.y(), tz = pj.t.z();
        const double tz2 = tz * tz, tz3 = tz2 * tz;
        Vec3 d_t = Vec3::Zero();
        d_t.x() += sg.d_mean2d[0] * f / tz;
        d_t.y() += sg.d_mean2d[1] * f / tz;
        d_t.z() += -sg.d_mean2d[0] * f * tx / tz2 - sg.d_mean2d[1] * f * ty / tz2 + sg.d_z;
        d_t.x() += d_j(0, 2) * (-f / tz2);
        d_t.y() += d_j(1, 2) * (-f / tz2);
        d_t.z() += d_j(0, 0) * (-f / tz2) + d_j(1, 1) * (-f / tz2) + d_j(0, 2) * (2.0 * f * tx / tz3) +
                   d_j(1, 2) * (2.0 * f * ty / tz3);
        out.mean += cam.rotation * d_t;
    }
    return grad;
}

std::vector<Gaussian3D> render_backward(const GaussianSet &gs, const Camera &cam, const RenderAdjoint &adjoint) {
    return render_backward(gs, rasterize(gs, cam), adjoint);
}

void depth_norm_backward(const RenderOutput &out, const Image &d_depth_norm, RenderAdjoint &adjoint,
                         bool detach_denominator) {
    const std::size_t n = out.alpha.pixel_count();
    if (adjoint.alpha.data.empty()) adjoint.alpha = Image(out.alpha.width, out.alpha.height, 1);
    if (adjoint.depth_premul.data.empty()) adjoint.depth_premul = Image(out.alpha.width, out.alpha.height, 1);
    for (std::size_t p = 0; p < n; ++p) {
        const double g = d_depth_norm.data[p];
        if (g == 0.0) continue;
        const double a = out.alpha.data[p];
        if (a > kDepthNormEps) {
            adjoint.depth_premul.data[p] += g / a;
            if (!detach_denominator) adjoint.alpha.data[p] -= g * out.depth_premul.data[p] / (a * a);
        } else {
            adjoint.depth_premul.data[p] += g / kDepthNormEps;
        }
    }
}

} // namespace splatterlab
