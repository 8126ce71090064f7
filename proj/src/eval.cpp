// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/eval.hpp"

#include <algorithm>
#include <cmath>

#include "splatterlab/random.hpp"
#include "splatterlab/rasterizer.hpp"

namespace splatterlab {

namespace {

Image luma(const Image &img) {
    Image out(img.width, img.height, 1);
    for (std::size_t p = 0; p < img.pixel_count(); ++p)
        out.data[p] = 0.299 * img.data[p * 3] + 0.587 * img.data[p * 3 + 1] + 0.114 * img.data[p * 3 + 2];
    return out;
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size) * size);
    const double c = 0.5 * (size - 1);
    double sum = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double v = std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2.0 * sigma * sigma));
            w[y * size + x] = v;
            sum += v;
        }
    for (double &v : w) v /= sum;
    return w;
}

} // namespace

double psnr(const Image &x, const Image &y, const Image *mask) {
    if (!x.same_shape(y) || x.channels != 3)
        throw Error(ErrorCode::DimensionMismatch, "psnr needs two equal-size 3-channel images");
    if (mask && (!mask->same_size(x) || mask->channels != 1))
        throw Error(ErrorCode::DimensionMismatch, "psnr mask must be a matching 1-channel image");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < x.pixel_count(); ++p) {
        if (mask && !(mask->data[p] > 0.5)) continue;
        for (int c = 0; c < 3; ++c) {
            const double d = x.data[p * 3 + c] - y.data[p * 3 + c];
            sum += d * d;
        }
        n += 3;
    }
    if (n == 0) throw Error(ErrorCode::EmptyMask, "psnr mask selects no pixel");
    const double mse = sum / static_cast<double>(n);
    if (mse < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image &x, const Image &y) {
    if (!x.same_shape(y) || x.channels != 3)
        throw Error(ErrorCode::DimensionMismatch, "ssim needs two equal-size 3-channel images");
    const Image a = luma(x), b = luma(y);
    int size = std::min({11, a.width, a.height});
    if (size % 2 == 0) --size;
    const std::vector<double> w = gaussian_window(size, 1.5);
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    const int nx = a.width - size + 1, ny = a.height - size + 1;
    double total = 0.0;
    for (int y0 = 0; y0 < ny; ++y0)
        for (int x0 = 0; x0 < nx; ++x0) {
            double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
            for (int v = 0; v < size; ++v)
                for (int u = 0; u < size; ++u) {
                    const double k = w[v * size + u];
                    const double pa = a.at(x0 + u, y0 + v), pb = b.at(x0 + u, y0 + v);
                    ma += k * pa;
                    mb += k * pb;
                    saa += k * pa * pa;
                    sbb += k * pb * pb;
                    sab += k * pa * pb;
                }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    return total / (static_cast<double>(nx) * ny);
}

double jitter_metric(const std::vector<std::vector<Image>> &gt, const std::vector<std::vector<Image>> &rd) {
    if (gt.size() != rd.size() || gt.empty())
        throw Error(ErrorCode::ShapeMismatch, "jitter metric needs matching, non-empty view lists");
    double total = 0.0;
    for (std::size_t v = 0; v < gt.size(); ++v) {
        if (gt[v].size() != rd[v].size() || gt[v].size() < 2)
            throw Error(ErrorCode::ShapeMismatch, "each view needs the same number (>= 2) of frames");
        double view_sum = 0.0;
        for (std::size_t t = 1; t < gt[v].size(); ++t) {
            const Image &i0 = gt[v][t - 1], &i1 = gt[v][t], &r0 = rd[v][t - 1], &r1 = rd[v][t];
            if (!i0.same_shape(i1) || !i0.same_shape(r0) || !i0.same_shape(r1))
                throw Error(ErrorCode::ShapeMismatch, "jitter frames differ in shape");
            double frame_sum = 0.0;
            for (std::size_t p = 0; p < i0.pixel_count(); ++p) {
                double sq = 0.0;
                for (int c = 0; c < i0.channels; ++c) {
                    const std::size_t k = p * i0.channels + c;
                    const double d = (i1.data[k] - i0.data[k]) - (r1.data[k] - r0.data[k]);
                    sq += d * d;
                }
                frame_sum += std::sqrt(sq);
            }
            view_sum += frame_sum / static_cast<double>(i0.pixel_count());
        }
        total += view_sum / static_cast<double>(gt[v].size() - 1);
    }
    return total / static_cast<double>(gt.size());
}

GeometryRender geometry_render(const GaussianSet &gs, const Camera &cam) {
    GaussianSet inflated(gs.items);
    for (auto &g : inflated.items) g.scales *= kGeometryScaleInflation;
    const RenderOutput out = render(inflated, cam);

    const int w = cam.width, h = cam.height;
    std::vector<Vec3> points(static_cast<std::size_t>(w) * h);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const Vec2 n = (Vec2(j + 0.5, i + 0.5) - cam.principal_point) / cam.focal;
            points[i * w + j] = out.depth_norm.at(j, i) * Vec3(n.x(), n.y(), 1.0);
        }
    auto valid = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && out.alpha.at(x, y) > 0.5; };
    auto tangent = [&](int x, int y, int dx, int dy) -> Vec3 {
        const bool fwd = valid(x + dx, y + dy), bwd = valid(x - dx, y - dy);
        const Vec3 &p = points[y * w + x];
        if (fwd && bwd) return points[(y + dy) * w + x + dx] - points[(y - dy) * w + x - dx];
        if (fwd) return points[(y + dy) * w + x + dx] - p;
        if (bwd) return p - points[(y - dy) * w + x - dx];
        return Vec3::Zero();
    };

    GeometryRender g{Image(w, h, 1), out.alpha, Image(w, h, 3)};
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double a = out.alpha.at(j, i);
            if (!(a > 0.0)) continue;
            const Vec3 &p = points[i * w + j];
            const Vec3 view_dir = p.norm() > 0.0 ? Vec3(p.normalized()) : Vec3(0.0, 0.0, 1.0);
            Vec3 n = tangent(j, i, 1, 0).cross(tangent(j, i, 0, 1));
            if (n.norm() < 1e-12) n = -view_dir;
            n.normalize();
            if (n.dot(view_dir) > 0.0) n = -n;
            for (int c = 0; c < 3; ++c) g.normals.at(j, i, c) = n[c];
            const double facing = -n.z();
            g.shade.at(j, i) = a * std::clamp(kShadeLinear * facing + kShadeQuadratic * facing * facing, 0.0, 1.0);
        }
    return g;
}

nlohmann::json metrics_to_json(const MetricsReport &r) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto &v : r.views) views.push_back({{"name", v.name}, {"psnr", v.psnr}, {"ssim", v.ssim}});
    return {{"views", views},
            {"input_psnr", r.input_psnr},
            {"input_ssim", r.input_ssim},
            {"mean_heldout_psnr", r.mean_heldout_psnr},
            {"mean_heldout_ssim", r.mean_heldout_ssim},
            {"jitter", r.jitter},
            {"perceptual_term", "pyramid L1 surrogate (not a learned perceptual metric)"},
            {"config", r.config},
            {"renders", r.renders}};
}

MetricsReport evaluate_fit(const SplatterImage &grid, const MultiViewSample &sample, const FitConfig &cfg,
                           int jitter_draws, std::uint64_t eval_seed) {
    MetricsReport report;
    report.config = fit_config_to_json(cfg);
    const Vec3 &bg = sample.background;
    const RoiInput primary = prepare_roi_input(sample, sample.face_box, cfg.grid_size);
    const Reconstruction rec = reconstruct(grid, sample, primary, cfg.decode);

    std::vector<const View *> views{&sample.input};
    for (const View &v : sample.heldout) views.push_back(&v);
    std::vector<Image> targets(views.size());
    report.views.resize(views.size());
#pragma omp parallel for schedule(dynamic)
    for (int v = 0; v < static_cast<int>(views.size()); ++v) {
        targets[v] = target_composited(*views[v], bg);
        const Image rd = render_composited(rec.final, views[v]->camera, bg);
        report.views[v] = {v == 0 ? "input" : "heldout_" + std::to_string(v - 1), psnr(rd, targets[v]),
                           ssim(rd, targets[v])};
    }
    report.input_psnr = report.views[0].psnr;
    report.input_ssim = report.views[0].ssim;
    if (views.size() > 1) {
        for (std::size_t v = 1; v < views.size(); ++v) {
            report.mean_heldout_psnr += report.views[v].psnr;
            report.mean_heldout_ssim += report.views[v].ssim;
        }
        report.mean_heldout_psnr /= static_cast<double>(views.size() - 1);
        report.mean_heldout_ssim /= static_cast<double>(views.size() - 1);
    }

    if (jitter_draws >= 2) {
        std::vector<std::vector<Image>> gt(views.size()), rd(views.size(), std::vector<Image>(jitter_draws));
        for (std::size_t v = 0; v < views.size(); ++v) gt[v].assign(jitter_draws, targets[v]);
        for (int f = 0; f < jitter_draws; ++f) {
            const FaceBox box = perturb_face_box(sample.face_box, kJitterEvalPerturbation, mix_seed(eval_seed, f, 0xE));
            const RoiInput roi = prepare_roi_input(sample, box, cfg.grid_size);
            const Reconstruction r = reconstruct(grid, sample, roi, cfg.decode);
#pragma omp parallel for schedule(dynamic)
            for (int v = 0; v < static_cast<int>(views.size()); ++v)
                rd[v][f] = render_composited(r.final, views[v]->camera, bg);
        }
        report.jitter = jitter_metric(gt, rd);
    }
    return report;
}

} // namespace splatterlab
