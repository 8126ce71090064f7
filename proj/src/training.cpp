// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/training.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "splatterlab/random.hpp"

namespace splatterlab {

namespace {

void require_same_size(const Image &a, const Image &b) {
    if (!a.same_size(b) || a.channels != 1 || b.channels != 1)
        throw Error(ErrorCode::DimensionMismatch, "depth/alpha/mask images must be equal-size single channel");
}

bool in_overlap(const Image &alpha_pred, const Image &depth_gt, const Image &mask_gt, std::size_t p) {
    return alpha_pred.data[p] > kOverlapAlphaThreshold && mask_gt.data[p] > 0.5 && depth_gt.data[p] > 0.0;
}

void add_into(std::vector<Gaussian3D> &acc, const std::vector<Gaussian3D> &d) {
    for (std::size_t n = 0; n < acc.size(); ++n) {
        acc[n].mean += d[n].mean;
        acc[n].rotation += d[n].rotation;
        acc[n].scales += d[n].scales;
        acc[n].opacity += d[n].opacity;
        acc[n].color += d[n].color;
    }
}

// One ROI input pushed through reconstruction and every supervision render.
struct BranchForward {
    const RoiInput *roi = nullptr;
    Reconstruction rec;
    std::vector<RasterState> views;
    std::vector<Image> composited;
};

} // namespace

ScaleCorrection solve_scale(const Image &depth_pred, const Image &alpha_pred, const Image &depth_gt,
                            const Image &mask_gt) {
    require_same_size(depth_pred, alpha_pred);
    require_same_size(depth_pred, depth_gt);
    require_same_size(depth_pred, mask_gt);
    double num = 0.0, den = 0.0;
    int count = 0;
    for (std::size_t p = 0; p < depth_pred.pixel_count(); ++p) {
        if (!in_overlap(alpha_pred, depth_gt, mask_gt, p)) continue;
        num += depth_pred.data[p] * depth_gt.data[p];
        den += depth_pred.data[p] * depth_pred.data[p];
        ++count;
    }
    if (count == 0 || !(den > 0.0)) throw Error(ErrorCode::EmptyOverlap, "no pixel in the depth overlap");
    ScaleCorrection out;
    out.s = num / den;
    out.overlap_count = count;
    return out;
}

Image solve_scale_backward(const Image &depth_pred, const Image &alpha_pred, const Image &depth_gt,
                           const Image &mask_gt, const ScaleCorrection &corr, double d_s) {
    Image grad(depth_pred.width, depth_pred.height, 1);
    double den = 0.0;
    for (std::size_t p = 0; p < depth_pred.pixel_count(); ++p)
        if (in_overlap(alpha_pred, depth_gt, mask_gt, p)) den += depth_pred.data[p] * depth_pred.data[p];
    if (!(den > 0.0)) return grad;
    for (std::size_t p = 0; p < depth_pred.pixel_count(); ++p)
        if (in_overlap(alpha_pred, depth_gt, mask_gt, p))
            grad.data[p] = d_s * (depth_gt.data[p] - 2.0 * corr.s * depth_pred.data[p]) / den;
    return grad;
}

GaussianSet apply_scale(const GaussianSet &gs, const ScaleCorrection &corr) {
    if (!(corr.s > 0.0)) throw Error(ErrorCode::NonPositiveScale, "scale " + std::to_string(corr.s));
    GaussianSet out(gs.items);
    for (auto &g : out.items) {
        g.mean = corr.pivot + corr.s * (g.mean - corr.pivot);
        g.scales *= corr.s;
    }
    return out;
}

ApplyScaleGrad apply_scale_backward(const GaussianSet &gs, const ScaleCorrection &corr,
                                    const std::vector<Gaussian3D> &d_out) {
    ApplyScaleGrad out;
    out.d_gaussians = d_out;
    for (std::size_t n = 0; n < gs.size(); ++n) {
        const Gaussian3D &g = gs.items[n];
        out.d_s += d_out[n].mean.dot(g.mean - corr.pivot) + d_out[n].scales.dot(g.scales);
        out.d_gaussians[n].mean = corr.s * d_out[n].mean;
        out.d_gaussians[n].scales = corr.s * d_out[n].scales;
    }
    return out;
}

FaceBox perturb_face_box(const FaceBox &box, double magnitude, std::uint64_t seed) {
    if (!(magnitude >= 0.0)) throw Error(ErrorCode::InvalidArgument, "perturbation magnitude must be >= 0");
    if (magnitude == 0.0) return box;
    Rng rng(seed);
    FaceBox out = box;
    out.center.x() += rng.uniform(-magnitude, magnitude) * box.size;
    out.center.y() += rng.uniform(-magnitude, magnitude) * box.size;
    out.size *= rng.uniform(1.0 - magnitude, 1.0 + magnitude);
    return out;
}

void FitConfig::validate() const {
    if (iterations < 1) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 1");
    if (!(step_size > 0.0) || !(final_step_size > 0.0))
        throw Error(ErrorCode::InvalidArgument, "step sizes must be positive");
    if (layers < 1 || grid_size < 2) throw Error(ErrorCode::InvalidArgument, "need K >= 1 and grid_size >= 2");
    if (!(perturbation >= 0.0)) throw Error(ErrorCode::InvalidArgument, "perturbation must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
        throw Error(ErrorCode::InvalidArgument, "invalid moment parameters");
    weights.validate();
    decode.validate();
}

double FitConfig::step_at(int iteration) const {
    const double t = iterations > 1 ? static_cast<double>(iteration) / (iterations - 1) : 0.0;
    return final_step_size + 0.5 * (step_size - final_step_size) * (1.0 + std::cos(std::numbers::pi * t));
}

nlohmann::json fit_config_to_json(const FitConfig &cfg) {
    return {{"iterations", cfg.iterations},
            {"step_size", cfg.step_size},
            {"final_step_size", cfg.final_step_size},
            {"weights", loss_weights_to_json(cfg.weights)},
            {"decode", decode_config_to_json(cfg.decode)},
            {"layers", cfg.layers},
            {"grid_size", cfg.grid_size},
            {"jitter_pairing", cfg.jitter_pairing},
            {"perturbation", cfg.perturbation},
            {"random_background", cfg.random_background},
            {"seed", cfg.seed},
            {"detach_depth_denominator", cfg.detach_depth_denominator},
            {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},
            {"adam_eps", cfg.adam_eps}};
}

FitConfig fit_config_from_json(const nlohmann::json &j) {
    FitConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string &k = it.key();
        const auto &v = it.value();
        if (k == "iterations") cfg.iterations = v.get<int>();
        else if (k == "step_size") cfg.step_size = v.get<double>();
        else if (k == "final_step_size") cfg.final_step_size = v.get<double>();
        else if (k == "weights") cfg.weights = loss_weights_from_json(v);
        else if (k == "decode") cfg.decode = decode_config_from_json(v);
        else if (k == "layers") cfg.layers = v.get<int>();
        else if (k == "grid_size") cfg.grid_size = v.get<int>();
        else if (k == "jitter_pairing") cfg.jitter_pairing = v.get<bool>();
        else if (k == "perturbation") cfg.perturbation = v.get<double>();
        else if (k == "random_background") cfg.random_background = v.get<bool>();
        else if (k == "seed") cfg.seed = v.get<std::uint64_t>();
        else if (k == "detach_depth_denominator") cfg.detach_depth_denominator = v.get<bool>();
        else if (k == "beta1") cfg.beta1 = v.get<double>();
        else if (k == "beta2") cfg.beta2 = v.get<double>();
        else if (k == "adam_eps") cfg.adam_eps = v.get<double>();
        else throw Error(ErrorCode::InvalidArgument, "unknown fit key '" + k + "'");
    }
    cfg.validate();
    return cfg;
}

Image target_composited(const View &view, const Vec3 &bg) { return composite_over_background(view.rgba, bg); }

Image render_composited(const GaussianSet &gs, const Camera &cam, const Vec3 &bg) {
    const RenderOutput out = render(gs, cam);
    return composite_over_background(out.color, out.alpha, bg);
}

RoiInput prepare_roi_input(const MultiViewSample &sample, const FaceBox &box, int grid_size) {
    RoiInput in;
    in.box = box;
    in.mapping = build_roi_camera(sample.input.camera, box, grid_size);
    in.frame_camera = roi_frame_camera(in.mapping, sample.input.camera);
    in.roi_image = warp_image(target_composited(sample.input, sample.background), in.mapping, grid_size);
    return in;
}

Reconstruction reconstruct(const SplatterImage &grid, const MultiViewSample &sample, const RoiInput &roi,
                           const DecodeConfig &decode_cfg) {
    Reconstruction rec;
    const Camera &src = sample.input.camera;
    rec.decoded = decode(grid, roi.frame_camera, decode_cfg);
    rec.sampled = direct_color_sample(rec.decoded, roi.roi_image, roi.frame_camera, decode_cfg);
    rec.source = gaussians_to_source_frame(rec.sampled, roi.mapping.cam_roi, src);
    rec.depth_state = rasterize(rec.source, src);
    try {
        rec.scale = solve_scale(rec.depth_state.output.depth_norm, rec.depth_state.output.alpha,
                                sample.input.depth, sample.input.mask);
        rec.scale_valid = true;
    } catch (const Error &e) {
        if (e.code() != ErrorCode::EmptyOverlap) throw;
        rec.scale = ScaleCorrection{};
        rec.scale_valid = false;
    }
    rec.scale.pivot = src.center;
    rec.final = apply_scale(rec.source, rec.scale);
    return rec;
}

FitObjective::FitObjective(const MultiViewSample &sample, const FitConfig &cfg) : sample_(sample), cfg_(cfg) {
    cameras_.push_back(sample.input.camera);
    targets_.push_back(target_composited(sample.input, sample.background));
    for (const View &v : sample.supervision) {
        cameras_.push_back(v.camera);
        targets_.push_back(target_composited(v, sample.background));
    }
    if (!cfg_.perceptual) cfg_.perceptual = loss_perceptual_surrogate;
}

ObjectiveResult FitObjective::evaluate(const SplatterImage &grid, const RoiInput &primary, const RoiInput *twin,
                                       bool with_grad, const Vec3 *background) const {
    const LossWeights &w = cfg_.weights;
    const int n_views = static_cast<int>(cameras_.size());
    const Vec3 &bg = background ? *background : sample_.background;
    std::vector<Image> recomposited;
    if (background) {
        recomposited.push_back(target_composited(sample_.input, bg));
        for (const View &v : sample_.supervision) recomposited.push_back(target_composited(v, bg));
    }
    const std::vector<Image> &targets = background ? recomposited : targets_;

    std::vector<BranchForward> branches(twin ? 2 : 1);
    branches[0].roi = &primary;
    if (twin) branches[1].roi = twin;
    for (auto &b : branches) {
        b.rec = reconstruct(grid, sample_, *b.roi, cfg_.decode);
        b.views.resize(n_views);
        b.composited.resize(n_views);
    }

    const int jobs = n_views * static_cast<int>(branches.size());
#pragma omp parallel for schedule(dynamic)
    for (int job = 0; job < jobs; ++job) {
        BranchForward &b = branches[job / n_views];
        const int v = job % n_views;
        b.views[v] = rasterize(b.rec.final, cameras_[v]);
        b.composited[v] = composite_over_background(b.views[v].output.color, b.views[v].output.alpha, bg);
    }

    // Data term on the primary branch.
    std::vector<ImageLoss> eucl(n_views), perc(n_views);
#pragma omp parallel for schedule(static)
    for (int v = 0; v < n_views; ++v) {
        eucl[v] = loss_euclidean_rgb(branches[0].composited[v], targets[v]);
        perc[v] = cfg_.perceptual(branches[0].composited[v], targets[v]);
    }

    LossBreakdown parts;
    for (int v = 0; v < n_views; ++v) {
        parts.L_e += eucl[v].value / n_views;
        parts.L_p += perc[v].value / n_views;
    }
    parts.L_d = parts.L_e + w.lambda_p * parts.L_p;

    const std::vector<double> layer_means = layer_mean_opacity(branches[0].rec.decoded, grid.layers);
    const VectorLoss lm = loss_opacity_mean(layer_means, w.tau);
    const VectorLoss ls = loss_opacity_bias(layer_means);
    parts.L_m = lm.value;
    parts.L_sigma = ls.value;

    ScalarLoss lc;
    if (branches[0].rec.scale_valid) lc = loss_scale_reg(branches[0].rec.scale.s);
    parts.L_c = lc.value;

    PairListLoss lj;
    if (twin) {
        lj = loss_jitter(branches[0].composited, branches[1].composited);
        parts.L_j = lj.value;
    }

    ObjectiveResult result;
    result.loss = total_loss(parts, w);
    result.scale = branches[0].rec.scale;
    result.scale_valid = branches[0].rec.scale_valid;
    if (!with_grad) return result;

    // Per-view image adjoints on the composited renders.
    std::vector<std::vector<Image>> d_comp(branches.size(), std::vector<Image>(n_views));
    for (int v = 0; v < n_views; ++v) {
        Image g = eucl[v].grad;
        for (std::size_t i = 0; i < g.data.size(); ++i)
            g.data[i] = (g.data[i] + w.lambda_p * perc[v].grad.data[i]) / n_views;
        if (twin && w.lambda_j != 0.0) {
            Image gt(g.width, g.height, 3);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                g.data[i] += w.lambda_j * lj.grad_a[v].data[i];
                gt.data[i] = -w.lambda_j * lj.grad_a[v].data[i];
            }
            d_comp[1][v] = std::move(gt);
        }
        d_comp[0][v] = std::move(g);
    }

    std::vector<std::vector<std::vector<Gaussian3D>>> d_view(branches.size(),
                                                             std::vector<std::vector<Gaussian3D>>(n_views));
#pragma omp parallel for schedule(dynamic)
    for (int job = 0; job < jobs; ++job) {
        const int bi = job / n_views;
        const int v = job % n_views;
        if (d_comp[bi][v].data.empty()) continue;
        const BranchForward &b = branches[bi];
        RenderAdjoint adj;
        composite_backward(d_comp[bi][v], bg, adj.color, adj.alpha);
        d_view[bi][v] = render_backward(b.rec.final, b.views[v], adj);
    }

    result.grad.assign(grid.raw.size(), 0.0);
    for (std::size_t bi = 0; bi < branches.size(); ++bi) {
        const BranchForward &b = branches[bi];
        std::vector<Gaussian3D> d_final(b.rec.final.size(), Gaussian3D::zero());
        for (int v = 0; v < n_views; ++v)
            if (!d_view[bi][v].empty()) add_into(d_final, d_view[bi][v]);

        ApplyScaleGrad asg = apply_scale_backward(b.rec.source, b.rec.scale, d_final);
        std::vector<Gaussian3D> d_source = std::move(asg.d_gaussians);
        if (b.rec.scale_valid) {
            double d_s = asg.d_s;
            if (bi == 0) d_s += w.lambda_c * lc.grad;
            const RenderOutput &dout = b.rec.depth_state.output;
            const Image d_depth = solve_scale_backward(dout.depth_norm, dout.alpha, sample_.input.depth,
                                                       sample_.input.mask, b.rec.scale, d_s);
            RenderAdjoint adj = RenderAdjoint::zeros(dout.alpha.width, dout.alpha.height);
            depth_norm_backward(dout, d_depth, adj, cfg_.detach_depth_denominator);
            add_into(d_source, render_backward(b.rec.source, b.rec.depth_state, adj));
        }

        const Camera &src = sample_.input.camera;
        std::vector<Gaussian3D> d_sampled = gaussians_to_source_frame_backward(b.roi->mapping.cam_roi, src, d_source);
        std::vector<Gaussian3D> d_decoded = direct_color_sample_backward(b.rec.decoded, b.roi->roi_image,
                                                                         b.roi->frame_camera, cfg_.decode, d_sampled);
        if (bi == 0) {
            std::vector<double> d_means(layer_means.size());
            for (std::size_t k = 0; k < d_means.size(); ++k)
                d_means[k] = w.lambda_m * lm.grad[k] + w.lambda_sigma * ls.grad[k];
            layer_mean_opacity_backward(d_means, grid.layers, d_decoded);
        }
        const std::vector<double> d_raw = decode_backward(grid, b.roi->frame_camera, cfg_.decode, d_decoded);
        for (std::size_t i = 0; i < d_raw.size(); ++i) result.grad[i] += d_raw[i];
    }
    return result;
}

SplatterImage initial_grid(const MultiViewSample &sample, const FitConfig &cfg) {
    const RoiMapping mapping = build_roi_camera(sample.input.camera, sample.face_box, cfg.grid_size);
    return init_params(cfg.grid_size, cfg.grid_size, cfg.layers, mix_seed(cfg.seed, 0x1), mapping.cam_roi.focal,
                       cfg.decode);
}

FitResult fit(const MultiViewSample &sample, const FitConfig &cfg, const FitProgress &progress) {
    cfg.validate();
    const FitObjective objective(sample, cfg);
    const RoiInput primary = prepare_roi_input(sample, sample.face_box, cfg.grid_size);

    FitResult result;
    result.grid = initial_grid(sample, cfg);
    std::vector<double> m1(result.grid.raw.size(), 0.0), m2(result.grid.raw.size(), 0.0);
    double b1_pow = 1.0, b2_pow = 1.0;

    auto evaluate_at = [&](int it, bool with_grad) {
        std::optional<RoiInput> twin;
        if (cfg.jitter_pairing)
            twin = prepare_roi_input(sample, perturb_face_box(sample.face_box, cfg.perturbation,
                                                              mix_seed(cfg.seed, static_cast<std::uint64_t>(it), 0xC)),
                                     cfg.grid_size);
        Vec3 bg = sample.background;
        if (cfg.random_background) {
            Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(it), 0xB6));
            bg = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        }
        try {
            return objective.evaluate(result.grid, primary, twin ? &*twin : nullptr, with_grad, &bg);
        } catch (const Error &e) {
            if (e.code() != ErrorCode::NonFiniteLoss) throw;
            throw Error(ErrorCode::NonFiniteLoss, "at iteration " + std::to_string(it));
        }
    };

    for (int it = 0; it < cfg.iterations; ++it) {
        const ObjectiveResult r = evaluate_at(it, true);
        if (!r.scale_valid) ++result.empty_overlap_iterations;
        result.trace.push_back(r.loss);
        if (progress) progress(it, r.loss);

        b1_pow *= cfg.beta1;
        b2_pow *= cfg.beta2;
        const double lr = cfg.step_at(it);
        for (std::size_t i = 0; i < m1.size(); ++i) {
            const double g = r.grad[i];
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
            const double mh = m1[i] / (1.0 - b1_pow);
            const double vh = m2[i] / (1.0 - b2_pow);
            result.grid.raw[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
        }
    }

    const ObjectiveResult last = evaluate_at(cfg.iterations, false);
    if (!last.scale_valid) ++result.empty_overlap_iterations;
    result.trace.push_back(last.loss);
    if (progress) progress(cfg.iterations, last.loss);

    const Reconstruction rec = reconstruct(result.grid, sample, primary, cfg.decode);
    result.final_gaussians = rec.final;
    result.final_scale = rec.scale;
    return result;
}

} // namespace splatterlab
