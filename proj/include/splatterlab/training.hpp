// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// Direct multi-view fitting of a splatter image: ROI mapping, decode, colour
// sampling, depth-based scale correction, transform to the source frame,
// rendering of every supervision view, and an adaptive-moment update.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "splatterlab/losses.hpp"
#include "splatterlab/rasterizer.hpp"
#include "splatterlab/roi.hpp"
#include "splatterlab/splatter.hpp"
#include "splatterlab/synthgen.hpp"

namespace splatterlab {

inline constexpr double kOverlapAlphaThreshold = 0.5;

struct ScaleCorrection {
    double s = 1.0;
    Vec3 pivot = Vec3::Zero();
    int overlap_count = 0;
};

// Least-squares scale between rendered and ground-truth depth over pixels with
// alpha_pred > 0.5, mask_gt > 0.5 and a valid (positive) ground-truth depth.
// Throws EmptyOverlap when no pixel qualifies.
ScaleCorrection solve_scale(const Image &depth_pred, const Image &alpha_pred, const Image &depth_gt,
                            const Image &mask_gt);

// d s / d depth_pred scaled by `d_s`. The overlap set is piecewise constant and
// carries no gradient.
Image solve_scale_backward(const Image &depth_pred, const Image &alpha_pred, const Image &depth_gt,
                           const Image &mask_gt, const ScaleCorrection &corr, double d_s);

// Similarity about the pivot: means move radially by s, scales multiply by s.
GaussianSet apply_scale(const GaussianSet &gs, const ScaleCorrection &corr);

struct ApplyScaleGrad {
    std::vector<Gaussian3D> d_gaussians;
    double d_s = 0.0;
};
ApplyScaleGrad apply_scale_backward(const GaussianSet &gs, const ScaleCorrection &corr,
                                    const std::vector<Gaussian3D> &d_out);

// Uniform shift of up to magnitude * size per axis and size factor in
// [1 - magnitude, 1 + magnitude].
FaceBox perturb_face_box(const FaceBox &box, double magnitude, std::uint64_t seed);

struct FitConfig {
    int iterations = 2000;
    double step_size = 1e-2;
    double final_step_size = 1e-3;
    LossWeights weights;
    DecodeConfig decode;
    int layers = 2;
    int grid_size = 64;
    bool jitter_pairing = true;
    double perturbation = 0.02;
    // Composite renders and targets over a fresh random colour every iteration.
    bool random_background = true;
    std::uint64_t seed = 0;
    bool detach_depth_denominator = false;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    // Image-pair term weighted by lambda_p; defaults to the pyramid surrogate.
    ImagePairLoss perceptual;

    void validate() const;
    double step_at(int iteration) const;
};

nlohmann::json fit_config_to_json(const FitConfig &cfg);
// Unknown keys are rejected. Nested "weights" and "decode" objects are accepted.
FitConfig fit_config_from_json(const nlohmann::json &j);

// Everything that depends on the face box: the ROI mapping, the camera the
// grid is decoded against, and the input image warped into the ROI.
struct RoiInput {
    FaceBox box;
    RoiMapping mapping;
    Camera frame_camera;
    Image roi_image;
};

RoiInput prepare_roi_input(const MultiViewSample &sample, const FaceBox &box, int grid_size);

// Forward pipeline for one ROI input: decode, colour sampling, transform to the
// source frame and scale correction.
struct Reconstruction {
    GaussianSet decoded;
    GaussianSet sampled;
    GaussianSet source;
    GaussianSet final;
    RasterState depth_state;
    ScaleCorrection scale;
    bool scale_valid = false;
};

Reconstruction reconstruct(const SplatterImage &grid, const MultiViewSample &sample, const RoiInput &roi,
                           const DecodeConfig &decode);

struct ObjectiveResult {
    LossBreakdown loss;
    std::vector<double> grad; // same layout as SplatterImage::raw; empty when not requested
    ScaleCorrection scale;
    bool scale_valid = true;
};

// Total training loss of a grid on one sample, optionally paired with a twin
// ROI input for the stability term. Supervision covers the input view followed
// by every supervision view, each composited over the sample background.
class FitObjective {
public:
    FitObjective(const MultiViewSample &sample, const FitConfig &cfg);

    // `background` overrides the sample background for both renders and targets.
    ObjectiveResult evaluate(const SplatterImage &grid, const RoiInput &primary, const RoiInput *twin,
                             bool with_grad, const Vec3 *background = nullptr) const;

    const std::vector<Camera> &cameras() const { return cameras_; }
    const std::vector<Image> &targets() const { return targets_; }

private:
    const MultiViewSample &sample_;
    FitConfig cfg_;
    std::vector<Camera> cameras_;
    std::vector<Image> targets_;
};

struct FitResult {
    SplatterImage grid;
    std::vector<LossBreakdown> trace; // entry i is the loss before update i; the last is post-training
    GaussianSet final_gaussians;
    ScaleCorrection final_scale;
    int empty_overlap_iterations = 0;
};

using FitProgress = std::function<void(int iteration, const LossBreakdown &)>;

// Throws NonFiniteLoss with the failing iteration index.
FitResult fit(const MultiViewSample &sample, const FitConfig &cfg, const FitProgress &progress = {});

// Initial grid used by fit for this sample and configuration.
SplatterImage initial_grid(const MultiViewSample &sample, const FitConfig &cfg);

// Renders `gs` in `cam` composited over `bg`.
Image render_composited(const GaussianSet &gs, const Camera &cam, const Vec3 &bg);

Image target_composited(const View &view, const Vec3 &bg);

} // namespace splatterlab
