// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// Training objective terms. Every image loss returns its value together with
// the gradient with respect to the first argument.

#pragma once

#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "splatterlab/core.hpp"

namespace splatterlab {

struct LossWeights {
    double lambda_p = 0.5;
    double lambda_m = 5.0;
    double tau = 50.0;
    double lambda_sigma = 1e-4;
    double lambda_c = 1.0;
    double lambda_j = 1.0;

    void validate() const;
};

nlohmann::json loss_weights_to_json(const LossWeights &w);
LossWeights loss_weights_from_json(const nlohmann::json &j);

struct LossBreakdown {
    double total = 0.0;
    double L_d = 0.0;
    double L_e = 0.0;
    double L_p = 0.0;
    double L_m = 0.0;
    double L_sigma = 0.0;
    double L_c = 0.0;
    double L_j = 0.0;
};

// One JSON-lines record: the eight fields plus the iteration index.
nlohmann::json loss_breakdown_to_json(const LossBreakdown &b, int iteration);

struct ImageLoss {
    double value = 0.0;
    Image grad; // d value / d X
};

struct VectorLoss {
    double value = 0.0;
    std::vector<double> grad;
};

// out = color + (1 - alpha) * bg, for premultiplied 4-channel RGBA.
Image composite_over_background(const Image &rgba, const Vec3 &bg);

// Same rule for a renderer's separate color and alpha images.
Image composite_over_background(const Image &color, const Image &alpha, const Vec3 &bg);

// Adjoint of the two-image form: fills d_color and d_alpha from d_out.
void composite_backward(const Image &d_out, const Vec3 &bg, Image &d_color, Image &d_alpha);

// Mean over pixels of the RGB Euclidean distance. Throws DimensionMismatch.
ImageLoss loss_euclidean_rgb(const Image &x, const Image &y);

// Stand-in for a learned perceptual loss: mean absolute difference averaged
// over a full-resolution and a half-resolution Gaussian pyramid level.
ImageLoss loss_perceptual_surrogate(const Image &x, const Image &y);

// Half-resolution level of the binomial Gaussian pyramid (clamp-to-edge).
Image pyramid_down(const Image &img);

// Any image-pair loss; the surrogate above is the default.
using ImagePairLoss = std::function<ImageLoss(const Image &, const Image &)>;

// (1/K) sum_k exp(-tau * mean_k).
VectorLoss loss_opacity_mean(const std::vector<double> &layer_means, double tau);

// (1/K) sum_k (1 - mean_k).
VectorLoss loss_opacity_bias(const std::vector<double> &layer_means);

struct ScalarLoss {
    double value = 0.0;
    double grad = 0.0;
};

// (ln s)^2. Throws NonPositiveScale.
ScalarLoss loss_scale_reg(double s);

struct PairListLoss {
    double value = 0.0;
    std::vector<Image> grad_a; // gradient w.r.t. renders_a; renders_b get the negation
};

// Mean over views of the per-pixel, per-channel mean squared difference.
// Throws LengthMismatch or DimensionMismatch.
PairListLoss loss_jitter(const std::vector<Image> &renders_a, const std::vector<Image> &renders_b);

// Fills `total` from the other fields. Throws NonFiniteLoss.
LossBreakdown total_loss(const LossBreakdown &parts, const LossWeights &w);

} // namespace splatterlab
