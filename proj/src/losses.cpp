// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace splatterlab {

namespace {

void require_rgb_pair(const Image &x, const Image &y) {
    if (!x.same_shape(y) || x.channels != 3)
        throw Error(ErrorCode::DimensionMismatch, "image loss needs two equal-size 3-channel images");
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

constexpr double kBinomial[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

// Separable 5-tap blur with clamp-to-edge, sampled at even pixels.
Image blur_down(const Image &img) {
    const int w2 = (img.width + 1) / 2, h2 = (img.height + 1) / 2;
    Image rows(w2, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x2 = 0; x2 < w2; ++x2)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int t = -2; t <= 2; ++t)
                    acc += kBinomial[t + 2] * img.at(std::clamp(2 * x2 + t, 0, img.width - 1), y, c);
                rows.at(x2, y, c) = acc;
            }
    Image out(w2, h2, img.channels);
    for (int y2 = 0; y2 < h2; ++y2)
        for (int x2 = 0; x2 < w2; ++x2)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int t = -2; t <= 2; ++t)
                    acc += kBinomial[t + 2] * rows.at(x2, std::clamp(2 * y2 + t, 0, img.height - 1), c);
                out.at(x2, y2, c) = acc;
            }
    return out;
}

// Transpose of blur_down.
Image blur_down_adjoint(const Image &g, int width, int height) {
    Image rows(g.width, height, g.channels);
    for (int y2 = 0; y2 < g.height; ++y2)
        for (int x2 = 0; x2 < g.width; ++x2)
            for (int c = 0; c < g.channels; ++c)
                for (int t = -2; t <= 2; ++t)
                    rows.at(x2, std::clamp(2 * y2 + t, 0, height - 1), c) += kBinomial[t + 2] * g.at(x2, y2, c);
    Image out(width, height, g.channels);
    for (int y = 0; y < height; ++y)
        for (int x2 = 0; x2 < g.width; ++x2)
            for (int c = 0; c < g.channels; ++c)
                for (int t = -2; t <= 2; ++t)
                    out.at(std::clamp(2 * x2 + t, 0, width - 1), y, c) += kBinomial[t + 2] * rows.at(x2, y, c);
    return out;
}

} // namespace

void LossWeights::validate() const {
    for (double v : {lambda_p, lambda_m, tau, lambda_sigma, lambda_c, lambda_j})
        if (!(v >= 0.0)) throw Error(ErrorCode::InvalidArgument, "loss weights must be non-negative");
}

nlohmann::json loss_weights_to_json(const LossWeights &w) {
    return {{"lambda_p", w.lambda_p},         {"lambda_m", w.lambda_m}, {"tau", w.tau},
            {"lambda_sigma", w.lambda_sigma}, {"lambda_c", w.lambda_c}, {"lambda_j", w.lambda_j}};
}

LossWeights loss_weights_from_json(const nlohmann::json &j) {
    LossWeights w;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string &k = it.key();
        const double v = it.value().get<double>();
        if (k == "lambda_p") w.lambda_p = v;
        else if (k == "lambda_m") w.lambda_m = v;
        else if (k == "tau") w.tau = v;
        else if (k == "lambda_sigma") w.lambda_sigma = v;
        else if (k == "lambda_c") w.lambda_c = v;
        else if (k == "lambda_j") w.lambda_j = v;
        else throw Error(ErrorCode::InvalidArgument, "unknown loss weight '" + k + "'");
    }
    w.validate();
    return w;
}

nlohmann::json loss_breakdown_to_json(const LossBreakdown &b, int iteration) {
    return {{"iteration", iteration}, {"total", b.total}, {"L_d", b.L_d},         {"L_e", b.L_e},
            {"L_p", b.L_p},           {"L_m", b.L_m},     {"L_sigma", b.L_sigma}, {"L_c", b.L_c},
            {"L_j", b.L_j}};
}

Image composite_over_background(const Image &rgba, const Vec3 &bg) {
    if (rgba.channels != 4) throw Error(ErrorCode::DimensionMismatch, "compositing needs RGBA input");
    Image out(rgba.width, rgba.height, 3);
    for (std::size_t p = 0; p < rgba.pixel_count(); ++p) {
        const double a = rgba.data[p * 4 + 3];
        for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = rgba.data[p * 4 + c] + (1.0 - a) * bg[c];
    }
    return out;
}

Image composite_over_background(const Image &color, const Image &alpha, const Vec3 &bg) {
    if (color.channels != 3 || alpha.channels != 1 || !color.same_size(alpha))
        throw Error(ErrorCode::DimensionMismatch, "compositing needs RGB color and matching alpha");
    Image out(color.width, color.height, 3);
    for (std::size_t p = 0; p < color.pixel_count(); ++p) {
        const double a = alpha.data[p];
        for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = color.data[p * 3 + c] + (1.0 - a) * bg[c];
    }
    return out;
}

void composite_backward(const Image &d_out, const Vec3 &bg, Image &d_color, Image &d_alpha) {
    d_color = d_out;
    d_alpha = Image(d_out.width, d_out.height, 1);
    for (std::size_t p = 0; p < d_out.pixel_count(); ++p) {
        double acc = 0.0;
        for (int c = 0; c < 3; ++c) acc += d_out.data[p * 3 + c] * bg[c];
        d_alpha.data[p] = -acc;
    }
}

ImageLoss loss_euclidean_rgb(const Image &x, const Image &y) {
    require_rgb_pair(x, y);
    ImageLoss out{0.0, Image(x.width, x.height, 3)};
    const double inv_n = 1.0 / static_cast<double>(x.pixel_count());
    for (std::size_t p = 0; p < x.pixel_count(); ++p) {
        const Vec3 r(x.data[p * 3] - y.data[p * 3], x.data[p * 3 + 1] - y.data[p * 3 + 1],
                     x.data[p * 3 + 2] - y.data[p * 3 + 2]);
        const double n = r.norm();
        out.value += n;
        if (n > 0.0)
            for (int c = 0; c < 3; ++c) out.grad.data[p * 3 + c] = r[c] / n * inv_n;
    }
    out.value *= inv_n;
    return out;
}

Image pyramid_down(const Image &img) { return blur_down(img); }

ImageLoss loss_perceptual_surrogate(const Image &x, const Image &y) {
    if (!x.same_shape(y)) throw Error(ErrorCode::DimensionMismatch, "surrogate needs equal-shape images");
    Image residual(x.width, x.height, x.channels);
    for (std::size_t i = 0; i < x.data.size(); ++i) residual.data[i] = x.data[i] - y.data[i];
    const Image low = blur_down(residual);

    const double n0 = static_cast<double>(residual.data.size());
    const double n1 = static_cast<double>(low.data.size());
    ImageLoss out{0.0, Image(x.width, x.height, x.channels)};
    double s0 = 0.0, s1 = 0.0;
    for (double v : residual.data) s0 += std::abs(v);
    for (double v : low.data) s1 += std::abs(v);
    out.value = 0.5 * (s0 / n0 + s1 / n1);

    Image d_low(low.width, low.height, low.channels);
    for (std::size_t i = 0; i < low.data.size(); ++i) d_low.data[i] = 0.5 * sign(low.data[i]) / n1;
    out.grad = blur_down_adjoint(d_low, x.width, x.height);
    for (std::size_t i = 0; i < residual.data.size(); ++i) out.grad.data[i] += 0.5 * sign(residual.data[i]) / n0;
    return out;
}

VectorLoss loss_opacity_mean(const std::vector<double> &means, double tau) {
    VectorLoss out{0.0, std::vector<double>(means.size(), 0.0)};
    const double k = static_cast<double>(means.size());
    for (std::size_t i = 0; i < means.size(); ++i) {
        const double e = std::exp(-tau * means[i]);
        out.value += e / k;
        out.grad[i] = -tau * e / k;
    }
    return out;
}

VectorLoss loss_opacity_bias(const std::vector<double> &means) {
    VectorLoss out{0.0, std::vector<double>(means.size(), 0.0)};
    const double k = static_cast<double>(means.size());
    for (std::size_t i = 0; i < means.size(); ++i) {
        out.value += (1.0 - means[i]) / k;
        out.grad[i] = -1.0 / k;
    }
    return out;
}

ScalarLoss loss_scale_reg(double s) {
    if (!(s > 0.0)) throw Error(ErrorCode::NonPositiveScale, "scale " + std::to_string(s));
    const double l = std::log(s);
    return {l * l, 2.0 * l / s};
}

PairListLoss loss_jitter(const std::vector<Image> &a, const std::vector<Image> &b) {
    if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "jitter loss needs equal-length lists");
    PairListLoss out;
    if (a.empty()) return out;
    const double inv_views = 1.0 / static_cast<double>(a.size());
    for (std::size_t v = 0; v < a.size(); ++v) {
        if (!a[v].same_shape(b[v])) throw Error(ErrorCode::DimensionMismatch, "jitter pair shapes differ");
        const double inv_n = 1.0 / static_cast<double>(a[v].data.size());
        Image g(a[v].width, a[v].height, a[v].channels);
        double acc = 0.0;
        for (std::size_t i = 0; i < a[v].data.size(); ++i) {
            const double d = a[v].data[i] - b[v].data[i];
            acc += d * d;
            g.data[i] = 2.0 * d * inv_n * inv_views;
        }
        out.value += acc * inv_n * inv_views;
        out.grad_a.push_back(std::move(g));
    }
    return out;
}

LossBreakdown total_loss(const LossBreakdown &parts, const LossWeights &w) {
    LossBreakdown out = parts;
    out.total = parts.L_d + w.lambda_sigma * parts.L_sigma + w.lambda_m * parts.L_m + w.lambda_c * parts.L_c +
                w.lambda_j * parts.L_j;
    for (double v : {out.total, parts.L_d, parts.L_e, parts.L_p, parts.L_m, parts.L_sigma, parts.L_c, parts.L_j})
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "non-finite loss term");
    return out;
}

} // namespace splatterlab
