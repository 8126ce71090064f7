// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/splatter.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace splatterlab {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec2 pixel_center(int i, int j) { return Vec2(j + 0.5, i + 0.5); }

void check_dims(const SplatterImage &sp, const Camera &cam) {
    if (cam.width != sp.width || cam.height != sp.height) {
        throw Error(ErrorCode::DimensionMismatch, "ROI camera is " + std::to_string(cam.width) + "x" +
                                                      std::to_string(cam.height) + ", grid is " +
                                                      std::to_string(sp.width) + "x" + std::to_string(sp.height));
    }
    if (sp.raw.size() != sp.gaussian_count() * channel::kCount)
        throw Error(ErrorCode::DimensionMismatch, "raw buffer length does not match H*W*K*15");
}

void put_u32(std::ostream &os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char *>(b), 4);
}

std::uint32_t get_u32(std::istream &is) {
    unsigned char b[4] = {};
    is.read(reinterpret_cast<char *>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void DecodeConfig::validate() const {
    if (!(z_near > 0.0) || !(z_range > 0.0) || !(offset_bound >= 0.0) || !(logscale_min < logscale_max) ||
        !(color_mix >= 0.0 && color_mix <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "invalid decode configuration");
    }
}

nlohmann::json decode_config_to_json(const DecodeConfig &cfg) {
    return {{"z_near", cfg.z_near},
            {"z_range", cfg.z_range},
            {"offset_bound", cfg.offset_bound},
            {"logscale_min", cfg.logscale_min},
            {"logscale_max", cfg.logscale_max},
            {"color_mix", cfg.color_mix}};
}

DecodeConfig decode_config_from_json(const nlohmann::json &j) {
    DecodeConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string &k = it.key();
        const double v = it.value().get<double>();
        if (k == "z_near") cfg.z_near = v;
        else if (k == "z_range") cfg.z_range = v;
        else if (k == "offset_bound") cfg.offset_bound = v;
        else if (k == "logscale_min") cfg.logscale_min = v;
        else if (k == "logscale_max") cfg.logscale_max = v;
        else if (k == "color_mix") cfg.color_mix = v;
        else throw Error(ErrorCode::InvalidArgument, "unknown decode key '" + k + "'");
    }
    cfg.validate();
    return cfg;
}

GaussianSet decode(const SplatterImage &sp, const Camera &cam, const DecodeConfig &cfg) {
    check_dims(sp, cam);
    std::vector<Gaussian3D> out(sp.gaussian_count());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < sp.height; ++i) {
        for (int j = 0; j < sp.width; ++j) {
            const Vec3 ray = camera_ray(cam, pixel_center(i, j));
            for (int k = 0; k < sp.layers; ++k) {
                const std::size_t gi = sp.gaussian_index(i, j, k);
                const double *r = sp.gaussian(gi);
                Gaussian3D &g = out[gi];
                const double z = cfg.z_near + cfg.z_range * sigmoid(r[channel::kDepth]);
                const Vec3 offset(cfg.offset_bound * std::tanh(r[channel::kOffset]),
                                  cfg.offset_bound * std::tanh(r[channel::kOffset + 1]),
                                  cfg.offset_bound * std::tanh(r[channel::kOffset + 2]));
                g.mean = cam.center + z * ray + cam.rotation * offset;
                const Quat q(r[channel::kQuat], r[channel::kQuat + 1], r[channel::kQuat + 2], r[channel::kQuat + 3]);
                const double qn = q.norm();
                g.rotation = qn > 1e-12 ? Quat(q / qn) : identity_quat();
                for (int a = 0; a < 3; ++a)
                    g.scales[a] = std::exp(std::clamp(r[channel::kLogScale + a], cfg.logscale_min, cfg.logscale_max));
                g.opacity = sigmoid(r[channel::kOpacity]);
                for (int c = 0; c < 3; ++c) g.color[c] = sigmoid(r[channel::kColor + c]);
            }
        }
    }
    return GaussianSet(std::move(out));
}

std::vector<double> decode_backward(const SplatterImage &sp, const Camera &cam, const DecodeConfig &cfg,
                                    const std::vector<Gaussian3D> &d_g) {
    check_dims(sp, cam);
    if (d_g.size() != sp.gaussian_count())
        throw Error(ErrorCode::DimensionMismatch, "adjoint count does not match the grid");
    std::vector<double> d_raw(sp.raw.size(), 0.0);
    const Mat3 rot_t = cam.rotation.transpose();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < sp.height; ++i) {
        for (int j = 0; j < sp.width; ++j) {
            const Vec3 ray = camera_ray(cam, pixel_center(i, j));
            for (int k = 0; k < sp.layers; ++k) {
                const std::size_t gi = sp.gaussian_index(i, j, k);
                const double *r = sp.gaussian(gi);
                double *d = d_raw.data() + gi * channel::kCount;
                const Gaussian3D &dg = d_g[gi];

                const double sd = sigmoid(r[channel::kDepth]);
                d[channel::kDepth] = dg.mean.dot(ray) * cfg.z_range * sd * (1.0 - sd);
                const Vec3 d_offset = rot_t * dg.mean;
                for (int a = 0; a < 3; ++a) {
                    const double th = std::tanh(r[channel::kOffset + a]);
                    d[channel::kOffset + a] = d_offset[a] * cfg.offset_bound * (1.0 - th * th);
                }
                const Quat q(r[channel::kQuat], r[channel::kQuat + 1], r[channel::kQuat + 2], r[channel::kQuat + 3]);
                const double qn = q.norm();
                if (qn > 1e-12) {
                    const Quat qh = q / qn;
                    const Quat dq = (dg.rotation - qh * qh.dot(dg.rotation)) / qn;
                    for (int a = 0; a < 4; ++a) d[channel::kQuat + a] = dq[a];
                }
                for (int a = 0; a < 3; ++a) {
                    const double ls = r[channel::kLogScale + a];
                    if (ls > cfg.logscale_min && ls < cfg.logscale_max)
                        d[channel::kLogScale + a] = dg.scales[a] * std::exp(ls);
                }
                const double so = sigmoid(r[channel::kOpacity]);
                d[channel::kOpacity] = dg.opacity * so * (1.0 - so);
                for (int c = 0; c < 3; ++c) {
                    const double sc = sigmoid(r[channel::kColor + c]);
                    d[channel::kColor + c] = dg.color[c] * sc * (1.0 - sc);
                }
            }
        }
    }
    return d_raw;
}

bool bilinear_rgb(const Image &img, const Vec2 &pixel, Vec3 &out, Eigen::Matrix<double, 3, 2> *d_pixel) {
    const double x = pixel.x() - 0.5, y = pixel.y() - 0.5;
    if (!(x >= 0.0 && y >= 0.0 && x <= img.width - 1.0 && y <= img.height - 1.0)) return false;
    const int x0 = std::min(static_cast<int>(x), img.width - 1);
    const int y0 = std::min(static_cast<int>(y), img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0, fy = y - y0;
    for (int c = 0; c < 3; ++c) {
        const double v00 = img.at(x0, y0, c), v10 = img.at(x1, y0, c);
        const double v01 = img.at(x0, y1, c), v11 = img.at(x1, y1, c);
        out[c] = (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
        if (d_pixel) {
            (*d_pixel)(c, 0) = (1 - fy) * (v10 - v00) + fy * (v11 - v01);
            (*d_pixel)(c, 1) = (1 - fx) * (v01 - v00) + fx * (v11 - v10);
        }
    }
    return true;
}

GaussianSet direct_color_sample(const GaussianSet &gs, const Image &input_image, const Camera &cam,
                                const DecodeConfig &cfg) {
    if (input_image.width != cam.width || input_image.height != cam.height || input_image.channels < 3)
        throw Error(ErrorCode::DimensionMismatch, "input image does not match the ROI camera");
    GaussianSet out(gs.items);
    if (cfg.color_mix == 0.0) return out;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(gs.size()); ++n) {
        const Gaussian3D &g = gs.items[n];
        const Vec3 t = cam.to_camera(g.mean);
        if (!(t.z() > 1e-6)) continue;
        const Vec2 px = cam.principal_point + cam.focal * Vec2(t.x() / t.z(), t.y() / t.z());
        Vec3 sampled;
        if (!bilinear_rgb(input_image, px, sampled)) continue;
        out.items[n].color = (1.0 - cfg.color_mix) * g.color + cfg.color_mix * sampled;
    }
    return out;
}

std::vector<Gaussian3D> direct_color_sample_backward(const GaussianSet &gs, const Image &input_image,
                                                     const Camera &cam, const DecodeConfig &cfg,
                                                     const std::vector<Gaussian3D> &d_out) {
    std::vector<Gaussian3D> d_in = d_out;
    if (cfg.color_mix == 0.0) return d_in;
    const double f = cam.focal;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(gs.size()); ++n) {
        const Gaussian3D &g = gs.items[n];
        const Vec3 t = cam.to_camera(g.mean);
        if (!(t.z() > 1e-6)) continue;
        const Vec2 px = cam.principal_point + f * Vec2(t.x() / t.z(), t.y() / t.z());
        Vec3 sampled;
        Eigen::Matrix<double, 3, 2> d_px;
        if (!bilinear_rgb(input_image, px, sampled, &d_px)) continue;
        const Vec3 &dc = d_out[n].color;
        d_in[n].color = (1.0 - cfg.color_mix) * dc;
        const Vec2 d_pixel = cfg.color_mix * d_px.transpose() * dc;
        Eigen::Matrix<double, 2, 3> j;
        j << f / t.z(), 0.0, -f * t.x() / (t.z() * t.z()),
             0.0, f / t.z(), -f * t.y() / (t.z() * t.z());
        d_in[n].mean += cam.rotation * (j.transpose() * d_pixel);
    }
    return d_in;
}

SplatterImage init_params(int height, int width, int layers, std::uint64_t seed, double focal_roi,
                          const DecodeConfig &cfg) {
    if (height < 1 || width < 1 || layers < 1 || !(focal_roi > 0.0))
        throw Error(ErrorCode::InvalidArgument, "init_params needs positive sizes and focal");
    SplatterImage sp(height, width, layers);
    const double logscale =
        std::clamp(std::log(kInitScalePixels * cfg.z_mid() / focal_roi), cfg.logscale_min, cfg.logscale_max);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.1);
    for (std::size_t g = 0; g < sp.gaussian_count(); ++g) {
        double *r = sp.gaussian(g);
        r[channel::kQuat] = 1.0;
        for (int a = 0; a < 3; ++a) r[channel::kLogScale + a] = logscale;
        r[channel::kOpacity] = 1.0;
        for (int c = 0; c < 3; ++c) r[channel::kColor + c] = noise(rng);
    }
    return sp;
}

std::vector<double> layer_mean_opacity(const GaussianSet &gs, int layers) {
    std::vector<double> mean(layers, 0.0);
    const std::size_t per_layer = gs.size() / layers;
    for (std::size_t n = 0; n < gs.size(); ++n) mean[n % layers] += gs.items[n].opacity;
    for (auto &m : mean) m /= static_cast<double>(per_layer);
    return mean;
}

void layer_mean_opacity_backward(const std::vector<double> &d_mean, int layers, std::vector<Gaussian3D> &d_g) {
    const double per_layer = static_cast<double>(d_g.size() / layers);
    for (std::size_t n = 0; n < d_g.size(); ++n) d_g[n].opacity += d_mean[n % layers] / per_layer;
}

void save_splatter(const std::filesystem::path &path, const SplatterImage &sp) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    put_u32(os, static_cast<std::uint32_t>(sp.height));
    put_u32(os, static_cast<std::uint32_t>(sp.width));
    put_u32(os, static_cast<std::uint32_t>(sp.layers));
    put_u32(os, kSplatterFormatVersion);
    for (double v : sp.raw) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

SplatterImage load_splatter(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    const auto h = get_u32(is), w = get_u32(is), k = get_u32(is), version = get_u32(is);
    if (!is || version != kSplatterFormatVersion || h == 0 || w == 0 || k == 0)
        throw Error(ErrorCode::IoError, "bad splatter header in " + path.string());
    SplatterImage sp(static_cast<int>(h), static_cast<int>(w), static_cast<int>(k));
    for (double &v : sp.raw) v = std::bit_cast<float>(get_u32(is));
    if (!is) throw Error(ErrorCode::IoError, "truncated splatter blob " + path.string());
    return sp;
}

} // namespace splatterlab
