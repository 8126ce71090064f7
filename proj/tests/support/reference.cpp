// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <unistd.h>

namespace splatterlab::testing {

ReferenceRender reference_render(const std::vector<Gaussian3D> &gs, const Camera &cam) {
    struct Proj {
        Eigen::Vector2d mean;
        Eigen::Matrix2d inv;
        double z, opacity;
        Vec3 color;
        int index;
    };
    std::vector<Proj> ps;
    for (int i = 0; i < static_cast<int>(gs.size()); ++i) {
        const Gaussian3D &g = gs[i];
        const Mat3 w = cam.rotation.transpose();
        const Vec3 t = w * (g.mean - cam.center);
        if (t.z() <= 0.01) continue;
        Eigen::Quaterniond q(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]);
        q.normalize();
        const Mat3 r = q.toRotationMatrix();
        const Mat3 sigma = r * g.scales.cwiseAbs2().asDiagonal() * r.transpose();
        Eigen::Matrix<double, 2, 3> j;
        j << cam.focal / t.z(), 0.0, -cam.focal * t.x() / (t.z() * t.z()), 0.0, cam.focal / t.z(),
            -cam.focal * t.y() / (t.z() * t.z());
        Eigen::Matrix2d cov = j * w * sigma * w.transpose() * j.transpose();
        cov += 0.09 * Eigen::Matrix2d::Identity();
        const Eigen::Vector2d mean = cam.principal_point + cam.focal * Eigen::Vector2d(t.x() / t.z(), t.y() / t.z());
        ps.push_back({mean, cov.inverse(), t.z(), g.opacity, g.color, i});
    }
    std::stable_sort(ps.begin(), ps.end(), [](const Proj &a, const Proj &b) {
        return a.z != b.z ? a.z < b.z : a.index < b.index;
    });

    ReferenceRender out{Image(cam.width, cam.height, 3), Image(cam.width, cam.height, 1),
                        Image(cam.width, cam.height, 1)};
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            double t = 1.0;
            for (const Proj &p : ps) {
                const Eigen::Vector2d d = Eigen::Vector2d(x + 0.5, y + 0.5) - p.mean;
                const double a = std::min(0.999, p.opacity * std::exp(-0.5 * d.dot(p.inv * d)));
                if (a < 1.0 / 255.0) continue;
                for (int c = 0; c < 3; ++c) out.color.at(x, y, c) += p.color[c] * a * t;
                out.alpha.at(x, y) += a * t;
                out.depth_premul.at(x, y) += p.z * a * t;
                t *= 1.0 - a;
            }
        }
    return out;
}

Camera simple_camera(int width, int height, double focal) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.focal = focal;
    cam.principal_point = Vec2(0.5 * width, 0.5 * height);
    return cam;
}

std::vector<Gaussian3D> random_scene(Rng &rng, const Camera &cam, int max_count) {
    const int n = rng.integer(1, max_count);
    std::vector<Gaussian3D> gs(n);
    for (auto &g : gs) {
        const double z = rng.uniform(1.0, 3.0);
        const Vec2 px(rng.uniform(-0.1, 1.1) * cam.width, rng.uniform(-0.1, 1.1) * cam.height);
        const Vec3 local((px.x() - cam.principal_point.x()) / cam.focal * z,
                         (px.y() - cam.principal_point.y()) / cam.focal * z, z);
        g.mean = cam.center + cam.rotation * local;
        g.rotation = Quat(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized();
        // footprint of a few pixels
        const double px_size = z / cam.focal;
        g.scales = Vec3(rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0)) * px_size;
        g.opacity = rng.uniform(0.05, 1.0);
        g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    }
    return gs;
}

double central_difference(const std::function<double(const std::vector<double> &)> &f, std::vector<double> x,
                          std::size_t i, double h) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

bool close_rel(double analytic, double numeric, double rel, double abs) {
    const double d = std::abs(analytic - numeric);
    return d <= abs || d <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

Image random_image(Rng &rng, int w, int h, int c, double lo, double hi) {
    Image img(w, h, c);
    for (double &v : img.data) v = rng.uniform(lo, hi);
    return img;
}

TempDir::TempDir(const std::string &tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("splatterlab_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string file_bytes(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace splatterlab::testing
