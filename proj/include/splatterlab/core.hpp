// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// Cameras, rotations, images and the explicit Gaussian primitive shared by all
// other modules. World units are meters; camera frames are +z forward, +y down.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <nlohmann/json.hpp>

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "splatterlab/error.hpp"

namespace splatterlab {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Quaternions are stored as (w, x, y, z).
using Quat = Eigen::Vector4d;

inline Quat identity_quat() { return Quat(1.0, 0.0, 0.0, 0.0); }

// Rotation matrix of q using the unit-quaternion polynomial. The expression is
// evaluated as-is for non-unit input so that its derivative is well defined.
Mat3 quat_to_matrix(const Quat &q);

// Back-propagates an adjoint on the rotation matrix to the quaternion entries.
Quat quat_to_matrix_backward(const Quat &q, const Mat3 &d_rot);

Quat matrix_to_quat(const Mat3 &rot);

// Hamilton product a*b (apply b first, then a).
Quat quat_multiply(const Quat &a, const Quat &b);

// Left-multiplication matrix L(a) such that quat_multiply(a, b) == L(a) * b.
Eigen::Matrix4d quat_left_matrix(const Quat &a);

Mat3 orthonormalize(const Mat3 &rot);

// Pinhole camera. `rotation` maps camera-frame directions to world frame and
// `center` is the optical center in world coordinates. Pixel (i, j) has its
// continuous center at (j + 0.5, i + 0.5).
struct Camera {
    Mat3 rotation = Mat3::Identity();
    Vec3 center = Vec3::Zero();
    double focal = 1.0;
    Vec2 principal_point = Vec2::Zero();
    int width = 1;
    int height = 1;

    // Throws InvalidArgument when the invariants do not hold.
    void validate() const;

    Vec3 to_camera(const Vec3 &p_world) const { return rotation.transpose() * (p_world - center); }
    double normalized_focal() const { return focal / static_cast<double>(width); }
};

struct Projection {
    Vec2 pixel;
    double z_cam;
};

// Throws NonPositiveDepth when the point is not strictly in front of the camera.
Projection camera_project(const Camera &cam, const Vec3 &p_world);

Vec3 camera_ray(const Camera &cam, const Vec2 &pixel);

// Same as camera_ray but in the camera frame.
Vec3 camera_ray_local(const Camera &cam, const Vec2 &pixel);

Eigen::Matrix3d intrinsics_matrix(const Camera &cam);

nlohmann::json camera_to_json(const Camera &cam);
Camera camera_from_json(const nlohmann::json &j);

// Row-major image with interleaved channels.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double &at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    bool same_shape(const Image &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    bool same_size(const Image &o) const { return width == o.width && height == o.height; }

    // Copies channels [first, first + count) into a new image.
    Image slice_channels(int first, int count) const;
};

struct Gaussian3D {
    Vec3 mean = Vec3::Zero();
    Quat rotation = identity_quat();
    Vec3 scales = Vec3::Constant(1e-2);
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();

    static constexpr int kParamCount = 14;

    // Flat view used by finite-difference checks: mean(3) quat(4) scales(3)
    // opacity(1) color(3).
    double &param(int i);
    double param(int i) const;

    static Gaussian3D zero();
};

// Gaussian parameters plus a gradient buffer with identical layout.
struct GaussianSet {
    std::vector<Gaussian3D> items;
    std::vector<Gaussian3D> grad;

    GaussianSet() = default;
    explicit GaussianSet(std::vector<Gaussian3D> gs)
        : items(std::move(gs)), grad(items.size(), Gaussian3D::zero()) {}

    std::size_t size() const { return items.size(); }
    void zero_grad() { grad.assign(items.size(), Gaussian3D::zero()); }
};

// Sigma = R diag(s^2) R^T.
Mat3 compose_covariance(const Quat &rotation, const Vec3 &scales);

struct CovarianceGrad {
    Quat d_rotation;
    Vec3 d_scales;
};

// Adjoint of compose_covariance for a symmetric adjoint `d_cov`.
CovarianceGrad compose_covariance_backward(const Quat &rotation, const Vec3 &scales,
                                           const Mat3 &d_cov);

} // namespace splatterlab
