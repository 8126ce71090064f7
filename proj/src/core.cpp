// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/core.hpp"

#include <cmath>
#include <string>

namespace splatterlab {

Mat3 quat_to_matrix(const Quat &q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Quat quat_to_matrix_backward(const Quat &q, const Mat3 &g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Quat d;
    d[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    d[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
                z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
    d[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
    d[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
                y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

Quat matrix_to_quat(const Mat3 &rot) {
    Eigen::Quaterniond q(rot);
    q.normalize();
    Quat out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0) out = -out;
    return out;
}

Quat quat_multiply(const Quat &a, const Quat &b) { return quat_left_matrix(a) * b; }

Eigen::Matrix4d quat_left_matrix(const Quat &a) {
    const double w = a[0], x = a[1], y = a[2], z = a[3];
    Eigen::Matrix4d m;
    m << w, -x, -y, -z,
         x, w, -z, y,
         y, z, w, -x,
         z, -y, x, w;
    return m;
}

Mat3 orthonormalize(const Mat3 &rot) {
    Eigen::JacobiSVD<Mat3> svd(rot, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0) {
        Mat3 u = svd.matrixU();
        u.col(2) *= -1.0;
        r = u * svd.matrixV().transpose();
    }
    return r;
}

void Camera::validate() const {
    if (!(focal > 0.0)) throw Error(ErrorCode::InvalidArgument, "camera focal must be positive");
    if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "camera size must be >= 1");
    const double drift = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(drift <= 1e-9)) throw Error(ErrorCode::InvalidArgument, "camera rotation is not orthonormal");
}

Projection camera_project(const Camera &cam, const Vec3 &p_world) {
    const Vec3 t = cam.to_camera(p_world);
    if (!(t.z() > 1e-6)) {
        throw Error(ErrorCode::NonPositiveDepth, "point depth " + std::to_string(t.z()));
    }
    return {cam.principal_point + cam.focal * Vec2(t.x() / t.z(), t.y() / t.z()), t.z()};
}

Vec3 camera_ray_local(const Camera &cam, const Vec2 &pixel) {
    const Vec2 n = (pixel - cam.principal_point) / cam.focal;
    return Vec3(n.x(), n.y(), 1.0).normalized();
}

Vec3 camera_ray(const Camera &cam, const Vec2 &pixel) {
    return cam.rotation * camera_ray_local(cam, pixel);
}

Eigen::Matrix3d intrinsics_matrix(const Camera &cam) {
    Mat3 k;
    k << cam.focal, 0, cam.principal_point.x(),
         0, cam.focal, cam.principal_point.y(),
         0, 0, 1;
    return k;
}

nlohmann::json camera_to_json(const Camera &cam) {
    nlohmann::json j;
    std::vector<double> r;
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) r.push_back(cam.rotation(row, col));
    j["rotation"] = r;
    j["center"] = {cam.center.x(), cam.center.y(), cam.center.z()};
    j["focal"] = cam.focal;
    j["pp"] = {cam.principal_point.x(), cam.principal_point.y()};
    j["width"] = cam.width;
    j["height"] = cam.height;
    return j;
}

Camera camera_from_json(const nlohmann::json &j) {
    try {
        Camera cam;
        const auto r = j.at("rotation").get<std::vector<double>>();
        const auto c = j.at("center").get<std::vector<double>>();
        const auto pp = j.at("pp").get<std::vector<double>>();
        if (r.size() != 9 || c.size() != 3 || pp.size() != 2)
            throw Error(ErrorCode::InvalidArgument, "camera JSON has wrong array lengths");
        for (int row = 0; row < 3; ++row)
            for (int col = 0; col < 3; ++col) cam.rotation(row, col) = r[row * 3 + col];
        cam.center = Vec3(c[0], c[1], c[2]);
        cam.focal = j.at("focal").get<double>();
        cam.principal_point = Vec2(pp[0], pp[1]);
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        return cam;
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::InvalidArgument, std::string("camera JSON: ") + e.what());
    }
}

Image Image::slice_channels(int first, int count) const {
    Image out(width, height, count);
    for (std::size_t p = 0; p < pixel_count(); ++p)
        for (int c = 0; c < count; ++c) out.data[p * count + c] = data[p * channels + first + c];
    return out;
}

double &Gaussian3D::param(int i) {
    if (i < 3) return mean[i];
    if (i < 7) return rotation[i - 3];
    if (i < 10) return scales[i - 7];
    if (i == 10) return opacity;
    return color[i - 11];
}

double Gaussian3D::param(int i) const { return const_cast<Gaussian3D *>(this)->param(i); }

Gaussian3D Gaussian3D::zero() {
    Gaussian3D g;
    g.mean.setZero();
    g.rotation.setZero();
    g.scales.setZero();
    g.opacity = 0.0;
    g.color.setZero();
    return g;
}

Mat3 compose_covariance(const Quat &rotation, const Vec3 &scales) {
    const Mat3 m = quat_to_matrix(rotation) * scales.asDiagonal();
    return m * m.transpose();
}

CovarianceGrad compose_covariance_backward(const Quat &rotation, const Vec3 &scales,
                                           const Mat3 &d_cov) {
    const Mat3 r = quat_to_matrix(rotation);
    const Mat3 m = r * scales.asDiagonal();
    const Mat3 d_m = (d_cov + d_cov.transpose()) * m;
    CovarianceGrad out;
    for (int j = 0; j < 3; ++j) out.d_scales[j] = d_m.col(j).dot(r.col(j));
    const Mat3 d_r = d_m * scales.asDiagonal();
    out.d_rotation = quat_to_matrix_backward(rotation, d_r);
    return out;
}

} // namespace splatterlab
