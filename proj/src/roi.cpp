// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/roi.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace splatterlab {

nlohmann::json face_box_to_json(const FaceBox &box) {
    return {{"center", {box.center.x(), box.center.y()}}, {"size", box.size}};
}

FaceBox face_box_from_json(const nlohmann::json &j) {
    try {
        const auto c = j.at("center").get<std::vector<double>>();
        if (c.size() != 2) throw Error(ErrorCode::InvalidArgument, "face box center needs 2 values");
        return {Vec2(c[0], c[1]), j.at("size").get<double>()};
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::InvalidArgument, std::string("face box JSON: ") + e.what());
    }
}

RoiMapping build_roi_camera(const Camera &cam_src, const FaceBox &box, int out_size) {
    if (out_size < 1) throw Error(ErrorCode::InvalidArgument, "ROI size must be positive");
    if (!(box.size > 0.0) || !(box.center.x() >= 0.0 && box.center.x() <= cam_src.width) ||
        !(box.center.y() >= 0.0 && box.center.y() <= cam_src.height)) {
        throw Error(ErrorCode::BoxOutsideFrustum, "face box center must lie inside the source image");
    }
    RoiMapping m;
    m.face_angle = 2.0 * std::atan(box.size / (2.0 * cam_src.focal));
    m.fov = 3.0 * m.face_angle;
    if (!(m.fov < std::numbers::pi)) throw Error(ErrorCode::BoxOutsideFrustum, "face box too large for a 3x FOV");

    const Vec3 axis = camera_ray_local(cam_src, box.center);
    const Vec3 down(0.0, 1.0, 0.0);
    Vec3 x_axis = down.cross(axis);
    if (x_axis.norm() < 1e-12) throw Error(ErrorCode::BoxOutsideFrustum, "degenerate ROI orientation");
    x_axis.normalize();
    const Vec3 y_axis = axis.cross(x_axis);
    m.relative_rotation.col(0) = x_axis;
    m.relative_rotation.col(1) = y_axis;
    m.relative_rotation.col(2) = axis;

    Camera &roi = m.cam_roi;
    roi.rotation = cam_src.rotation * m.relative_rotation;
    roi.center = cam_src.center;
    roi.focal = (out_size / 2.0) / std::tan(m.fov / 2.0);
    roi.principal_point = Vec2(out_size / 2.0, out_size / 2.0);
    roi.width = out_size;
    roi.height = out_size;
    m.normalized_focal = roi.normalized_focal();
    m.homography = intrinsics_matrix(cam_src) * m.relative_rotation * intrinsics_matrix(roi).inverse();
    return m;
}

Camera roi_frame_camera(const RoiMapping &mapping, const Camera &cam_src) {
    Camera cam = mapping.cam_roi;
    cam.rotation = cam_src.rotation;
    cam.center = cam_src.center;
    return cam;
}

Image warp_homography(const Image &src, const Mat3 &hom, int out_w, int out_h) {
    Image out(out_w, out_h, src.channels);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            const Vec3 h = hom * Vec3(j + 0.5, i + 0.5, 1.0);
            if (!(h.z() > 0.0)) continue;
            const double u = h.x() / h.z(), v = h.y() / h.z();
            if (!(u >= 0.0 && v >= 0.0 && u <= src.width && v <= src.height)) continue;
            const double x = std::clamp(u - 0.5, 0.0, src.width - 1.0);
            const double y = std::clamp(v - 0.5, 0.0, src.height - 1.0);
            const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
            const int x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
            const double fx = x - x0, fy = y - y0;
            for (int c = 0; c < src.channels; ++c) {
                out.at(j, i, c) = (1 - fy) * ((1 - fx) * src.at(x0, y0, c) + fx * src.at(x1, y0, c)) +
                                  fy * ((1 - fx) * src.at(x0, y1, c) + fx * src.at(x1, y1, c));
            }
        }
    }
    return out;
}

Image conditioning_channels(const RoiMapping &mapping, int out_size) {
    Image out(out_size, out_size, 6);
    const double nf = mapping.normalized_focal;
    for (int i = 0; i < out_size; ++i) {
        for (int j = 0; j < out_size; ++j) {
            const Vec3 ray = camera_ray_local(mapping.cam_roi, Vec2(j + 0.5, i + 0.5));
            for (int c = 0; c < 3; ++c) out.at(j, i, c) = ray[c];
            out.at(j, i, 3) = nf;
            out.at(j, i, 4) = 1.0 / nf;
        }
    }
    return out;
}

namespace {

Mat3 world_rotation_between(const Camera &cam_roi, const Camera &cam_src) {
    if ((cam_roi.center - cam_src.center).norm() > 1e-9)
        throw Error(ErrorCode::CameraCenterMismatch, "ROI and source cameras must share an optical center");
    return cam_roi.rotation * cam_src.rotation.transpose();
}

} // namespace

GaussianSet gaussians_to_source_frame(const GaussianSet &gs, const Camera &cam_roi, const Camera &cam_src) {
    const Mat3 w = world_rotation_between(cam_roi, cam_src);
    const Quat qw = matrix_to_quat(w);
    const Vec3 &c = cam_src.center;
    GaussianSet out(gs.items);
    for (auto &g : out.items) {
        g.mean = c + w * (g.mean - c);
        g.rotation = quat_multiply(qw, g.rotation);
    }
    return out;
}

std::vector<Gaussian3D> gaussians_to_source_frame_backward(const Camera &cam_roi, const Camera &cam_src,
                                                           const std::vector<Gaussian3D> &d_out) {
    const Mat3 w = world_rotation_between(cam_roi, cam_src);
    const Eigen::Matrix4d lq = quat_left_matrix(matrix_to_quat(w));
    std::vector<Gaussian3D> d_in = d_out;
    for (auto &d : d_in) {
        d.mean = w.transpose() * d.mean;
        d.rotation = lq.transpose() * d.rotation;
    }
    return d_in;
}

} // namespace splatterlab
