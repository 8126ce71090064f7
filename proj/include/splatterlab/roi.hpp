// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// Face-box driven virtual ROI cameras: a symmetric-frustum camera sharing the
// source optical center, rotated toward the face, with a field of view three
// times the face's angular size.

#pragma once

#include <nlohmann/json.hpp>

#include "splatterlab/core.hpp"

namespace splatterlab {

struct FaceBox {
    Vec2 center = Vec2::Zero(); // pixels in the source image
    double size = 1.0;          // full side length, pixels
};

nlohmann::json face_box_to_json(const FaceBox &box);
FaceBox face_box_from_json(const nlohmann::json &j);

struct RoiMapping {
    Camera cam_roi;
    // Maps homogeneous ROI pixels to homogeneous source pixels.
    Mat3 homography = Mat3::Identity();
    // Source-camera-from-ROI-camera rotation.
    Mat3 relative_rotation = Mat3::Identity();
    double normalized_focal = 1.0;
    double face_angle = 0.0; // radians
    double fov = 0.0;        // radians
};

// Throws BoxOutsideFrustum if the box center leaves the source image or the
// resulting field of view would reach 180 degrees.
RoiMapping build_roi_camera(const Camera &cam_src, const FaceBox &box, int out_size);

// The ROI intrinsics placed at the source pose. Splatter images are decoded
// against this camera: their coordinates are ROI-frame coordinates laid over
// the source camera's axes, and gaussians_to_source_frame moves them into place.
Camera roi_frame_camera(const RoiMapping &mapping, const Camera &cam_src);

// Bilinear resampling of every channel of `src` at H * (u, v, 1) for each output
// pixel center. Samples that land outside the source extent are zero.
Image warp_homography(const Image &src, const Mat3 &homography, int out_width, int out_height);

inline Image warp_image(const Image &src, const RoiMapping &mapping, int out_size) {
    return warp_homography(src, mapping.homography, out_size, out_size);
}

// Channels: unit ray (ROI camera frame) xyz, f/w, w/f, zero.
Image conditioning_channels(const RoiMapping &mapping, int out_size);

// Rotates means and orientations about the shared optical center by the
// relative rotation between the two cameras. Throws CameraCenterMismatch when
// the centers differ by more than 1e-9 m. Swapping the cameras inverts it.
GaussianSet gaussians_to_source_frame(const GaussianSet &gs, const Camera &cam_roi, const Camera &cam_src);

std::vector<Gaussian3D> gaussians_to_source_frame_backward(const Camera &cam_roi, const Camera &cam_src,
                                                           const std::vector<Gaussian3D> &d_out);

} // namespace splatterlab
