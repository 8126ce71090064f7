// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "splatterlab/eval.hpp"
#include "splatterlab/rasterizer.hpp"
#include "splatterlab/roi.hpp"
#include "support/reference.hpp"

using namespace splatterlab;
using namespace splatterlab::testing;

namespace {

Camera source_camera() {
    Camera cam = simple_camera(96, 64, 48.0 / std::tan(M_PI / 6));
    cam.rotation = quat_to_matrix(Quat(0.98, 0.1, -0.15, 0.05).normalized());
    cam.center = Vec3(0.1, -0.2, 0.3);
    return cam;
}

Vec2 apply_h(const Mat3 &h, const Vec2 &p) {
    const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
    return q.head<2>() / q.z();
}

FaceBox random_box(Rng &rng, const Camera &cam) {
    return {Vec2(rng.uniform(0.1, 0.9) * cam.width, rng.uniform(0.1, 0.9) * cam.height), rng.uniform(5.0, 40.0)};
}

Image smooth_pattern(int w, int h) {
    Image img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = (x + 0.5) / w, v = (y + 0.5) / h;
            img.at(x, y, 0) = 0.5 + 0.4 * std::sin(2.0 * u + 1.0 * v);
            img.at(x, y, 1) = 0.5 + 0.4 * std::cos(1.5 * v - 0.7 * u);
            img.at(x, y, 2) = 0.3 + 0.5 * u * v;
        }
    return img;
}

} // namespace

TEST(BuildRoiCamera, CenteredBoxIsACrop) {
    Camera src = simple_camera(96, 64, 80.0);
    const RoiMapping m = build_roi_camera(src, {src.principal_point, 20.0}, 64);
    EXPECT_NEAR((m.relative_rotation - Mat3::Identity()).norm(), 0.0, 1e-12);
    EXPECT_NEAR(m.homography(2, 0), 0.0, 1e-12);
    EXPECT_NEAR(m.homography(2, 1), 0.0, 1e-12);
    EXPECT_NEAR(m.homography(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(m.homography(1, 0), 0.0, 1e-12);
    EXPECT_NEAR(m.homography(0, 0) / m.homography(2, 2), m.homography(1, 1) / m.homography(2, 2), 1e-12);
}

TEST(BuildRoiCamera, ThirdRuleArithmetic) {
    Camera src = simple_camera(96, 64, 80.0);
    const double size = 2.0 * src.focal * std::tan(M_PI / 18); // 20 degrees
    const RoiMapping m = build_roi_camera(src, {src.principal_point, size}, 64);
    EXPECT_NEAR(m.face_angle, M_PI / 9, 1e-12);
    EXPECT_NEAR(m.fov, M_PI / 3, 1e-12);
    EXPECT_NEAR(m.cam_roi.focal, 32.0 / std::tan(M_PI / 6), 1e-9);
    EXPECT_NEAR(m.normalized_focal, m.cam_roi.focal / 64.0, 1e-15);
}

TEST(BuildRoiCamera, ThirdRuleHoldsForAllBoxes) {
    Rng rng(1);
    const Camera src = source_camera();
    for (int n = 0; n < 500; ++n) {
        const RoiMapping m = build_roi_camera(src, random_box(rng, src), 64);
        EXPECT_NEAR(m.face_angle / m.fov, 1.0 / 3.0, 1e-9);
    }
}

TEST(BuildRoiCamera, BoxCenterMapsToRoiCenter) {
    Rng rng(2);
    const Camera src = source_camera();
    for (int n = 0; n < 200; ++n) {
        const FaceBox box = random_box(rng, src);
        const RoiMapping m = build_roi_camera(src, box, 64);
        const Vec3 ray = camera_ray(src, box.center);
        const Vec2 roi_px = camera_project(m.cam_roi, src.center + ray).pixel;
        EXPECT_NEAR((roi_px - Vec2(32, 32)).norm(), 0.0, 1e-6);
        EXPECT_NEAR((apply_h(m.homography, Vec2(32, 32)) - box.center).norm(), 0.0, 1e-6);
    }
}

TEST(BuildRoiCamera, SharedCenterAndSymmetricFrustum) {
    Rng rng(3);
    const Camera src = source_camera();
    for (int n = 0; n < 100; ++n) {
        const RoiMapping m = build_roi_camera(src, random_box(rng, src), 48);
        EXPECT_EQ((m.cam_roi.center - src.center).norm(), 0.0);
        EXPECT_EQ(m.cam_roi.principal_point, Vec2(24, 24));
        EXPECT_GT(std::abs(m.homography.determinant()), 1e-12);
        EXPECT_LT((m.cam_roi.rotation.transpose() * m.cam_roi.rotation - Mat3::Identity()).norm(), 1e-9);
    }
}

TEST(BuildRoiCamera, HomographyAgreesWithRays) {
    Rng rng(4);
    const Camera src = source_camera();
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
        const RoiMapping m = build_roi_camera(src, random_box(rng, src), 64);
        const Vec2 u(rng.uniform(0, 64), rng.uniform(0, 64));
        const Vec3 dir = camera_ray(m.cam_roi, u);
        if (src.to_camera(src.center + dir).z() <= 1e-3) continue;
        const Vec2 want = camera_project(src, src.center + dir).pixel;
        worst = std::max(worst, (apply_h(m.homography, u) - want).norm());
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(BuildRoiCamera, RollKeepsUpVertical) {
    // A box displaced horizontally should not roll the image: the source's
    // vertical direction stays vertical through the ROI center.
    Camera src = simple_camera(96, 64, 80.0);
    const RoiMapping m = build_roi_camera(src, {Vec2(80, 32), 16.0}, 64);
    const Vec3 down_roi = m.cam_roi.rotation.col(1);
    EXPECT_NEAR(down_roi.x(), 0.0, 1e-12);
}

TEST(BuildRoiCamera, RejectsBoxesOutsideTheFrustum) {
    const Camera src = source_camera();
    for (const FaceBox &box : {FaceBox{Vec2(-5, 10), 10.0}, FaceBox{Vec2(20, 80), 10.0}, FaceBox{Vec2(20, 20), 1e6}}) {
        try {
            build_roi_camera(src, box, 64);
            ADD_FAILURE();
        } catch (const Error &e) {
            EXPECT_EQ(e.code(), ErrorCode::BoxOutsideFrustum);
        }
    }
}

TEST(WarpImage, IdentityHomography) {
    Rng rng(5);
    const Image src = random_image(rng, 20, 12, 4);
    const Image out = warp_homography(src, Mat3::Identity(), 20, 12);
    for (std::size_t i = 0; i < src.data.size(); ++i) EXPECT_NEAR(out.data[i], src.data[i], 1e-9);
}

TEST(WarpImage, ScaledConstantStaysConstant) {
    const Image src(30, 30, 4, 0.25);
    Mat3 h = Mat3::Identity();
    h(0, 0) = h(1, 1) = 2.0;
    h(0, 2) = h(1, 2) = -0.5; // pixel centers map to pixel centers
    const Image out = warp_homography(src, h, 15, 15);
    for (double v : out.data) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(WarpImage, OutsideIsTransparentBlack) {
    Mat3 h = Mat3::Identity();
    h(0, 2) = 100.0;
    const Image out = warp_homography(Image(10, 10, 4, 1.0), h, 5, 5);
    for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(WarpImage, RoundTripPsnr) {
    const Camera src = simple_camera(96, 64, 83.0);
    const RoiMapping m = build_roi_camera(src, {Vec2(50, 30), 40.0}, 64);
    const Image pattern = smooth_pattern(96, 64);
    const Image roi = warp_homography(pattern, m.homography, 64, 64);
    const Mat3 inv = m.homography.inverse();
    const Image back = warp_homography(roi, inv, 96, 64);
    // doubly interior: source pixels whose ROI location has a full bilinear neighbourhood
    Image mask(96, 64, 1);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 96; ++x) {
            const Vec2 u = apply_h(inv, Vec2(x + 0.5, y + 0.5));
            if (!(u.x() > 1.5 && u.y() > 1.5 && u.x() < 62.5 && u.y() < 62.5)) continue;
            // and the ROI neighbours themselves sampled inside the source
            bool inside = true;
            for (double dy : {-1.0, 1.0})
                for (double dx : {-1.0, 1.0}) {
                    const Vec2 q = apply_h(m.homography, u + Vec2(dx, dy));
                    inside = inside && q.x() > 1.0 && q.y() > 1.0 && q.x() < 95.0 && q.y() < 63.0;
                }
            if (inside) mask.at(x, y) = 1.0;
        }
    EXPECT_GE(psnr(back, pattern, &mask), 40.0);
}

TEST(ConditioningChannels, RaysAndFocalTerms) {
    const Camera src = source_camera();
    const RoiMapping m = build_roi_camera(src, {Vec2(30, 40), 18.0}, 32);
    const Image c = conditioning_channels(m, 32);
    ASSERT_EQ(c.channels, 6);
    // even size: the optical axis falls between pixels, so check symmetry and the corner
    const Vec3 corner_local = camera_ray_local(m.cam_roi, Vec2(0.5, 0.5));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(c.at(0, 0, k), corner_local[k], 1e-9);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            EXPECT_NEAR(c.at(x, y, 3) * c.at(x, y, 4), 1.0, 1e-12);
            EXPECT_EQ(c.at(x, y, 5), 0.0);
        }
    const RoiMapping odd = build_roi_camera(src, {Vec2(30, 40), 18.0}, 33);
    const Image co = conditioning_channels(odd, 33);
    EXPECT_NEAR(co.at(16, 16, 0), 0.0, 1e-12);
    EXPECT_NEAR(co.at(16, 16, 1), 0.0, 1e-12);
    EXPECT_NEAR(co.at(16, 16, 2), 1.0, 1e-12);
}

TEST(GaussiansToSourceFrame, IdentityAndInverse) {
    Rng rng(6);
    const Camera src = source_camera();
    const RoiMapping m = build_roi_camera(src, {Vec2(70, 20), 25.0}, 64);
    GaussianSet gs(random_scene(rng, roi_frame_camera(m, src), 20));
    const GaussianSet same = gaussians_to_source_frame(gs, src, src);
    for (std::size_t i = 0; i < gs.size(); ++i) {
        EXPECT_NEAR((same.items[i].mean - gs.items[i].mean).norm(), 0.0, 1e-12);
        EXPECT_NEAR((same.items[i].rotation - gs.items[i].rotation).norm(), 0.0, 1e-12);
    }
    const GaussianSet there = gaussians_to_source_frame(gs, m.cam_roi, src);
    const GaussianSet back = gaussians_to_source_frame(there, src, m.cam_roi);
    for (std::size_t i = 0; i < gs.size(); ++i) {
        EXPECT_NEAR((back.items[i].mean - gs.items[i].mean).norm(), 0.0, 1e-12);
        EXPECT_NEAR((back.items[i].rotation - gs.items[i].rotation).norm(), 0.0, 1e-12);
        EXPECT_EQ(there.items[i].scales, gs.items[i].scales);
        EXPECT_EQ(there.items[i].opacity, gs.items[i].opacity);
        EXPECT_EQ(there.items[i].color, gs.items[i].color);
    }
}

TEST(GaussiansToSourceFrame, CenterMismatch) {
    Camera a = source_camera(), b = source_camera();
    b.center.x() += 1e-6;
    try {
        gaussians_to_source_frame(GaussianSet{}, a, b);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::CameraCenterMismatch);
    }
}

TEST(GaussiansToSourceFrame, CrossRenderConsistency) {
    Camera src = simple_camera(192, 128, 96.0 / std::tan(M_PI / 6));
    src.rotation = quat_to_matrix(Quat(0.99, 0.05, 0.1, 0.0).normalized());
    const RoiMapping m = build_roi_camera(src, {Vec2(120, 50), 40.0}, 64);
    const Camera frame = roi_frame_camera(m, src);
    // a smooth, dense layer of blobs filling the ROI
    std::vector<Gaussian3D> items;
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            Gaussian3D g;
            const double z = 1.0 + 0.2 * std::sin(0.4 * i + 0.3 * j);
            g.mean = z * camera_ray(frame, Vec2(4.0 * j + 2, 4.0 * i + 2));
            g.scales = Vec3::Constant(2.5 * z / frame.focal);
            g.opacity = 0.8;
            g.color = Vec3(0.5 + 0.4 * std::sin(0.3 * i), 0.5 + 0.4 * std::cos(0.2 * j), 0.5);
            items.push_back(g);
        }
    const GaussianSet original(items);
    const GaussianSet moved = gaussians_to_source_frame(original, m.cam_roi, src);

    const RenderOutput in_roi = render(original, frame);
    const RenderOutput in_roi_moved = render(moved, m.cam_roi);
    for (std::size_t i = 0; i < in_roi.color.data.size(); ++i)
        EXPECT_NEAR(in_roi.color.data[i], in_roi_moved.color.data[i], 1e-6);

    const RenderOutput in_src = render(moved, src);
    const Image warped = warp_homography(in_src.color, m.homography, 64, 64);
    Image mask(64, 64, 1);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const Vec2 q = apply_h(m.homography, Vec2(x + 0.5, y + 0.5));
            if (q.x() > 1.0 && q.y() > 1.0 && q.x() < src.width - 1.0 && q.y() < src.height - 1.0) mask.at(x, y) = 1.0;
        }
    EXPECT_GE(psnr(warped, in_roi.color, &mask), 35.0);
}

TEST(FaceBox, JsonRoundTrip) {
    const FaceBox b{Vec2(12.5, 7.25), 19.0};
    const FaceBox back = face_box_from_json(face_box_to_json(b));
    EXPECT_EQ(back.center, b.center);
    EXPECT_EQ(back.size, b.size);
    EXPECT_EQ(face_box_to_json(b).dump(), R"({"center":[12.5,7.25],"size":19.0})");
}
