// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/errors.hpp"
#include "frf/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace frf;

namespace {

CameraView identity_cam(double f, double c) {
    CameraView cam;
    cam.fx = cam.fy = f;
    cam.cx = cam.cy = c;
    cam.width = cam.height = 64;
    cam.near = 1;
    cam.far = 3;
    return cam;
}

// Rotation from a random unit quaternion.
CameraView random_cam(std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> u(-2, 2);
    double q[4];
    double len = 0;
    for (double &v : q) {
        v = n(rng);
        len += v * v;
    }
    len = std::sqrt(len);
    for (double &v : q) v /= len;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    CameraView cam;
    cam.world_to_camera = {1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w), u(rng),
                           2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w), u(rng),
                           2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y), u(rng),
                           0, 0, 0, 1};
    cam.fx = 50 + 100 * std::abs(n(rng));
    cam.fy = 50 + 100 * std::abs(n(rng));
    cam.cx = 32 + u(rng);
    cam.cy = 24 + u(rng);
    cam.width = 64;
    cam.height = 48;
    cam.near = 0.5;
    cam.far = 10;
    return cam;
}

} // namespace

TEST(PlaneDepths, MidpointRule) {
    const auto d = plane_depths(1, 3, 4);
    ASSERT_EQ(d.size(), 4u);
    EXPECT_DOUBLE_EQ(d[0], 1.25);
    EXPECT_DOUBLE_EQ(d[1], 1.75);
    EXPECT_DOUBLE_EQ(d[2], 2.25);
    EXPECT_DOUBLE_EQ(d[3], 2.75);
}

TEST(PlaneDepths, ArithmeticSequence) {
    for (int D : {2, 7, 64, 257}) {
        const auto d = plane_depths(0.7, 9.3, D);
        const double step = (9.3 - 0.7) / D;
        for (int i = 0; i + 1 < D; ++i) EXPECT_LT(std::abs(d[i + 1] - d[i] - step), 1e-12);
    }
}

TEST(PlaneDepths, InverseSpacingIsUniformInDisparity) {
    const auto d = plane_depths(1, 4, 8, DepthSpacing::inverse);
    for (int i = 0; i + 1 < 8; ++i) EXPECT_GT(d[i + 1], d[i]);
    const double step = 1 / d[0] - 1 / d[1];
    for (int i = 0; i + 1 < 8; ++i) EXPECT_NEAR(1 / d[i] - 1 / d[i + 1], step, 1e-12);
}

TEST(Project, Examples) {
    auto cam = identity_cam(100, 50);
    const auto p = project({1, 0, 2}, cam);
    EXPECT_DOUBLE_EQ(p.u, 100);
    EXPECT_DOUBLE_EQ(p.v, 50);
    EXPECT_DOUBLE_EQ(p.depth, 2);
    EXPECT_TRUE(p.in_front);
    const auto axis = project({0, 0, 2}, cam);
    EXPECT_DOUBLE_EQ(axis.u, 50);
    EXPECT_DOUBLE_EQ(axis.v, 50);
    EXPECT_FALSE(project({0, 0, -1}, cam).in_front);
    EXPECT_FALSE(project({0, 0, 1e-7}, cam).in_front);
}

TEST(Unproject, PrincipalPointLiesOnAxis) {
    std::mt19937_64 rng(3);
    const auto cam = random_cam(rng);
    const Vec3 p = unproject(cam.cx, cam.cy, 2.5, cam);
    const Vec3 expect = cam.center() + 2.5 * cam.axis();
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], expect[i], 1e-12);
}

TEST(Unproject, NonPositiveDepthRejected) {
    auto cam = identity_cam(1, 0);
    EXPECT_THROW(unproject(0, 0, 0, cam), ContractError);
    EXPECT_THROW(unproject(0, 0, -1, cam), ContractError);
}

TEST(Project, RoundTripRandomPoses) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> uu(-20, 80), zz(0.6, 9);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto cam = random_cam(rng);
        const double u = uu(rng), v = uu(rng), z = zz(rng);
        const Vec3 x = unproject(u, v, z, cam);
        const auto p = project(x, cam);
        worst = std::max({worst, std::abs(p.u - u), std::abs(p.v - v), std::abs(p.depth - z)});

        // unproject . project on a world point in front of the camera
        const Vec3 w = cam.to_world({uu(rng) / 40, uu(rng) / 40, zz(rng)});
        const auto q = project(w, cam);
        const Vec3 back = unproject(q.u, q.v, q.depth, cam);
        for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(back[i] - w[i]));
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(RayDirection, IdentityPoseExample) {
    auto cam = identity_cam(1, 0);
    const Vec3 d = ray_direction(0.5, 0.5, cam);
    EXPECT_DOUBLE_EQ(d[0], 0.5);
    EXPECT_DOUBLE_EQ(d[1], 0.5);
    EXPECT_DOUBLE_EQ(d[2], 1);
}

TEST(RayDirection, PrincipalPointIsOpticalAxis) {
    std::mt19937_64 rng(5);
    const auto cam = random_cam(rng);
    const Vec3 d = ray_direction(cam.cx, cam.cy, cam);
    const Vec3 a = cam.axis();
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(d[i], a[i], 1e-12);
}

TEST(MakeRays, BlockCentersAndDeltas) {
    auto cam = identity_cam(10, 4);
    cam.width = 8;
    cam.height = 8;
    const auto rays = make_rays(cam, 4, 3);
    EXPECT_EQ(rays.h, 2);
    EXPECT_EQ(rays.w, 2);
    ASSERT_EQ(rays.dirs.size(), 4u);
    // Ray (0, 1) passes through pixel coordinate (6, 2).
    const Vec3 d = rays.dirs[1];
    EXPECT_NEAR(d[0], (6 - 4) / 10.0, 1e-15);
    EXPECT_NEAR(d[1], (2 - 4) / 10.0, 1e-15);
    EXPECT_DOUBLE_EQ(d[2], 1);
    const double step = 2.0 / 3;
    for (int r = 0; r < 4; ++r)
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(rays.deltas[r * 3 + k], step * norm(rays.dirs[r]), 1e-12);
    for (double delta : rays.deltas) EXPECT_GT(delta, 0);
    // Sample points sit on planes of constant camera z.
    for (int r = 0; r < 4; ++r) EXPECT_NEAR(cam.to_camera(rays.point(r, 2))[2], rays.depths[2], 1e-12);
}

TEST(MakeRays, Contracts) {
    auto cam = identity_cam(10, 4);
    cam.width = 8;
    cam.height = 8;
    EXPECT_THROW(make_rays(cam, 3, 4), ContractError);
    EXPECT_THROW(make_rays(cam, 4, 1), ContractError);
    cam.far = cam.near;
    EXPECT_THROW(make_rays(cam, 4, 4), ContractError);
}

TEST(CameraView, ValidateNamesField) {
    auto cam = identity_cam(10, 4);
    EXPECT_NO_THROW(cam.validate());
    auto bad = cam;
    bad.far = 0.5;
    try {
        bad.validate();
        FAIL();
    } catch (const ValidationError &e) {
        EXPECT_NE(std::string(e.what()).find("far"), std::string::npos);
    }
    bad = cam;
    bad.fx = 0;
    EXPECT_THROW(bad.validate(), ValidationError);
    bad = cam;
    bad.world_to_camera[0] = 1.01;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(LookAt, OrientationConventions) {
    const auto cam = look_at({0, 0, -4}, {0, 0, 0}, {0, -1, 0}, 50, 50, 16, 16, 32, 32, 1, 8);
    EXPECT_NO_THROW(cam.validate());
    const auto axis = cam.axis();
    EXPECT_NEAR(axis[2], 1, 1e-12);
    // World +y is image-down when up = -y.
    const auto p = project({0, 1, 0}, cam);
    EXPECT_GT(p.v, cam.cy);
}

TEST(Epipolar, PureZTranslationShiftsRadially) {
    // Moving the camera along its axis moves projections along the line
    // through the principal point.
    auto a = identity_cam(80, 32);
    auto b = a;
    b.world_to_camera[11] = -0.5;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 64), z(1.5, 3);
    for (int i = 0; i < 100; ++i) {
        const Vec3 x = unproject(u(rng), u(rng), z(rng), a);
        const auto pa = project(x, a), pb = project(x, b);
        const double cross2 = (pa.u - a.cx) * (pb.v - a.cy) - (pa.v - a.cy) * (pb.u - a.cx);
        EXPECT_NEAR(cross2, 0, 1e-9);
    }
}

TEST(CropView, ShiftsPrincipalPoint) {
    auto cam = identity_cam(60, 32);
    cam.image = Tensor<float>::zeros({3, 64, 64});
    cam.image.ptr()[10 * 64 + 20] = 1;
    const auto c = crop_view(cam, 16, 8, 32, 24);
    EXPECT_EQ(c.width, 32);
    EXPECT_EQ(c.height, 24);
    EXPECT_DOUBLE_EQ(c.cx, 16);
    EXPECT_DOUBLE_EQ(c.cy, 24);
    EXPECT_EQ(c.image.ptr()[2 * 32 + 4], 1.f);
    const Vec3 x = unproject(20.5, 10.5, 2, cam);
    const auto p = project(x, c);
    EXPECT_NEAR(p.u, 4.5, 1e-12);
    EXPECT_NEAR(p.v, 2.5, 1e-12);
    EXPECT_THROW(crop_view(cam, 40, 0, 32, 8), ContractError);
}

TEST(PadToMultiple, KeepsIntrinsics) {
    auto cam = identity_cam(60, 30);
    cam.width = 30;
    cam.height = 21;
    cam.image = Tensor<float>::full({3, 21, 30}, 0.5f);
    const auto p = pad_to_multiple(cam, 8);
    EXPECT_EQ(p.width, 32);
    EXPECT_EQ(p.height, 24);
    EXPECT_DOUBLE_EQ(p.cx, cam.cx);
    EXPECT_EQ(p.image.ptr()[0], 0.5f);
    EXPECT_EQ(p.image.ptr()[31], 0.f);
}
