// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/geometry.hpp"

#include <cmath>
#include <sstream>

namespace frf {

double dot(const Vec3 &a, const Vec3 &b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 cross(const Vec3 &a, const Vec3 &b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3 &a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(const Vec3 &a) {
    const double n = norm(a);
    if (n == 0.0) throw ContractError("cannot normalize a zero vector");
    return (1.0 / n) * a;
}

void CameraView::validate(double rotation_tol) const {
    auto fail = [](const std::string &field, const std::string &why) {
        throw ValidationError("camera field '" + field + "': " + why);
    };
    if (!(fx > 0)) fail("fx", "must be positive");
    if (!(fy > 0)) fail("fy", "must be positive");
    if (!(near > 0)) fail("near", "must be positive");
    if (!(far > near)) fail("far", "must exceed near");
    if (width <= 0 || height <= 0) fail("width/height", "must be positive");
    const auto &m = world_to_camera;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double d = 0;
            for (int k = 0; k < 3; ++k) d += m[i * 4 + k] * m[j * 4 + k];
            const double expect = i == j ? 1.0 : 0.0;
            if (std::abs(d - expect) > rotation_tol) {
                std::ostringstream s;
                s << "rotation block not orthonormal (row " << i << " . row " << j << " = " << d << ")";
                fail("world_to_camera", s.str());
            }
        }
    if (m[12] != 0 || m[13] != 0 || m[14] != 0 || m[15] != 1) fail("world_to_camera", "last row must be 0 0 0 1");
    if (image.defined()) {
        if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != height || image.dim(2) != width) {
            fail("image", "shape " + shape_str(image.shape()) + " does not match " + std::to_string(height) + "x" +
                              std::to_string(width));
        }
    }
}

Vec3 CameraView::to_camera(const Vec3 &p) const {
    const auto &m = world_to_camera;
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3], m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11]};
}

Vec3 CameraView::to_world(const Vec3 &c) const {
    const auto &m = world_to_camera;
    const Vec3 q{c[0] - m[3], c[1] - m[7], c[2] - m[11]};
    return {m[0] * q[0] + m[4] * q[1] + m[8] * q[2], m[1] * q[0] + m[5] * q[1] + m[9] * q[2],
            m[2] * q[0] + m[6] * q[1] + m[10] * q[2]};
}

Vec3 CameraView::center() const { return to_world({0, 0, 0}); }

Vec3 CameraView::axis() const {
    const auto &m = world_to_camera;
    return {m[8], m[9], m[10]};
}

Projection project(const Vec3 &world, const CameraView &cam) {
    const Vec3 c = cam.to_camera(world);
    Projection p;
    p.depth = c[2];
    p.in_front = c[2] > 1e-6;
    if (p.in_front) {
        p.u = cam.fx * c[0] / c[2] + cam.cx;
        p.v = cam.fy * c[1] / c[2] + cam.cy;
    }
    return p;
}

Vec3 unproject(double u, double v, double depth, const CameraView &cam) {
    if (!(depth > 0)) throw ContractError("unproject: depth must be positive, got " + std::to_string(depth));
    return cam.to_world({(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth});
}

Vec3 ray_direction(double u, double v, const CameraView &cam) {
    const Vec3 d{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
    const auto &m = cam.world_to_camera;
    return {m[0] * d[0] + m[4] * d[1] + m[8] * d[2], m[1] * d[0] + m[5] * d[1] + m[9] * d[2],
            m[2] * d[0] + m[6] * d[1] + m[10] * d[2]};
}

DepthSpacing parse_depth_spacing(const std::string &s) {
    if (s == "linear") return DepthSpacing::linear;
    if (s == "inverse") return DepthSpacing::inverse;
    throw ValidationError("unknown depth_spacing '" + s + "' (expected linear or inverse)");
}

std::string to_string(DepthSpacing s) { return s == DepthSpacing::inverse ? "inverse" : "linear"; }

std::vector<double> plane_depths(double near, double far, int D, DepthSpacing spacing) {
    if (D < 2) throw ContractError("plane_depths: need D >= 2, got " + std::to_string(D));
    if (!(near > 0) || !(far > near)) {
        throw ContractError("plane_depths: need 0 < near < far, got near=" + std::to_string(near) + " far=" + std::to_string(far));
    }
    std::vector<double> out(static_cast<std::size_t>(D));
    for (int d = 0; d < D; ++d) {
        const double t = (d + 0.5) / D;
        out[static_cast<std::size_t>(d)] =
            spacing == DepthSpacing::linear ? near + t * (far - near) : 1.0 / (1.0 / near + t * (1.0 / far - 1.0 / near));
    }
    return out;
}

std::vector<double> depth_gaps(const std::vector<double> &depths) {
    const std::size_t n = depths.size();
    std::vector<double> g(n);
    for (std::size_t i = 0; i + 1 < n; ++i) g[i] = depths[i + 1] - depths[i];
    if (n >= 2) g[n - 1] = g[n - 2];
    return g;
}

RayBundle make_rays(const CameraView &target, int s, int D, DepthSpacing spacing) {
    if (s < 1) throw ContractError("make_rays: subsample factor must be >= 1");
    if (target.width % s != 0 || target.height % s != 0) {
        throw ContractError("make_rays: subsample " + std::to_string(s) + " does not divide " +
                            std::to_string(target.height) + "x" + std::to_string(target.width));
    }
    RayBundle rb;
    rb.s = s;
    rb.h = target.height / s;
    rb.w = target.width / s;
    rb.origin = target.center();
    rb.depths = plane_depths(target.near, target.far, D, spacing);
    const auto gaps = depth_gaps(rb.depths);
    rb.dirs.resize(static_cast<std::size_t>(rb.h * rb.w));
    rb.deltas.resize(static_cast<std::size_t>(rb.h * rb.w * D));
    for (int i = 0; i < rb.h; ++i)
        for (int j = 0; j < rb.w; ++j) {
            const std::size_t r = static_cast<std::size_t>(i * rb.w + j);
            rb.dirs[r] = ray_direction((j + 0.5) * s, (i + 0.5) * s, target);
            const double len = norm(rb.dirs[r]);
            for (int d = 0; d < D; ++d) rb.deltas[r * static_cast<std::size_t>(D) + static_cast<std::size_t>(d)] = gaps[static_cast<std::size_t>(d)] * len;
        }
    return rb;
}

CameraView look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up, double fx, double fy, double cx, double cy,
                   int width, int height, double near, double far) {
    const Vec3 z = normalized(target - eye);
    const Vec3 x = normalized(cross(z, up));
    // Camera y points down in the image, i.e. away from `up`.
    const Vec3 y = cross(z, x);
    CameraView cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.width = width;
    cam.height = height;
    cam.near = near;
    cam.far = far;
    const Vec3 rows[3] = {x, y, z};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) cam.world_to_camera[static_cast<std::size_t>(i * 4 + j)] = rows[i][static_cast<std::size_t>(j)];
        cam.world_to_camera[static_cast<std::size_t>(i * 4 + 3)] = -dot(rows[i], eye);
    }
    cam.world_to_camera[12] = cam.world_to_camera[13] = cam.world_to_camera[14] = 0;
    cam.world_to_camera[15] = 1;
    return cam;
}

CameraView pad_to_multiple(const CameraView &cam, int m) {
    CameraView out = cam;
    out.width = (cam.width + m - 1) / m * m;
    out.height = (cam.height + m - 1) / m * m;
    if (cam.image.defined() && (out.width != cam.width || out.height != cam.height)) {
        auto img = Tensor<float>::zeros({3, out.height, out.width});
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < cam.height; ++i)
                for (int j = 0; j < cam.width; ++j)
                    img.ptr()[(c * out.height + i) * out.width + j] = cam.image.ptr()[(c * cam.height + i) * cam.width + j];
        out.image = img;
    }
    return out;
}

CameraView crop_view(const CameraView &cam, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > cam.width || y0 + h > cam.height) {
        throw ContractError("crop_view: window " + std::to_string(w) + "x" + std::to_string(h) + " at (" + std::to_string(x0) +
                            ", " + std::to_string(y0) + ") outside " + std::to_string(cam.width) + "x" + std::to_string(cam.height));
    }
    CameraView out = cam;
    out.cx = cam.cx - x0;
    out.cy = cam.cy - y0;
    out.width = w;
    out.height = h;
    if (cam.image.defined()) {
        auto img = Tensor<float>::zeros({3, h, w});
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    img.ptr()[(c * h + i) * w + j] = cam.image.ptr()[(c * cam.height + i + y0) * cam.width + j + x0];
        out.image = img;
    }
    return out;
}

} // namespace frf
