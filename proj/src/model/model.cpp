// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace frf {

double depth_to_index(double z, double near, double far, int D, DepthSpacing spacing) {
    if (spacing == DepthSpacing::linear) return (z - near) / (far - near) * D - 0.5;
    return (1.0 / near - 1.0 / z) / (1.0 / near - 1.0 / far) * D - 0.5;
}

double outside_reference_fraction(const CameraView &ref, const CameraView &target, int D, DepthSpacing spacing) {
    const auto rays = make_rays(target, 1, D, spacing);
    const std::int64_t R = static_cast<std::int64_t>(rays.h) * rays.w;
    std::int64_t outside = 0;
    auto in = [](double x, double len) { return x >= -0.5 && x <= len - 0.5; };
    for (std::int64_t r = 0; r < R; ++r)
        for (int d = 0; d < D; ++d) {
            const auto p = project(rays.point(static_cast<int>(r), d), ref);
            const bool inside = p.in_front && in(p.u - 0.5, ref.width) && in(p.v - 0.5, ref.height) &&
                                in(depth_to_index(p.depth, ref.near, ref.far, D, spacing), D);
            outside += !inside;
        }
    return static_cast<double>(outside) / static_cast<double>(R * D);
}

template <typename T>
RenderOutput<T> crop_output(const RenderOutput<T> &out, int y0, int x0, int h, int w) {
    if (y0 == 0 && x0 == 0 && h == out.H && w == out.W) return out;
    RenderOutput<T> c;
    c.H = h;
    c.W = w;
    c.D = out.D;
    auto crop = [&](const Tensor<T> &t, int rank) {
        return rank == 3 ? slice(slice(t, 1, y0, h), 2, x0, w) : slice(slice(t, 0, y0, h), 1, x0, w);
    };
    c.rgb = crop(out.rgb, 3);
    c.depth = crop(out.depth, 2);
    c.opacity = crop(out.opacity, 2);
    c.weights = crop(out.weights, 3);
    return c;
}

template <typename T>
Model<T>::Model(const ModelConfig &cfg) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.init_seed);
    ParamBuilder<T> root(params_, rng, "", "decoder");
    auto coarse = root.scope("coarse");
    encoder_ = std::make_unique<Encoder<T>>(coarse.scope("encoder").with_group("encoder"), cfg.encoder);
    const int fw = cfg.encoder.feature_width();
    volume_ = std::make_unique<VolumeBuilder<T>>(coarse.scope("volume"), cfg.volume, fw);
    decoder_ = std::make_unique<Decoder<T>>(coarse.scope("decoder"), cfg.decoder, cfg.volume.channels, cfg.s);
    if (cfg.fine.enabled) {
        auto fine = root.scope("fine");
        VolumeConfig fv = cfg.volume;
        fv.channels = cfg.fine.channels;
        fv.window = cfg.fine.window;
        fv.groups = cfg.fine.groups;
        fine_volume_ = std::make_unique<VolumeBuilder<T>>(fine.scope("volume"), fv, fw);
        unet_ = std::make_unique<FineUNet<T>>(fine.scope("unet"), cfg.fine, cfg.decoder.act);
    }
}

template <typename T>
int Model<T>::size_multiple() const {
    return cfg_.fine.enabled ? std::lcm(cfg_.s, 4) : cfg_.s;
}

template <typename T>
SourceViews<T> Model<T>::prepare(const std::vector<CameraView> &sources) const {
    SourceViews<T> v;
    for (const auto &cam : sources) {
        if (!cam.image.defined()) throw ContractError("prepare: source view has no image");
        v.cams.push_back(pad_to_multiple(cam, 8));
        v.images.push_back(cast<T>(v.cams.back().image));
    }
    v.pyramids = (*encoder_)(v.images);
    return v;
}

template <typename T>
SampleGrid Model<T>::coarse_grid(const CameraView &target, const SourceViews<T> &views) const {
    const CameraView &frame = cfg_.orientation == Orientation::target ? target : views.cams.at(0);
    return grid_from_rays(make_rays(frame, cfg_.s, cfg_.depth_planes, cfg_.spacing));
}

template <typename T>
RenderOutput<T> Model<T>::render_coarse(const SourceViews<T> &views, const CameraView &target) const {
    if (cfg_.orientation == Orientation::reference) return render_reference(views, target);
    const auto grid = grid_from_rays(make_rays(target, cfg_.s, cfg_.depth_planes, cfg_.spacing));
    const auto vol = volume_->build(views, grid);
    const auto field = (*decoder_)(vol.z);
    const auto samples = samples_from_rays(make_rays(target, 1, cfg_.depth_planes, cfg_.spacing));
    return composite(field.density, field.color, samples, target.height, target.width);
}

template <typename T>
RenderOutput<T> Model<T>::render_reference(const SourceViews<T> &views, const CameraView &target) const {
    // Volume and field live in the frustum of source view 0; the target's rays
    // resample the decoded field.
    const CameraView &ref = views.cams.at(0);
    const int D = cfg_.depth_planes;
    const auto vol = volume_->build(views, grid_from_rays(make_rays(ref, cfg_.s, D, cfg_.spacing)));
    const auto field = (*decoder_)(vol.z);
    const auto joint = concat<T>({field.color, field.density}, 0); // [4 x D x H0 x W0]
    const std::int64_t Hr = joint.dim(2), Wr = joint.dim(3);
    const auto rays = make_rays(target, 1, D, cfg_.spacing);
    const std::int64_t R = static_cast<std::int64_t>(rays.h) * rays.w;
    std::vector<T> coords(static_cast<std::size_t>(R * D * 3));
    auto snap = [](double x, double len) {
        // Half a cell of margin around the outermost centers.
        if (x >= -0.5 && x < 0.0) return 0.0;
        if (x > len - 1 && x <= len - 0.5) return len - 1;
        return x;
    };
    for (std::int64_t r = 0; r < R; ++r)
        for (int d = 0; d < D; ++d) {
            const auto p = project(rays.point(static_cast<int>(r), d), ref);
            T *c = coords.data() + (r * D + d) * 3;
            if (!p.in_front) {
                c[0] = c[1] = c[2] = T(-1e9);
                continue;
            }
            c[0] = static_cast<T>(snap(p.u - 0.5, static_cast<double>(Wr)));
            c[1] = static_cast<T>(snap(p.v - 0.5, static_cast<double>(Hr)));
            c[2] = static_cast<T>(snap(depth_to_index(p.depth, ref.near, ref.far, D, cfg_.spacing), static_cast<double>(D)));
        }
    auto s = grid_sample_trilinear(joint, Tensor<T>::from({R * D, 3}, std::move(coords)));
    auto vals = permute(reshape(s.values, {R, D, 4}), {2, 1, 0}); // [4 x D x R]
    auto color = slice(vals, 0, 0, 3);
    auto density = slice(vals, 0, 3, 1);
    return composite(density, color, samples_from_rays(rays), target.height, target.width);
}

template <typename T>
RenderOutput<T> Model<T>::render_patched(const SourceViews<T> &views, const CameraView &target, int P, int overlap) const {
    if (cfg_.orientation != Orientation::target) throw ContractError("render_patched: only the target orientation supports tiles");
    NoGradGuard ng;
    const int s = cfg_.s, D = cfg_.depth_planes;
    const auto lo = make_rays(target, s, D, cfg_.spacing);
    const auto vol = volume_->build(views, grid_from_rays(lo));
    if (P == 1) {
        const auto field = (*decoder_)(vol.z);
        return composite(field.density, field.color, samples_from_rays(make_rays(target, 1, D, cfg_.spacing)), target.height,
                         target.width);
    }
    const int H = target.height, W = target.width;
    const auto plan = plan_patches(lo.h, lo.w, P, overlap);
    Buffer<T> rgb(static_cast<std::size_t>(3) * H * W), depth(static_cast<std::size_t>(H) * W),
        opacity(static_cast<std::size_t>(H) * W), weights(static_cast<std::size_t>(D) * H * W);
    std::vector<int> hits(static_cast<std::size_t>(H) * W, 0);
    for (const auto &p : plan) {
        if (p.ph < 3 || p.pw < 3) {
            throw ContractError("render_patched: tile of " + std::to_string(p.ph) + "x" + std::to_string(p.pw) +
                                " cells is smaller than the 3x3 kernel support");
        }
        const auto z = slice(slice(vol.z, 2, p.y0, p.ph), 3, p.x0, p.pw);
        const auto field = (*decoder_)(z);
        const auto cam = crop_view(target, p.x0 * s, p.y0 * s, p.pw * s, p.ph * s);
        const auto out = composite(field.density, field.color, samples_from_rays(make_rays(cam, 1, D, cfg_.spacing)),
                                   cam.height, cam.width);
        const int pw = cam.width, ph = cam.height;
        for (int i = 0; i < ph; ++i)
            for (int j = 0; j < pw; ++j) {
                const std::size_t dst = static_cast<std::size_t>(p.y0 * s + i) * W + p.x0 * s + j;
                const std::size_t src = static_cast<std::size_t>(i) * pw + j;
                for (int c = 0; c < 3; ++c)
                    rgb[static_cast<std::size_t>(c) * H * W + dst] += out.rgb.ptr()[static_cast<std::size_t>(c) * ph * pw + src];
                depth[dst] += out.depth.ptr()[src];
                opacity[dst] += out.opacity.ptr()[src];
                for (int d = 0; d < D; ++d)
                    weights[static_cast<std::size_t>(d) * H * W + dst] += out.weights.ptr()[static_cast<std::size_t>(d) * ph * pw + src];
                ++hits[dst];
            }
    }
    // Plain average over the patches covering each pixel.
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (hits[i] == 1) continue;
        const T inv = T(1) / static_cast<T>(hits[i]);
        for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(c) * H * W + i] *= inv;
        depth[i] *= inv;
        opacity[i] *= inv;
        for (int d = 0; d < D; ++d) weights[static_cast<std::size_t>(d) * H * W + i] *= inv;
    }
    RenderOutput<T> r;
    r.H = H;
    r.W = W;
    r.D = D;
    r.rgb = Tensor<T>::from_buffer({3, H, W}, std::move(rgb));
    r.depth = Tensor<T>::from_buffer({H, W}, std::move(depth));
    r.opacity = Tensor<T>::from_buffer({H, W}, std::move(opacity));
    r.weights = Tensor<T>::from_buffer({D, H, W}, std::move(weights));
    return r;
}

template <typename T>
RenderOutput<T> Model<T>::render_fine(const SourceViews<T> &views, const CameraView &target, const RenderOutput<T> &coarse,
                                      std::mt19937_64 *rng) const {
    if (!unet_) throw ContractError("render_fine: model has no fine stage");
    const int D = coarse.D, N2 = cfg_.fine.samples;
    const auto rays = make_rays(target, 1, D, cfg_.spacing);
    const std::int64_t R = static_cast<std::int64_t>(rays.h) * rays.w;
    if (coarse.H != rays.h || coarse.W != rays.w) throw DimensionError("render_fine: coarse output does not match the target size");
    std::vector<double> depths(static_cast<std::size_t>(R * N2));
    std::vector<double> w(static_cast<std::size_t>(D));
    const T *cw = coarse.weights.ptr();
    for (std::int64_t r = 0; r < R; ++r) {
        for (int d = 0; d < D; ++d) w[static_cast<std::size_t>(d)] = static_cast<double>(cw[d * R + r]);
        const auto z = pdf_resample(w, rays.depths, N2, rng);
        std::copy(z.begin(), z.end(), depths.begin() + r * N2);
    }
    const auto vol = fine_volume_->build(views, grid_from_depths(rays, depths, N2));
    const auto field = (*unet_)(vol.z);
    return composite(field.density, field.color, samples_from_depths(rays, depths, N2), target.height, target.width);
}

template <typename T>
RenderResult<T> Model<T>::render(const SourceViews<T> &views, const CameraView &target, const RenderOptions &opts) const {
    const int m = size_multiple();
    const CameraView padded = pad_to_multiple(target, m);
    const bool use_fine = opts.fine && unet_;
    RenderResult<T> res;
    if (opts.patches == 1) {
        res.coarse = render_coarse(views, padded);
        if (use_fine) res.fine = render_fine(views, padded, res.coarse, opts.rng);
    } else {
        res.coarse = render_patched(views, padded, opts.patches, opts.overlap);
        if (use_fine) {
            // Fine pass tile by tile on the core tiles at full resolution.
            NoGradGuard ng;
            const auto plan = plan_patches(padded.height / cfg_.s, padded.width / cfg_.s, opts.patches, 0);
            const int H = padded.height, W = padded.width, s = cfg_.s;
            auto rgb = Tensor<T>::zeros({3, H, W}), depth = Tensor<T>::zeros({H, W}), opacity = Tensor<T>::zeros({H, W});
            auto weights = Tensor<T>::zeros({cfg_.fine.samples, H, W});
            for (const auto &p : plan) {
                const int y0 = p.cy0 * s, x0 = p.cx0 * s, h = p.ch * s, w = p.cw * s;
                const auto cam = crop_view(padded, x0, y0, w, h);
                const auto out = render_fine(views, cam, crop_output(res.coarse, y0, x0, h, w), opts.rng);
                auto paste = [&](Tensor<T> &dst, const Tensor<T> &src, int planes) {
                    for (int c = 0; c < planes; ++c)
                        for (int i = 0; i < h; ++i)
                            for (int j = 0; j < w; ++j)
                                dst.ptr()[(static_cast<std::size_t>(c) * H + y0 + i) * W + x0 + j] =
                                    src.ptr()[(static_cast<std::size_t>(c) * h + i) * w + j];
                };
                paste(rgb, out.rgb, 3);
                paste(depth, out.depth, 1);
                paste(opacity, out.opacity, 1);
                paste(weights, out.weights, cfg_.fine.samples);
            }
            RenderOutput<T> f;
            f.H = H;
            f.W = W;
            f.D = cfg_.fine.samples;
            f.rgb = rgb;
            f.depth = depth;
            f.opacity = opacity;
            f.weights = weights;
            res.fine = f;
        }
    }
    res.coarse = crop_output(res.coarse, 0, 0, target.height, target.width);
    if (res.fine) res.fine = crop_output(*res.fine, 0, 0, target.height, target.width);
    return res;
}

template RenderOutput<float> crop_output<float>(const RenderOutput<float> &, int, int, int, int);
template RenderOutput<double> crop_output<double>(const RenderOutput<double> &, int, int, int, int);
template class Model<float>;
template class Model<double>;

} // namespace frf
