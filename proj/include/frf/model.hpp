// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/config.hpp"
#include "frf/decoder.hpp"
#include "frf/encoder.hpp"
#include "frf/render.hpp"
#include "frf/volume.hpp"

#include <memory>
#include <optional>
#include <random>

namespace frf {

struct RenderOptions {
    int patches = 1;  // P x P tiles of the low-resolution grid (target orientation only)
    int overlap = 0;  // tile overlap in low-resolution cells
    bool fine = true; // run the fine stage when the model has one
    std::mt19937_64 *rng = nullptr; // stratified fine sampling; null = deterministic midpoints
};

template <typename T>
struct RenderResult {
    RenderOutput<T> coarse;
    std::optional<RenderOutput<T>> fine;
    const RenderOutput<T> &final_output() const { return fine ? *fine : coarse; }
};

/// Encoder, coarse volume + decoder and the optional fine volume + U-Net,
/// with parameters named `coarse.*` and `fine.*`.
template <typename T>
class Model {
public:
    explicit Model(const ModelConfig &cfg);

    const ModelConfig &config() const { return cfg_; }
    ParameterSet<T> &params() { return params_; }
    const ParameterSet<T> &params() const { return params_; }
    const Decoder<T> &decoder() const { return *decoder_; }

    /// Pads sources to multiples of 8 and runs the encoder on them.
    SourceViews<T> prepare(const std::vector<CameraView> &sources) const;

    /// Coarse pass at full target resolution. Target sizes must be multiples of s.
    RenderOutput<T> render_coarse(const SourceViews<T> &views, const CameraView &target) const;
    /// Coarse pass decoded tile by tile from one shared volume, without
    /// gradients. P = 1 reproduces render_coarse bit for bit.
    RenderOutput<T> render_patched(const SourceViews<T> &views, const CameraView &target, int P, int overlap) const;
    /// Fine pass driven by the coarse compositing weights. Sizes must be
    /// multiples of 4.
    RenderOutput<T> render_fine(const SourceViews<T> &views, const CameraView &target, const RenderOutput<T> &coarse,
                                std::mt19937_64 *rng) const;

    /// Pads the target to the required multiple, renders and crops back.
    RenderResult<T> render(const SourceViews<T> &views, const CameraView &target, const RenderOptions &opts = {}) const;

    /// Frustum-volume sample grid of the coarse pass for `target`.
    SampleGrid coarse_grid(const CameraView &target, const SourceViews<T> &views) const;

    int size_multiple() const;

private:
    RenderOutput<T> render_reference(const SourceViews<T> &views, const CameraView &target) const;

    ModelConfig cfg_;
    ParameterSet<T> params_;
    std::unique_ptr<Encoder<T>> encoder_;
    std::unique_ptr<VolumeBuilder<T>> volume_;
    std::unique_ptr<Decoder<T>> decoder_;
    std::unique_ptr<VolumeBuilder<T>> fine_volume_;
    std::unique_ptr<FineUNet<T>> unet_;
};

/// Slices rows/columns [y0, y0 + h) x [x0, x0 + w) of every map.
template <typename T>
RenderOutput<T> crop_output(const RenderOutput<T> &out, int y0, int x0, int h, int w);

/// Fractional volume index of camera depth z for D planes between near and far.
double depth_to_index(double z, double near, double far, int D, DepthSpacing spacing);

/// Fraction of the target's full-resolution ray samples that fall outside the
/// frustum of `ref` (reference orientation evaluates them as empty space).
double outside_reference_fraction(const CameraView &ref, const CameraView &target, int D,
                                  DepthSpacing spacing = DepthSpacing::linear);

extern template class Model<float>;
extern template class Model<double>;

} // namespace frf
