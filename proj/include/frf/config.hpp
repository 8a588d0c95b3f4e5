// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/geometry.hpp"
#include "frf/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace frf {

struct EncoderConfig {
    int c2 = 32;
    int c4 = 48;
    int c8 = 64;
    int transformer_blocks = 2;
    int heads = 4;
    int ffn_mult = 2;
    int max_tokens = 8192; // K * (H/8) * (W/8) upper bound for joint attention
    Activation act = Activation::silu;

    int feature_width() const { return c2 + c4 + c8 + c8; }
};

enum class Orientation { target, reference };
Orientation parse_orientation(const std::string &s);
std::string to_string(Orientation o);

struct VolumeConfig {
    int channels = 64;
    int window = 9;
    int groups = 8;
    int agg_hidden = 32;
    bool use_color = true;
    bool use_feature = true;
    bool use_cosine = true;
    Activation act = Activation::silu;
    int cells_per_chunk = 4096;

    /// Width of the concatenated element vector fed to the projection.
    int element_width(int feature_width) const;
    void validate(int feature_width) const;
};

enum class DecoderKind { plus21d, conv3d, conv2d, conv1d, ray_transformer, mlp };
DecoderKind parse_decoder_kind(const std::string &s);
std::string to_string(DecoderKind k);

struct DecoderConfig {
    DecoderKind kind = DecoderKind::plus21d;
    int width = 64;
    int blocks = 12;      // residual blocks for the convolutional and mlp kinds
    int up_channels = 16; // channels after the upsampler
    int rt_blocks = 2;
    int rt_heads = 4;
    Activation act = Activation::silu;
};

struct FineConfig {
    bool enabled = false;
    int samples = 16;
    int channels = 16;
    int c1 = 32;
    int c2 = 64;
    int window = 9;
    int groups = 8;
};

struct ModelConfig {
    EncoderConfig encoder;
    VolumeConfig volume;
    DecoderConfig decoder;
    FineConfig fine;
    int s = 8;
    int depth_planes = 64;
    DepthSpacing spacing = DepthSpacing::linear;
    Orientation orientation = Orientation::target;
    std::uint64_t init_seed = 1;

    void validate() const;
};

enum class Stage { coarse, fine };
Stage parse_stage(const std::string &s);
std::string to_string(Stage s);

struct TrainConfig {
    ModelConfig model;
    Stage stage = Stage::coarse;
    int steps = 1000;
    double lr_encoder = 5e-5;
    double lr_decoder = 5e-4;
    int crop = 0; // 0 = full image
    std::uint64_t seed = 0;
    double lambda_l1 = 1.0;
    double lambda_ssim = 0.5;
    std::vector<int> source_views{0, 1, 2};
    std::vector<int> target_views; // empty = every view
    int log_every = 100;

    void validate() const;
};

/// Key/value form used by config files and checkpoint sidecars.
std::vector<std::pair<std::string, std::string>> to_entries(const TrainConfig &cfg);
/// Applies `key = value` pairs onto `cfg`; unknown keys are rejected with
/// a ValidationError naming the key.
void apply_entries(TrainConfig &cfg, const std::vector<std::pair<std::string, std::string>> &entries,
                   const std::string &origin);

TrainConfig load_train_config(const std::string &path);
void save_train_config(const TrainConfig &cfg, const std::string &path);

} // namespace frf
