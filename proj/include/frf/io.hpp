// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/geometry.hpp"
#include "frf/nn.hpp"
#include "frf/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace frf {

/// Binary P6 with maxval 255. Reads map bytes to [0, 1] by /255.
Tensor<float> read_ppm(const std::string &path);
/// Writes round(v * 255) with halves rounded up, values clamped to [0, 1].
template <typename T>
void write_ppm(const std::string &path, const Tensor<T> &image);
std::vector<std::uint8_t> encode_ppm(const Tensor<float> &image);
Tensor<float> decode_ppm(const std::vector<std::uint8_t> &bytes, const std::string &origin);

/// Single-channel little-endian PFM; rows stored bottom-up on disk.
void write_pfm(const std::string &path, const std::vector<float> &values, int height, int width);
std::vector<float> read_pfm(const std::string &path, int &height, int &width);

struct ManifestView {
    std::string image_path; // relative to the manifest directory
    std::string depth_path; // optional ground-truth depth (PFM)
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Mat4 world_to_camera{};
    int width = 0, height = 0;
    bool operator==(const ManifestView &) const = default;
};

struct SceneManifest {
    double near = 0, far = 0;
    std::vector<ManifestView> views;
    bool operator==(const SceneManifest &) const = default;
};

/// Parses and validates a manifest. Missing fields, far <= near and
/// rotations off orthonormal by more than 1e-4 raise ValidationError with
/// line context; missing images raise IoError with the path; image sizes
/// must match the declared width and height.
SceneManifest load_manifest(const std::string &path, bool check_images = true);
void save_manifest(const SceneManifest &m, const std::string &path);

/// Manifest plus decoded images as cameras.
struct Scene {
    std::string dir;
    SceneManifest manifest;
    std::vector<CameraView> views;
};
Scene load_scene(const std::string &dir);
CameraView camera_of(const ManifestView &v, double near, double far);

/// A single `view { ... }` style pose file (no image) for rendering novel views.
CameraView load_pose(const std::string &path);

struct CheckpointTensor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<CheckpointTensor> read_checkpoint(const std::string &path);
void write_checkpoint(const std::string &path, const std::vector<CheckpointTensor> &tensors);

template <typename T>
void save_checkpoint(const ParameterSet<T> &params, const std::string &path);

struct LoadOptions {
    bool strict = true;             // reject names the model does not have
    std::string optional_prefix;    // model parameters under this prefix may be absent from the file
};
/// Copies stored values into matching parameters (f32 upcast when T is
/// double). Shape mismatches are always errors; returns the loaded count.
template <typename T>
int load_checkpoint(ParameterSet<T> &params, const std::string &path, const LoadOptions &opts = {});

/// FNV-1a over names and raw parameter bytes, optionally limited to a prefix.
template <typename T>
std::uint64_t parameter_hash(const ParameterSet<T> &params, const std::string &prefix = "");

} // namespace frf
