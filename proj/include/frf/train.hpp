// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "frf/config.hpp"
#include "frf/io.hpp"
#include "frf/model.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace frf {

/// Mean SSIM over channels and valid 11 x 11 Gaussian windows (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1). Images [3 x h x w], h, w >= 11.
template <typename T>
Tensor<T> ssim(const Tensor<T> &a, const Tensor<T> &b);

/// 10 log10(1 / MSE), 99 when MSE < 1e-10.
template <typename T>
double psnr(const Tensor<T> &a, const Tensor<T> &b);

/// lambda_l1 * mean|pred - gt| + lambda_ssim * (1 - SSIM(pred, gt)).
template <typename T>
Tensor<T> image_loss(const Tensor<T> &pred, const Tensor<T> &gt, double lambda_l1, double lambda_ssim);

/// Adam with per-group learning rates; groups not listed are frozen.
template <typename T>
class Adam {
public:
    Adam(ParameterSet<T> &params, std::map<std::string, double> group_lr, std::string prefix = "", double beta1 = 0.9,
         double beta2 = 0.999, double eps = 1e-8);
    void step();
    int steps_taken() const { return t_; }

private:
    struct Slot {
        Tensor<T> param;
        double lr;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double b1_, b2_, eps_;
    int t_ = 0;
};

struct TrainLogEntry {
    int step = 0;
    int target_view = 0;
    double loss = 0;
    double psnr = 0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    std::uint64_t frozen_hash_before = 0, frozen_hash_after = 0;
};

/// Optimizes `model` on `scene`. Coarse stage updates `coarse.*`; fine stage
/// updates `fine.*` only and checks that `coarse.*` is bit-identical
/// afterwards. A non-finite loss aborts with NumericalError.
TrainResult train(Model<float> &model, const TrainConfig &cfg, const Scene &scene, std::ostream *log = nullptr);

struct ViewMetrics {
    int view = 0;
    double psnr = 0;
    double ssim = 0;
};

struct EvalReport {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0, mean_ssim = 0;
};

/// Metrics of `render(id)` against the scene's image for every id.
EvalReport evaluate_renders(const std::function<Tensor<float>(int)> &render, const Scene &scene, const std::vector<int> &ids);

/// Renders each id from the configured source views, optionally writing
/// `<out_dir>/eval_NNN.ppm`. Unknown ids raise ContractError.
EvalReport evaluate(const Model<float> &model, const TrainConfig &cfg, const Scene &scene, const std::vector<int> &ids,
                    const std::string &out_dir = "", const RenderOptions &opts = {});

std::string format_report(const EvalReport &r);

/// Checkpoint plus `<path>.cfg` sidecar with the full TrainConfig.
void save_model(const Model<float> &model, const TrainConfig &cfg, const std::string &path);
struct LoadedModel {
    TrainConfig cfg;
    std::unique_ptr<Model<float>> model;
};
LoadedModel load_model(const std::string &path);

/// Source cameras of `cfg` from `scene`, validated.
std::vector<CameraView> source_cameras(const TrainConfig &cfg, const Scene &scene);

} // namespace frf
