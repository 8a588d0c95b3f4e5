// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/train.hpp"

#include "frf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace frf {
namespace {

template <typename T>
Tensor<T> gaussian_window() {
    constexpr int n = 11;
    constexpr double sigma = 1.5;
    std::vector<double> g(n);
    double s = 0;
    for (int i = 0; i < n; ++i) {
        g[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - 5) * (i - 5) / (sigma * sigma));
        s += g[static_cast<std::size_t>(i)];
    }
    std::vector<T> w(n * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) w[static_cast<std::size_t>(i * n + j)] = static_cast<T>(g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)] / (s * s));
    return Tensor<T>::from({1, 1, 1, n, n}, std::move(w));
}

} // namespace

template <typename T>
Tensor<T> ssim(const Tensor<T> &a, const Tensor<T> &b) {
    if (a.shape() != b.shape()) throw DimensionError("ssim: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
    if (a.rank() != 3) throw DimensionError("ssim: expected [C x h x w], got " + shape_str(a.shape()));
    const std::int64_t C = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (h < 11 || w < 11) throw ContractError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the 11x11 window");
    // Filter the five statistics in one pass: channel planes ride on the depth axis.
    auto stack = concat<T>({a, b, mul(a, a), mul(b, b), mul(a, b)}, 0);
    auto f = conv3d(reshape(stack, {1, 5 * C, h, w}), gaussian_window<T>(), Tensor<T>());
    const std::int64_t oh = f.dim(2), ow = f.dim(3);
    f = reshape(f, {5, C, oh, ow});
    auto mu1 = slice(f, 0, 0, 1), mu2 = slice(f, 0, 1, 1);
    auto m11 = mul(mu1, mu1), m22 = mul(mu2, mu2), m12 = mul(mu1, mu2);
    auto s11 = sub(slice(f, 0, 2, 1), m11), s22 = sub(slice(f, 0, 3, 1), m22), s12 = sub(slice(f, 0, 4, 1), m12);
    const T c1 = static_cast<T>(0.01 * 0.01), c2 = static_cast<T>(0.03 * 0.03);
    auto num = mul(add_scalar(mul_scalar(m12, T(2)), c1), add_scalar(mul_scalar(s12, T(2)), c2));
    auto den = mul(add_scalar(add(m11, m22), c1), add_scalar(add(s11, s22), c2));
    return mean(div(num, den));
}

template <typename T>
double psnr(const Tensor<T> &a, const Tensor<T> &b) {
    if (a.shape() != b.shape()) throw DimensionError("psnr: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
    double se = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.ptr()[i]) - static_cast<double>(b.ptr()[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse < 1e-10) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

template <typename T>
Tensor<T> image_loss(const Tensor<T> &pred, const Tensor<T> &gt, double lambda_l1, double lambda_ssim) {
    if (pred.shape() != gt.shape()) {
        throw DimensionError("loss: prediction " + shape_str(pred.shape()) + " vs ground truth " + shape_str(gt.shape()));
    }
    Tensor<T> total;
    if (lambda_l1 != 0) total = mul_scalar(mean(abs(sub(pred, gt))), static_cast<T>(lambda_l1));
    if (lambda_ssim != 0) {
        auto s = mul_scalar(add_scalar(neg(ssim(pred, gt)), T(1)), static_cast<T>(lambda_ssim));
        total = total.defined() ? add(total, s) : s;
    }
    if (!total.defined()) total = Tensor<T>::scalar(T(0));
    return total;
}

template <typename T>
Adam<T>::Adam(ParameterSet<T> &params, std::map<std::string, double> group_lr, std::string prefix, double beta1, double beta2,
              double eps)
    : b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto &p : params.all()) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        auto it = group_lr.find(p.group);
        if (it == group_lr.end()) continue;
        const auto n = static_cast<std::size_t>(p.tensor.numel());
        slots_.push_back(Slot{p.tensor, it->second, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
    }
}

template <typename T>
void Adam<T>::step() {
    ++t_;
    const double c1 = 1 - std::pow(b1_, t_), c2 = 1 - std::pow(b2_, t_);
    for (auto &s : slots_) {
        if (!s.param.has_grad()) continue;
        const auto g = s.param.grad_span();
        T *p = s.param.ptr();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            s.m[i] = b1_ * s.m[i] + (1 - b1_) * gi;
            s.v[i] = b2_ * s.v[i] + (1 - b2_) * gi * gi;
            if (s.lr == 0) continue; // frozen bit-exactly
            p[i] = static_cast<T>(static_cast<double>(p[i]) - s.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_));
        }
    }
}

std::vector<CameraView> source_cameras(const TrainConfig &cfg, const Scene &scene) {
    std::vector<CameraView> out;
    for (int id : cfg.source_views) {
        if (id < 0 || id >= static_cast<int>(scene.views.size())) {
            throw ContractError("source view " + std::to_string(id) + " not in scene (" + std::to_string(scene.views.size()) + " views)");
        }
        out.push_back(scene.views[static_cast<std::size_t>(id)]);
    }
    return out;
}

TrainResult train(Model<float> &model, const TrainConfig &cfg, const Scene &scene, std::ostream *log) {
    cfg.validate();
    const int nviews = static_cast<int>(scene.views.size());
    std::vector<int> targets = cfg.target_views;
    if (targets.empty())
        for (int i = 0; i < nviews; ++i) targets.push_back(i);
    for (int id : targets) {
        if (id < 0 || id >= nviews) throw ContractError("target view " + std::to_string(id) + " not in scene");
    }
    const auto sources = source_cameras(cfg, scene);
    const bool fine = cfg.stage == Stage::fine;
    if (fine && !model.config().fine.enabled) throw ContractError("train: fine stage needs a model with a fine stage");
    const int m = model.size_multiple();
    std::mt19937_64 rng(cfg.seed);

    TrainResult res;
    const std::string trained = fine ? "fine." : "coarse.";
    const std::string frozen = fine ? "coarse." : "fine.";
    res.frozen_hash_before = parameter_hash(model.params(), frozen);
    Adam<float> opt(model.params(), {{"encoder", cfg.lr_encoder}, {"decoder", cfg.lr_decoder}}, trained);

    for (int step = 1; step <= cfg.steps; ++step) {
        const int tid = targets[std::uniform_int_distribution<std::size_t>(0, targets.size() - 1)(rng)];
        CameraView target = scene.views[static_cast<std::size_t>(tid)];
        if (cfg.crop > 0 && (cfg.crop < target.width || cfg.crop < target.height)) {
            if (cfg.crop % m != 0) throw ContractError("train: crop " + std::to_string(cfg.crop) + " must be a multiple of " + std::to_string(m));
            const int cw = std::min(cfg.crop, target.width), ch = std::min(cfg.crop, target.height);
            const int x0 = std::uniform_int_distribution<int>(0, target.width - cw)(rng);
            const int y0 = std::uniform_int_distribution<int>(0, target.height - ch)(rng);
            target = crop_view(target, x0, y0, cw, ch);
        }
        const Tensor<float> gt = target.image;
        CameraView pose = target;
        pose.image = Tensor<float>();

        model.params().zero_grad();
        RenderOutput<float> out;
        if (!fine) {
            const auto views = model.prepare(sources);
            out = model.render(views, pose, RenderOptions{1, 0, false, nullptr}).coarse;
        } else {
            SourceViews<float> views;
            RenderOutput<float> coarse;
            {
                NoGradGuard ng;
                views = model.prepare(sources);
                coarse = model.render(views, pose, RenderOptions{1, 0, false, nullptr}).coarse;
            }
            const CameraView padded = pad_to_multiple(pose, m);
            if (padded.width != pose.width || padded.height != pose.height) {
                throw ContractError("train: fine stage needs target sizes that are multiples of " + std::to_string(m));
            }
            out = model.render_fine(views, pose, coarse, &rng);
        }
        auto loss = image_loss(out.rgb, gt, cfg.lambda_l1, cfg.lambda_ssim);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) {
            std::ostringstream s;
            s << "train: non-finite loss " << lv << " at step " << step << " (target view " << tid << ", " << to_string(cfg.stage)
              << " stage)";
            throw NumericalError(s.str());
        }
        loss.backward();
        opt.step();
        TrainLogEntry e{step, tid, lv, psnr(out.rgb, gt)};
        res.log.push_back(e);
        if (log && (step % cfg.log_every == 0 || step == cfg.steps)) {
            *log << "step " << step << " view " << tid << " loss " << std::setprecision(6) << lv << " psnr " << std::setprecision(4)
                 << e.psnr << "\n";
        }
    }
    res.frozen_hash_after = parameter_hash(model.params(), frozen);
    if (res.frozen_hash_after != res.frozen_hash_before) {
        throw ContractError("train: frozen parameters under '" + frozen + "' changed during training");
    }
    return res;
}

EvalReport evaluate_renders(const std::function<Tensor<float>(int)> &render, const Scene &scene, const std::vector<int> &ids) {
    EvalReport r;
    for (int id : ids) {
        if (id < 0 || id >= static_cast<int>(scene.views.size())) {
            throw ContractError("evaluate: unknown view id " + std::to_string(id) + " (scene has " + std::to_string(scene.views.size()) + ")");
        }
    }
    for (int id : ids) {
        const auto img = render(id);
        const auto &gt = scene.views[static_cast<std::size_t>(id)].image;
        ViewMetrics m{id, psnr(img, gt), static_cast<double>(ssim(img, gt).item())};
        r.views.push_back(m);
        r.mean_psnr += m.psnr;
        r.mean_ssim += m.ssim;
    }
    if (!r.views.empty()) {
        r.mean_psnr /= static_cast<double>(r.views.size());
        r.mean_ssim /= static_cast<double>(r.views.size());
    }
    return r;
}

EvalReport evaluate(const Model<float> &model, const TrainConfig &cfg, const Scene &scene, const std::vector<int> &ids,
                    const std::string &out_dir, const RenderOptions &opts) {
    NoGradGuard ng;
    if (ids.empty()) return {};
    const auto views = model.prepare(source_cameras(cfg, scene));
    return evaluate_renders(
        [&](int id) {
            CameraView pose = scene.views[static_cast<std::size_t>(id)];
            pose.image = Tensor<float>();
            const auto img = model.render(views, pose, opts).final_output().rgb;
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                char name[64];
                std::snprintf(name, sizeof(name), "eval_%03d.ppm", id);
                write_ppm((fs::path(out_dir) / name).string(), img);
            }
            return img;
        },
        scene, ids);
}

std::string format_report(const EvalReport &r) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4);
    s << "view psnr ssim\n";
    for (const auto &v : r.views) s << v.view << " " << v.psnr << " " << v.ssim << "\n";
    if (!r.views.empty()) s << "mean " << r.mean_psnr << " " << r.mean_ssim << "\n";
    return s.str();
}

void save_model(const Model<float> &model, const TrainConfig &cfg, const std::string &path) {
    save_checkpoint(model.params(), path);
    save_train_config(cfg, path + ".cfg");
}

LoadedModel load_model(const std::string &path) {
    LoadedModel lm;
    lm.cfg = load_train_config(path + ".cfg");
    lm.model = std::make_unique<Model<float>>(lm.cfg.model);
    load_checkpoint(lm.model->params(), path);
    return lm;
}

template Tensor<float> ssim<float>(const Tensor<float> &, const Tensor<float> &);
template Tensor<double> ssim<double>(const Tensor<double> &, const Tensor<double> &);
template double psnr<float>(const Tensor<float> &, const Tensor<float> &);
template double psnr<double>(const Tensor<double> &, const Tensor<double> &);
template Tensor<float> image_loss<float>(const Tensor<float> &, const Tensor<float> &, double, double);
template Tensor<double> image_loss<double>(const Tensor<double> &, const Tensor<double> &, double, double);
template class Adam<float>;
template class Adam<double>;

} // namespace frf
