// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/errors.hpp"
#include "frf/gradcheck_suite.hpp"
#include "frf/io.hpp"
#include "frf/kv.hpp"
#include "frf/synth.hpp"
#include "frf/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace frf;

namespace {

std::pair<int, int> parse_res(const std::string &s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ParseError("--res: expected HxW, got '" + s + "'");
    return {static_cast<int>(parse_int(s.substr(0, x), "--res")), static_cast<int>(parse_int(s.substr(x + 1), "--res"))};
}

Tensor<float> depth_image(const std::vector<double> &depth, const std::vector<std::uint8_t> &valid, int H, int W, double near,
                          double far) {
    auto img = Tensor<float>::zeros({3, H, W});
    for (int p = 0; p < H * W; ++p) {
        if (!valid[static_cast<std::size_t>(p)]) continue;
        const float v = static_cast<float>(std::clamp(1.0 - (depth[static_cast<std::size_t>(p)] - near) / (far - near), 0.0, 1.0));
        for (int c = 0; c < 3; ++c) img.ptr()[c * H * W + p] = v;
    }
    return img;
}

int run_synth(const std::string &preset, int views, double baseline, const std::string &res, const std::string &out,
              std::uint64_t seed, int d_oracle) {
    SynthOptions o;
    o.preset = parse_preset(preset);
    o.rig.views = views;
    o.rig.baseline_deg = baseline;
    std::tie(o.rig.height, o.rig.width) = parse_res(res);
    o.seed = seed;
    o.d_oracle = d_oracle;
    const auto m = synth_scene(o, out);
    std::cout << "wrote " << m.views.size() << " views to " << out << "\n";
    return 0;
}

int run_train(const std::string &scene_dir, const std::string &stage, int steps, std::uint64_t seed, const std::string &config,
              const std::string &out, const std::string &coarse_ckpt) {
    TrainConfig cfg = config.empty() ? TrainConfig{} : load_train_config(config);
    cfg.stage = parse_stage(stage);
    if (steps >= 0) cfg.steps = steps;
    cfg.seed = seed;
    if (cfg.stage == Stage::fine) cfg.model.fine.enabled = true;
    cfg.validate();
    const auto scene = load_scene(scene_dir);
    Model<float> model(cfg.model);
    if (cfg.stage == Stage::fine) {
        if (coarse_ckpt.empty()) throw ContractError("train: --stage fine requires --coarse-ckpt");
        load_checkpoint(model.params(), coarse_ckpt, LoadOptions{true, "fine."});
    } else if (!coarse_ckpt.empty()) {
        throw ContractError("train: --coarse-ckpt only applies to --stage fine");
    }
    const auto r = train(model, cfg, scene, &std::cout);
    save_model(model, cfg, out);
    if (!r.log.empty()) std::cout << "final loss " << r.log.back().loss << " psnr " << r.log.back().psnr << "\n";
    std::cout << "saved " << out << "\n";
    return 0;
}

int run_render(const std::string &scene_dir, const std::string &ckpt, int view, const std::string &pose_file, const std::string &out,
               int patches, int overlap, const std::string &depth_out, const std::string &normal_out) {
    const auto scene = load_scene(scene_dir);
    auto lm = load_model(ckpt);
    CameraView target;
    if (!pose_file.empty()) {
        target = load_pose(pose_file);
    } else {
        if (view < 0 || view >= static_cast<int>(scene.views.size())) throw ContractError("render: unknown view " + std::to_string(view));
        target = scene.views[static_cast<std::size_t>(view)];
        target.image = Tensor<float>();
    }
    NoGradGuard ng;
    const auto views = lm.model->prepare(source_cameras(lm.cfg, scene));
    const auto res = lm.model->render(views, target, RenderOptions{patches, overlap, true, nullptr});
    const auto &o = res.final_output();
    write_ppm(out, o.rgb);
    if (!depth_out.empty() || !normal_out.empty()) {
        const auto dn = render_depth_normal(o, target);
        if (!depth_out.empty()) write_ppm(depth_out, depth_image(dn.depth, dn.valid, dn.H, dn.W, target.near, target.far));
        if (!normal_out.empty()) {
            auto img = Tensor<float>::zeros({3, dn.H, dn.W});
            for (int p = 0; p < dn.H * dn.W; ++p) {
                if (!dn.valid[static_cast<std::size_t>(p)]) continue;
                for (int c = 0; c < 3; ++c)
                    img.ptr()[c * dn.H * dn.W + p] = static_cast<float>(0.5 * (dn.normal[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)] + 1));
            }
            write_ppm(normal_out, img);
        }
    }
    std::cout << "wrote " << out << "\n";
    return 0;
}

int run_eval(const std::string &scene_dir, const std::string &ckpt, const std::string &ids, const std::string &report) {
    const auto scene = load_scene(scene_dir);
    auto lm = load_model(ckpt);
    const auto list = parse_int_list(ids, "--views");
    const auto dir = std::filesystem::path(report).parent_path().string();
    const auto r = evaluate(*lm.model, lm.cfg, scene, list, dir.empty() ? "." : dir);
    const auto text = format_report(r);
    std::ofstream f(report);
    if (!f) throw IoError("cannot write " + report);
    f << text;
    std::cout << text;
    return 0;
}

int run_gradcheck(const std::string &op) {
    const auto results = run_gradcheck_suite(op);
    bool ok = true;
    std::printf("%-28s %14s %10s %s\n", "op", "max_rel_error", "tolerance", "status");
    for (const auto &r : results) {
        std::printf("%-28s %14.3e %10.0e %s\n", r.name.c_str(), r.max_rel_error, r.tolerance, r.pass ? "PASS" : "FAIL");
        ok = ok && r.pass;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"frustum-field: multi-view radiance fields from target-view frustum volumes"};
    app.require_subcommand(1);

    std::string preset, res = "32x32", out, scene, stage = "coarse", config, coarse_ckpt, ckpt, pose, depth_out, normal_out, ids,
                        report, op;
    int views = 3, steps = -1, view = -1, patches = 1, overlap = 0, d_oracle = 1024;
    double baseline = 10;
    std::uint64_t seed = 0;

    auto *synth = app.add_subcommand("synth", "Generate a synthetic scene");
    synth->add_option("--preset", preset, "slab|sphere|two-spheres")->required();
    synth->add_option("--views", views, "Number of views")->required();
    synth->add_option("--baseline-deg", baseline, "Angle between neighbouring views")->required();
    synth->add_option("--res", res, "Resolution HxW")->required();
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--seed", seed, "Seed");
    synth->add_option("--d-oracle", d_oracle, "Oracle ray-march samples per ray");

    auto *tr = app.add_subcommand("train", "Train a model on a scene");
    tr->add_option("--scene", scene)->required();
    tr->add_option("--stage", stage, "coarse|fine")->required();
    tr->add_option("--steps", steps);
    tr->add_option("--seed", seed);
    tr->add_option("--config", config, "Config file (key = value)");
    tr->add_option("--out", out, "Output checkpoint")->required();
    tr->add_option("--coarse-ckpt", coarse_ckpt);

    auto *rd = app.add_subcommand("render", "Render a view");
    rd->add_option("--scene", scene)->required();
    rd->add_option("--ckpt", ckpt)->required();
    auto *vopt = rd->add_option("--view", view);
    auto *popt = rd->add_option("--pose", pose);
    vopt->excludes(popt);
    rd->add_option("--out", out)->required();
    rd->add_option("--patches", patches);
    rd->add_option("--overlap", overlap);
    rd->add_option("--depth", depth_out);
    rd->add_option("--normal", normal_out);

    auto *ev = app.add_subcommand("eval", "Evaluate held-out views");
    ev->add_option("--scene", scene)->required();
    ev->add_option("--ckpt", ckpt)->required();
    ev->add_option("--views", ids, "Comma-separated view ids")->required();
    ev->add_option("--report", report)->required();

    auto *gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    gc->add_option("--op", op, "Only this op");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*synth) return run_synth(preset, views, baseline, res, out, seed, d_oracle);
        if (*tr) return run_train(scene, stage, steps, seed, config, out, coarse_ckpt);
        if (*rd) {
            if (view < 0 && pose.empty()) throw ContractError("render: give --view or --pose");
            return run_render(scene, ckpt, view, pose, out, patches, overlap, depth_out, normal_out);
        }
        if (*ev) return run_eval(scene, ckpt, ids, report);
        if (*gc) return run_gradcheck(op);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
