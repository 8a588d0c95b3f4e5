// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/config.hpp"

#include "frf/errors.hpp"
#include "frf/kv.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace frf {

Orientation parse_orientation(const std::string &s) {
    if (s == "target") return Orientation::target;
    if (s == "reference") return Orientation::reference;
    throw ParseError("unknown orientation '" + s + "' (expected target|reference)");
}
std::string to_string(Orientation o) { return o == Orientation::target ? "target" : "reference"; }

DecoderKind parse_decoder_kind(const std::string &s) {
    static const std::map<std::string, DecoderKind> kinds{{"plus21d", DecoderKind::plus21d},
                                                          {"conv3d", DecoderKind::conv3d},
                                                          {"conv2d", DecoderKind::conv2d},
                                                          {"conv1d", DecoderKind::conv1d},
                                                          {"ray_transformer", DecoderKind::ray_transformer},
                                                          {"mlp", DecoderKind::mlp}};
    auto it = kinds.find(s);
    if (it == kinds.end()) throw ParseError("unknown decoder kind '" + s + "' (expected plus21d|conv3d|conv2d|conv1d|ray_transformer|mlp)");
    return it->second;
}

std::string to_string(DecoderKind k) {
    switch (k) {
    case DecoderKind::plus21d: return "plus21d";
    case DecoderKind::conv3d: return "conv3d";
    case DecoderKind::conv2d: return "conv2d";
    case DecoderKind::conv1d: return "conv1d";
    case DecoderKind::ray_transformer: return "ray_transformer";
    case DecoderKind::mlp: return "mlp";
    }
    return "?";
}

Stage parse_stage(const std::string &s) {
    if (s == "coarse") return Stage::coarse;
    if (s == "fine") return Stage::fine;
    throw ParseError("unknown stage '" + s + "' (expected coarse|fine)");
}
std::string to_string(Stage s) { return s == Stage::coarse ? "coarse" : "fine"; }

int VolumeConfig::element_width(int feature_width) const {
    int n = 0;
    if (use_color) n += 3 * window * window;
    if (use_feature) n += feature_width;
    if (use_cosine) n += groups;
    return n;
}

void VolumeConfig::validate(int feature_width) const {
    if (!use_color && !use_feature && !use_cosine) throw ValidationError("volume: at least one of use_color, use_feature, use_cosine must be set");
    if (window < 1 || window % 2 == 0) throw ValidationError("volume.window: must be odd and positive, got " + std::to_string(window));
    if (groups < 1 || feature_width % groups != 0) {
        throw ValidationError("volume.groups: " + std::to_string(groups) + " does not divide feature width " + std::to_string(feature_width));
    }
    if (channels < 1) throw ValidationError("volume.channels: must be positive");
    if (agg_hidden < 1) throw ValidationError("volume.agg_hidden: must be positive");
    if (cells_per_chunk < 1) throw ValidationError("volume.cells_per_chunk: must be positive");
}

void ModelConfig::validate() const {
    if (s < 1) throw ValidationError("model.s: must be >= 1");
    if (depth_planes < 2) throw ValidationError("model.depth_planes: must be >= 2");
    const auto &e = encoder;
    if (e.c2 < 1 || e.c4 < 1 || e.c8 < 1) throw ValidationError("encoder: widths must be positive");
    if (e.c8 % 4 != 0) throw ValidationError("encoder.c8: must be a multiple of 4 for the positional encoding");
    if (e.heads < 1 || e.c8 % e.heads != 0) throw ValidationError("encoder.heads: must divide encoder.c8");
    if (e.transformer_blocks < 0 || e.ffn_mult < 1) throw ValidationError("encoder: bad transformer settings");
    volume.validate(e.feature_width());
    const auto &d = decoder;
    if (d.width < 1 || d.up_channels < 1) throw ValidationError("decoder: widths must be positive");
    if (d.blocks < 0 || d.rt_blocks < 0) throw ValidationError("decoder: block counts must be >= 0");
    if (d.kind == DecoderKind::ray_transformer && (d.width % 2 != 0 || d.rt_heads < 1 || d.width % d.rt_heads != 0)) {
        throw ValidationError("decoder.rt_heads: must divide an even decoder.width");
    }
    if (fine.enabled) {
        if (fine.samples < 4 || fine.samples % 4 != 0) throw ValidationError("fine.samples: must be a positive multiple of 4");
        if (fine.window < 1 || fine.window % 2 == 0) throw ValidationError("fine.window: must be odd and positive");
        if (fine.groups < 1 || e.feature_width() % fine.groups != 0) throw ValidationError("fine.groups: must divide the feature width");
        if (fine.channels < 1 || fine.c1 < 1 || fine.c2 < 1) throw ValidationError("fine: widths must be positive");
    }
}

void TrainConfig::validate() const {
    model.validate();
    if (stage == Stage::fine && !model.fine.enabled) throw ValidationError("stage: fine requires fine.enabled = true");
    if (steps < 0) throw ValidationError("steps: must be >= 0");
    if (lr_encoder < 0 || lr_decoder < 0) throw ValidationError("lr: learning rates must be >= 0");
    if (lambda_l1 < 0 || lambda_ssim < 0) throw ValidationError("lambda: loss weights must be >= 0");
    if (lambda_l1 == 0 && lambda_ssim == 0) throw ValidationError("lambda: loss weights must not all be zero");
    if (crop < 0) throw ValidationError("crop: must be >= 0");
    if (crop > 0 && crop < 11 && lambda_ssim > 0) throw ValidationError("crop: must be >= 11 for the SSIM window");
    if (source_views.empty()) throw ValidationError("source_views: must not be empty");
    if (log_every < 1) throw ValidationError("log_every: must be >= 1");
}

namespace {

struct Field {
    std::function<std::string(const TrainConfig &)> get;
    std::function<void(TrainConfig &, const std::string &, const std::string &)> set;
};

std::string join(const std::vector<int> &v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
    return s;
}

const std::vector<std::pair<std::string, Field>> &fields() {
    using C = TrainConfig;
    using W = const std::string &;
    auto i = [](auto acc) {
        return Field{[acc](const C &c) { return std::to_string(acc(const_cast<C &>(c))); },
                     [acc](C &c, W v, W where) { acc(c) = static_cast<int>(parse_int(v, where)); }};
    };
    auto d = [](auto acc) {
        return Field{[acc](const C &c) { return format_double(acc(const_cast<C &>(c))); },
                     [acc](C &c, W v, W where) { acc(c) = parse_double(v, where); }};
    };
    auto b = [](auto acc) {
        return Field{[acc](const C &c) { return std::string(acc(const_cast<C &>(c)) ? "true" : "false"); },
                     [acc](C &c, W v, W where) { acc(c) = parse_bool(v, where); }};
    };
    auto u = [](auto acc) {
        return Field{[acc](const C &c) { return std::to_string(acc(const_cast<C &>(c))); },
                     [acc](C &c, W v, W where) { acc(c) = parse_u64(v, where); }};
    };
    auto act = [](auto acc) {
        return Field{[acc](const C &c) { return to_string(acc(const_cast<C &>(c))); },
                     [acc](C &c, W v, W where) {
                         try {
                             acc(c) = parse_activation(v);
                         } catch (const std::exception &e) {
                             throw ParseError(where + ": " + e.what());
                         }
                     }};
    };
    auto wrap = [](auto parse) {
        return [parse](auto &dst, W v, W where) {
            try {
                dst = parse(v);
            } catch (const std::exception &e) {
                throw ParseError(where + ": " + e.what());
            }
        };
    };
    static const std::vector<std::pair<std::string, Field>> table = [&] {
        std::vector<std::pair<std::string, Field>> t;
        t.push_back({"stage", {[](const C &c) { return to_string(c.stage); },
                               [wrap](C &c, W v, W where) { wrap(parse_stage)(c.stage, v, where); }}});
        t.push_back({"steps", i([](C &c) -> int & { return c.steps; })});
        t.push_back({"lr_encoder", d([](C &c) -> double & { return c.lr_encoder; })});
        t.push_back({"lr_decoder", d([](C &c) -> double & { return c.lr_decoder; })});
        t.push_back({"crop", i([](C &c) -> int & { return c.crop; })});
        t.push_back({"seed", u([](C &c) -> std::uint64_t & { return c.seed; })});
        t.push_back({"lambda_l1", d([](C &c) -> double & { return c.lambda_l1; })});
        t.push_back({"lambda_ssim", d([](C &c) -> double & { return c.lambda_ssim; })});
        t.push_back({"source_views", {[](const C &c) { return join(c.source_views); },
                                      [](C &c, W v, W where) { c.source_views = parse_int_list(v, where); }}});
        t.push_back({"target_views", {[](const C &c) { return join(c.target_views); },
                                      [](C &c, W v, W where) { c.target_views = parse_int_list(v, where); }}});
        t.push_back({"log_every", i([](C &c) -> int & { return c.log_every; })});

        t.push_back({"model.s", i([](C &c) -> int & { return c.model.s; })});
        t.push_back({"model.depth_planes", i([](C &c) -> int & { return c.model.depth_planes; })});
        t.push_back({"model.spacing", {[](const C &c) { return to_string(c.model.spacing); },
                                       [wrap](C &c, W v, W where) { wrap(parse_depth_spacing)(c.model.spacing, v, where); }}});
        t.push_back({"model.orientation", {[](const C &c) { return to_string(c.model.orientation); },
                                           [wrap](C &c, W v, W where) { wrap(parse_orientation)(c.model.orientation, v, where); }}});
        t.push_back({"model.init_seed", u([](C &c) -> std::uint64_t & { return c.model.init_seed; })});

        t.push_back({"encoder.c2", i([](C &c) -> int & { return c.model.encoder.c2; })});
        t.push_back({"encoder.c4", i([](C &c) -> int & { return c.model.encoder.c4; })});
        t.push_back({"encoder.c8", i([](C &c) -> int & { return c.model.encoder.c8; })});
        t.push_back({"encoder.transformer_blocks", i([](C &c) -> int & { return c.model.encoder.transformer_blocks; })});
        t.push_back({"encoder.heads", i([](C &c) -> int & { return c.model.encoder.heads; })});
        t.push_back({"encoder.ffn_mult", i([](C &c) -> int & { return c.model.encoder.ffn_mult; })});
        t.push_back({"encoder.max_tokens", i([](C &c) -> int & { return c.model.encoder.max_tokens; })});
        t.push_back({"encoder.act", act([](C &c) -> Activation & { return c.model.encoder.act; })});

        t.push_back({"volume.channels", i([](C &c) -> int & { return c.model.volume.channels; })});
        t.push_back({"volume.window", i([](C &c) -> int & { return c.model.volume.window; })});
        t.push_back({"volume.groups", i([](C &c) -> int & { return c.model.volume.groups; })});
        t.push_back({"volume.agg_hidden", i([](C &c) -> int & { return c.model.volume.agg_hidden; })});
        t.push_back({"volume.use_color", b([](C &c) -> bool & { return c.model.volume.use_color; })});
        t.push_back({"volume.use_feature", b([](C &c) -> bool & { return c.model.volume.use_feature; })});
        t.push_back({"volume.use_cosine", b([](C &c) -> bool & { return c.model.volume.use_cosine; })});
        t.push_back({"volume.act", act([](C &c) -> Activation & { return c.model.volume.act; })});
        t.push_back({"volume.cells_per_chunk", i([](C &c) -> int & { return c.model.volume.cells_per_chunk; })});

        t.push_back({"decoder.kind", {[](const C &c) { return to_string(c.model.decoder.kind); },
                                      [wrap](C &c, W v, W where) { wrap(parse_decoder_kind)(c.model.decoder.kind, v, where); }}});
        t.push_back({"decoder.width", i([](C &c) -> int & { return c.model.decoder.width; })});
        t.push_back({"decoder.blocks", i([](C &c) -> int & { return c.model.decoder.blocks; })});
        t.push_back({"decoder.up_channels", i([](C &c) -> int & { return c.model.decoder.up_channels; })});
        t.push_back({"decoder.rt_blocks", i([](C &c) -> int & { return c.model.decoder.rt_blocks; })});
        t.push_back({"decoder.rt_heads", i([](C &c) -> int & { return c.model.decoder.rt_heads; })});
        t.push_back({"decoder.act", act([](C &c) -> Activation & { return c.model.decoder.act; })});

        t.push_back({"fine.enabled", b([](C &c) -> bool & { return c.model.fine.enabled; })});
        t.push_back({"fine.samples", i([](C &c) -> int & { return c.model.fine.samples; })});
        t.push_back({"fine.channels", i([](C &c) -> int & { return c.model.fine.channels; })});
        t.push_back({"fine.c1", i([](C &c) -> int & { return c.model.fine.c1; })});
        t.push_back({"fine.c2", i([](C &c) -> int & { return c.model.fine.c2; })});
        t.push_back({"fine.window", i([](C &c) -> int & { return c.model.fine.window; })});
        t.push_back({"fine.groups", i([](C &c) -> int & { return c.model.fine.groups; })});
        return t;
    }();
    return table;
}

} // namespace

std::vector<std::pair<std::string, std::string>> to_entries(const TrainConfig &cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto &[key, f] : fields()) out.emplace_back(key, f.get(cfg));
    return out;
}

void apply_entries(TrainConfig &cfg, const std::vector<std::pair<std::string, std::string>> &entries, const std::string &origin) {
    const auto &table = fields();
    for (const auto &[key, value] : entries) {
        const Field *f = nullptr;
        for (const auto &[k, fd] : table)
            if (k == key) f = &fd;
        if (!f) throw ValidationError(origin + ": unknown config key '" + key + "'");
        f->set(cfg, value, origin + ": " + key);
    }
}

TrainConfig load_train_config(const std::string &path) {
    const auto doc = read_kv(path);
    if (!doc.blocks.empty()) {
        throw ValidationError(path + ":" + std::to_string(doc.blocks[0].line) + ": unexpected block '" + doc.blocks[0].name + "' in config");
    }
    TrainConfig cfg;
    for (const auto &e : doc.entries) apply_entries(cfg, {{e.key, e.value}}, path + ":" + std::to_string(e.line));
    cfg.validate();
    return cfg;
}

void save_train_config(const TrainConfig &cfg, const std::string &path) {
    KvDocument doc;
    for (auto &[k, v] : to_entries(cfg)) doc.entries.push_back(KvEntry{k, v, 0});
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << format_kv(doc);
    if (!f) throw IoError("write failed: " + path);
}

} // namespace frf
