// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/io.hpp"

#include "frf/errors.hpp"
#include "frf/kv.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace fs = std::filesystem;

namespace frf {
namespace {

std::vector<std::uint8_t> read_file(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_file(const std::string &path, const std::vector<std::uint8_t> &bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

// Header tokens of a netpbm-style file: whitespace-separated, '#' comments.
struct HeaderReader {
    const std::vector<std::uint8_t> &b;
    std::size_t pos = 0;
    std::string origin;
    std::string token() {
        while (pos < b.size()) {
            if (b[pos] == '#') {
                while (pos < b.size() && b[pos] != '\n') ++pos;
            } else if (std::isspace(b[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') t.push_back(static_cast<char>(b[pos++]));
        if (t.empty()) throw ParseError(origin + ": truncated header");
        return t;
    }
    long number(const char *what) {
        const auto t = token();
        char *end = nullptr;
        const long v = std::strtol(t.c_str(), &end, 10);
        if (*end != '\0' || v <= 0) throw ParseError(origin + ": bad " + std::string(what) + " '" + t + "' in header");
        return v;
    }
};

template <typename U>
void put_le(std::vector<std::uint8_t> &out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::vector<std::uint8_t> &b;
    std::string origin;
    std::size_t pos = 0;
    void need(std::size_t n, const std::string &what) {
        if (pos + n > b.size()) {
            throw ParseError(origin + ": truncated at byte " + std::to_string(pos) + " while reading " + what);
        }
    }
    template <typename U>
    U le(const std::string &what) {
        need(sizeof(U), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
        pos += sizeof(U);
        return static_cast<U>(v);
    }
};

} // namespace

std::vector<std::uint8_t> encode_ppm(const Tensor<float> &image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("write_ppm: expected [3 x H x W], got " + shape_str(image.shape()));
    const std::int64_t H = image.dim(1), W = image.dim(2);
    const std::string header = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + static_cast<std::size_t>(3 * H * W));
    const float *p = image.ptr();
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(p[(c * H + i) * W + j]), 0.0, 1.0);
                out.push_back(static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5)));
            }
    return out;
}

Tensor<float> decode_ppm(const std::vector<std::uint8_t> &bytes, const std::string &origin) {
    HeaderReader h{bytes, 0, origin};
    const auto magic = h.token();
    if (magic != "P6") throw ParseError(origin + ": expected P6 magic, got '" + magic + "'");
    const long W = h.number("width"), H = h.number("height"), maxval = h.number("maxval");
    if (maxval != 255) throw ParseError(origin + ": maxval must be 255, got " + std::to_string(maxval));
    if (h.pos >= bytes.size() || !std::isspace(bytes[h.pos])) throw ParseError(origin + ": truncated header");
    ++h.pos; // single whitespace before the raster
    const std::size_t n = static_cast<std::size_t>(3 * H * W);
    if (bytes.size() - h.pos < n) {
        throw ParseError(origin + ": truncated payload, expected " + std::to_string(n) + " bytes, got " + std::to_string(bytes.size() - h.pos));
    }
    auto img = Tensor<float>::zeros({3, H, W});
    float *p = img.ptr();
    for (long i = 0; i < H; ++i)
        for (long j = 0; j < W; ++j)
            for (int c = 0; c < 3; ++c) p[(c * H + i) * W + j] = static_cast<float>(bytes[h.pos++]) / 255.0f;
    return img;
}

Tensor<float> read_ppm(const std::string &path) { return decode_ppm(read_file(path), path); }

template <typename T>
void write_ppm(const std::string &path, const Tensor<T> &image) {
    if constexpr (std::is_same_v<T, float>) {
        write_file(path, encode_ppm(image));
    } else {
        write_file(path, encode_ppm(cast<float>(image)));
    }
}

void write_pfm(const std::string &path, const std::vector<float> &values, int height, int width) {
    if (values.size() != static_cast<std::size_t>(height) * width) throw DimensionError("write_pfm: size mismatch");
    const std::string header = "Pf\n" + std::to_string(width) + " " + std::to_string(height) + "\n-1.0\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (int i = height - 1; i >= 0; --i)
        for (int j = 0; j < width; ++j) put_le(out, std::bit_cast<std::uint32_t>(values[static_cast<std::size_t>(i) * width + j]));
    write_file(path, out);
}

std::vector<float> read_pfm(const std::string &path, int &height, int &width) {
    const auto bytes = read_file(path);
    HeaderReader h{bytes, 0, path};
    if (h.token() != "Pf") throw ParseError(path + ": expected Pf magic");
    width = static_cast<int>(h.number("width"));
    height = static_cast<int>(h.number("height"));
    const auto scale = h.token();
    if (scale.empty() || scale[0] != '-') throw ParseError(path + ": only little-endian PFM is supported");
    ++h.pos;
    ByteReader r{bytes, path, h.pos};
    std::vector<float> v(static_cast<std::size_t>(height) * width);
    for (int i = height - 1; i >= 0; --i)
        for (int j = 0; j < width; ++j) v[static_cast<std::size_t>(i) * width + j] = std::bit_cast<float>(r.le<std::uint32_t>("pixel"));
    return v;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kViewKeys{"image", "depth", "fx", "fy", "cx", "cy", "world_to_camera", "width", "height"};

ManifestView parse_view(const KvBlock &b, const std::string &origin) {
    std::map<std::string, const KvEntry *> by_key;
    for (const auto &e : b.entries) {
        if (std::find(kViewKeys.begin(), kViewKeys.end(), e.key) == kViewKeys.end()) {
            throw ValidationError(origin + ":" + std::to_string(e.line) + ": unknown view field '" + e.key + "'");
        }
        by_key[e.key] = &e;
    }
    auto get = [&](const std::string &k) -> const KvEntry & {
        auto it = by_key.find(k);
        if (it == by_key.end()) {
            throw ValidationError(origin + ":" + std::to_string(b.line) + ": view is missing field '" + k + "'");
        }
        return *it->second;
    };
    auto where = [&](const std::string &k) { return origin + ":" + std::to_string(get(k).line) + ": " + k; };
    ManifestView v;
    v.image_path = get("image").value;
    if (by_key.count("depth")) v.depth_path = by_key["depth"]->value;
    v.fx = parse_double(get("fx").value, where("fx"));
    v.fy = parse_double(get("fy").value, where("fy"));
    v.cx = parse_double(get("cx").value, where("cx"));
    v.cy = parse_double(get("cy").value, where("cy"));
    v.width = static_cast<int>(parse_int(get("width").value, where("width")));
    v.height = static_cast<int>(parse_int(get("height").value, where("height")));
    const auto m = parse_double_list(get("world_to_camera").value, where("world_to_camera"));
    if (m.size() != 16) {
        throw ValidationError(where("world_to_camera") + ": expected 16 values, got " + std::to_string(m.size()));
    }
    std::copy(m.begin(), m.end(), v.world_to_camera.begin());
    return v;
}

} // namespace

CameraView camera_of(const ManifestView &v, double near, double far) {
    CameraView c;
    c.fx = v.fx;
    c.fy = v.fy;
    c.cx = v.cx;
    c.cy = v.cy;
    c.world_to_camera = v.world_to_camera;
    c.width = v.width;
    c.height = v.height;
    c.near = near;
    c.far = far;
    return c;
}

SceneManifest load_manifest(const std::string &path, bool check_images) {
    const auto doc = read_kv(path);
    SceneManifest m;
    std::map<std::string, const KvEntry *> top;
    for (const auto &e : doc.entries) {
        if (e.key != "near" && e.key != "far") {
            throw ValidationError(path + ":" + std::to_string(e.line) + ": unknown manifest field '" + e.key + "'");
        }
        top[e.key] = &e;
    }
    for (const char *k : {"near", "far"}) {
        if (!top.count(k)) throw ValidationError(path + ": missing field '" + std::string(k) + "'");
    }
    m.near = parse_double(top["near"]->value, path + ":" + std::to_string(top["near"]->line) + ": near");
    m.far = parse_double(top["far"]->value, path + ":" + std::to_string(top["far"]->line) + ": far");
    if (!(m.near > 0)) throw ValidationError(path + ":" + std::to_string(top["near"]->line) + ": field 'near' must be positive");
    if (!(m.far > m.near)) {
        throw ValidationError(path + ":" + std::to_string(top["far"]->line) + ": field 'far' (" + format_double(m.far) +
                              ") must exceed 'near' (" + format_double(m.near) + ")");
    }
    const fs::path dir = fs::path(path).parent_path();
    for (const auto &b : doc.blocks) {
        if (b.name != "view") throw ValidationError(path + ":" + std::to_string(b.line) + ": unknown block '" + b.name + "'");
        auto v = parse_view(b, path);
        try {
            camera_of(v, m.near, m.far).validate(1e-4);
        } catch (const ValidationError &e) {
            throw ValidationError(path + ":" + std::to_string(b.line) + ": view " + std::to_string(m.views.size()) + ": " + e.what());
        }
        if (check_images) {
            const auto img = (dir / v.image_path).string();
            if (!fs::exists(img)) throw IoError(path + ":" + std::to_string(b.line) + ": image not found: " + img);
            const auto bytes = read_file(img);
            HeaderReader h{bytes, 0, img};
            h.token();
            const long w = h.number("width"), hh = h.number("height");
            if (w != v.width || hh != v.height) {
                throw ValidationError(path + ":" + std::to_string(b.line) + ": image " + img + " is " + std::to_string(w) + "x" +
                                      std::to_string(hh) + ", manifest says " + std::to_string(v.width) + "x" + std::to_string(v.height));
            }
        }
        m.views.push_back(std::move(v));
    }
    return m;
}

void save_manifest(const SceneManifest &m, const std::string &path) {
    KvDocument doc;
    doc.entries.push_back({"near", format_double(m.near), 0});
    doc.entries.push_back({"far", format_double(m.far), 0});
    for (const auto &v : m.views) {
        KvBlock b{"view", 0, {}};
        b.entries.push_back({"image", v.image_path, 0});
        if (!v.depth_path.empty()) b.entries.push_back({"depth", v.depth_path, 0});
        b.entries.push_back({"fx", format_double(v.fx), 0});
        b.entries.push_back({"fy", format_double(v.fy), 0});
        b.entries.push_back({"cx", format_double(v.cx), 0});
        b.entries.push_back({"cy", format_double(v.cy), 0});
        std::string mat;
        for (int i = 0; i < 16; ++i) mat += (i ? " " : "") + format_double(v.world_to_camera[static_cast<std::size_t>(i)]);
        b.entries.push_back({"world_to_camera", mat, 0});
        b.entries.push_back({"width", std::to_string(v.width), 0});
        b.entries.push_back({"height", std::to_string(v.height), 0});
        doc.blocks.push_back(std::move(b));
    }
    const auto text = format_kv(doc);
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

Scene load_scene(const std::string &dir) {
    Scene s;
    s.dir = dir;
    const auto path = (fs::path(dir) / "manifest.txt").string();
    s.manifest = load_manifest(path);
    for (const auto &v : s.manifest.views) {
        auto cam = camera_of(v, s.manifest.near, s.manifest.far);
        cam.image = read_ppm((fs::path(dir) / v.image_path).string());
        s.views.push_back(std::move(cam));
    }
    return s;
}

CameraView load_pose(const std::string &path) {
    const auto doc = read_kv(path);
    double near = 0, far = 0;
    bool have_near = false, have_far = false;
    for (const auto &e : doc.entries) {
        const auto where = path + ":" + std::to_string(e.line) + ": " + e.key;
        if (e.key == "near") {
            near = parse_double(e.value, where);
            have_near = true;
        } else if (e.key == "far") {
            far = parse_double(e.value, where);
            have_far = true;
        } else {
            throw ValidationError(where + ": unknown pose field");
        }
    }
    if (!have_near || !have_far) throw ValidationError(path + ": pose needs 'near' and 'far'");
    if (doc.blocks.size() != 1 || doc.blocks[0].name != "view") throw ValidationError(path + ": pose needs exactly one view block");
    KvBlock b = doc.blocks[0];
    if (std::none_of(b.entries.begin(), b.entries.end(), [](const KvEntry &e) { return e.key == "image"; })) {
        b.entries.push_back({"image", "", b.line});
    }
    auto cam = camera_of(parse_view(b, path), near, far);
    cam.validate(1e-4);
    return cam;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void write_checkpoint(const std::string &path, const std::vector<CheckpointTensor> &tensors) {
    std::vector<std::uint8_t> out{'M', 'U', 'R', 'F'};
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    std::set<std::string> seen;
    for (const auto &t : tensors) {
        if (!seen.insert(t.name).second) throw ContractError("checkpoint: duplicate tensor name '" + t.name + "'");
        if (t.name.size() > 0xffff) throw ContractError("checkpoint: name too long");
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        out.push_back(0); // f32
        out.push_back(static_cast<std::uint8_t>(t.shape.size()));
        std::int64_t n = 1;
        for (auto d : t.shape) {
            put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
            n *= d;
        }
        if (static_cast<std::size_t>(n) != t.data.size()) throw DimensionError("checkpoint: '" + t.name + "' data does not match its shape");
        for (float v : t.data) put_le(out, std::bit_cast<std::uint32_t>(v));
    }
    write_file(path, out);
}

std::vector<CheckpointTensor> read_checkpoint(const std::string &path) {
    const auto bytes = read_file(path);
    ByteReader r{bytes, path};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "MURF", 4) != 0) throw ParseError(path + ": bad magic (not a checkpoint)");
    r.pos = 4;
    const auto version = r.le<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                         std::to_string(kCheckpointVersion) + ")");
    }
    const auto count = r.le<std::uint32_t>("tensor count");
    std::vector<CheckpointTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointTensor t;
        const auto len = r.le<std::uint16_t>("name length");
        r.need(len, "name");
        t.name.assign(reinterpret_cast<const char *>(bytes.data() + r.pos), len);
        r.pos += len;
        const auto dtype = r.le<std::uint8_t>("dtype of '" + t.name + "'");
        if (dtype != 0) throw ParseError(path + ": tensor '" + t.name + "' has unsupported dtype " + std::to_string(dtype));
        const auto rank = r.le<std::uint8_t>("rank of '" + t.name + "'");
        std::uint64_t n = 1;
        for (int d = 0; d < rank; ++d) {
            const auto dim = r.le<std::uint64_t>("shape of '" + t.name + "'");
            t.shape.push_back(static_cast<std::int64_t>(dim));
            n *= dim;
        }
        r.need(n * 4, "payload of '" + t.name + "'");
        t.data.resize(n);
        for (std::uint64_t k = 0; k < n; ++k) t.data[k] = std::bit_cast<float>(r.le<std::uint32_t>("payload"));
        out.push_back(std::move(t));
    }
    if (r.pos != bytes.size()) throw ParseError(path + ": " + std::to_string(bytes.size() - r.pos) + " trailing bytes");
    return out;
}

template <typename T>
void save_checkpoint(const ParameterSet<T> &params, const std::string &path) {
    std::vector<CheckpointTensor> ts;
    for (const auto &p : params.all()) {
        CheckpointTensor t;
        t.name = p.name;
        t.shape = p.tensor.shape();
        t.data.resize(static_cast<std::size_t>(p.tensor.numel()));
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<float>(p.tensor.ptr()[i]);
        ts.push_back(std::move(t));
    }
    write_checkpoint(path, ts);
}

template <typename T>
int load_checkpoint(ParameterSet<T> &params, const std::string &path, const LoadOptions &opts) {
    const auto ts = read_checkpoint(path);
    std::vector<std::string> unknown;
    std::set<std::string> loaded;
    for (const auto &t : ts) {
        const auto *p = params.find(t.name);
        if (!p) {
            unknown.push_back(t.name);
            continue;
        }
        if (p->tensor.shape() != t.shape) {
            throw ValidationError(path + ": tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", model expects " +
                                  shape_str(p->tensor.shape()));
        }
        loaded.insert(t.name);
    }
    if (opts.strict && !unknown.empty()) {
        std::string names;
        for (const auto &n : unknown) names += (names.empty() ? "" : ", ") + n;
        throw ValidationError(path + ": tensors not in the model: " + names);
    }
    for (const auto &p : params.all()) {
        const bool optional = !opts.optional_prefix.empty() && p.name.rfind(opts.optional_prefix, 0) == 0;
        if (!loaded.count(p.name) && !optional) throw ValidationError(path + ": missing tensor '" + p.name + "'");
    }
    int n = 0;
    for (const auto &t : ts) {
        const auto *p = params.find(t.name);
        if (!p) continue;
        T *dst = const_cast<Tensor<T> &>(p->tensor).ptr();
        for (std::size_t i = 0; i < t.data.size(); ++i) dst[i] = static_cast<T>(t.data[i]);
        ++n;
    }
    return n;
}

template <typename T>
std::uint64_t parameter_hash(const ParameterSet<T> &params, const std::string &prefix) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void *data, std::size_t n) {
        const auto *b = static_cast<const std::uint8_t *>(data);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
    };
    for (const auto &p : params.all()) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        mix(p.name.data(), p.name.size());
        mix(p.tensor.ptr(), static_cast<std::size_t>(p.tensor.numel()) * sizeof(T));
    }
    return h;
}

template void write_ppm<float>(const std::string &, const Tensor<float> &);
template void write_ppm<double>(const std::string &, const Tensor<double> &);
template void save_checkpoint<float>(const ParameterSet<float> &, const std::string &);
template void save_checkpoint<double>(const ParameterSet<double> &, const std::string &);
template int load_checkpoint<float>(ParameterSet<float> &, const std::string &, const LoadOptions &);
template int load_checkpoint<double>(ParameterSet<double> &, const std::string &, const LoadOptions &);
template std::uint64_t parameter_hash<float>(const ParameterSet<float> &, const std::string &);
template std::uint64_t parameter_hash<double>(const ParameterSet<double> &, const std::string &);

} // namespace frf
