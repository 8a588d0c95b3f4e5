// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/kv.hpp"

#include "frf/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace frf {
namespace {

std::string trim(const std::string &s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool valid_key(const std::string &k) {
    if (k.empty()) return false;
    return std::all_of(k.begin(), k.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; });
}

std::vector<std::string> split_list(const std::string &v) {
    std::string s = v;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string t; in >> t;) out.push_back(t);
    return out;
}

} // namespace

KvDocument parse_kv(const std::string &text, const std::string &origin) {
    KvDocument doc;
    doc.origin = origin;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    KvBlock *block = nullptr;
    auto fail = [&](const std::string &msg) { throw ParseError(origin + ":" + std::to_string(line) + ": " + msg); };
    while (std::getline(in, raw)) {
        ++line;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        std::string s = trim(raw);
        if (s.empty() || s[0] == '#') continue;
        if (s == "}") {
            if (!block) fail("unmatched '}'");
            block = nullptr;
            continue;
        }
        if (s.size() >= 2 && s.back() == '{') {
            const std::string name = trim(s.substr(0, s.size() - 1));
            if (block) fail("nested block '" + name + "'");
            if (!valid_key(name)) fail("bad block name '" + name + "'");
            doc.blocks.push_back(KvBlock{name, line, {}});
            block = &doc.blocks.back();
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) fail("expected 'key = value', got '" + s + "'");
        KvEntry e{trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
        if (!valid_key(e.key)) fail("bad key '" + e.key + "'");
        auto &list = block ? block->entries : doc.entries;
        for (const auto &prev : list) {
            if (prev.key == e.key) fail("duplicate key '" + e.key + "' (first on line " + std::to_string(prev.line) + ")");
        }
        list.push_back(std::move(e));
    }
    if (block) throw ParseError(origin + ":" + std::to_string(block->line) + ": block '" + block->name + "' is not closed");
    return doc;
}

KvDocument read_kv(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_kv(ss.str(), path);
}

std::string format_kv(const KvDocument &doc) {
    std::ostringstream out;
    for (const auto &e : doc.entries) out << e.key << " = " << e.value << "\n";
    for (const auto &b : doc.blocks) {
        out << "\n" << b.name << " {\n";
        for (const auto &e : b.entries) out << "  " << e.key << " = " << e.value << "\n";
        out << "}\n";
    }
    return out.str();
}

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string &v, const std::string &where) {
    double x = 0;
    const auto *end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, x);
    if (r.ec != std::errc() || r.ptr != end) throw ParseError(where + ": expected a number, got '" + v + "'");
    return x;
}

long long parse_int(const std::string &v, const std::string &where) {
    long long x = 0;
    const auto *end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, x);
    if (r.ec != std::errc() || r.ptr != end) throw ParseError(where + ": expected an integer, got '" + v + "'");
    return x;
}

unsigned long long parse_u64(const std::string &v, const std::string &where) {
    unsigned long long x = 0;
    const auto *end = v.data() + v.size();
    const auto r = std::from_chars(v.data(), end, x);
    if (r.ec != std::errc() || r.ptr != end) throw ParseError(where + ": expected an unsigned integer, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string &v, const std::string &where) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError(where + ": expected true/false, got '" + v + "'");
}

std::vector<double> parse_double_list(const std::string &v, const std::string &where) {
    std::vector<double> out;
    for (const auto &t : split_list(v)) out.push_back(parse_double(t, where));
    return out;
}

std::vector<int> parse_int_list(const std::string &v, const std::string &where) {
    std::vector<int> out;
    for (const auto &t : split_list(v)) out.push_back(static_cast<int>(parse_int(t, where)));
    return out;
}

} // namespace frf
