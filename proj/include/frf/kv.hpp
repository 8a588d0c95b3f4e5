// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

namespace frf {

/// Text key/value documents shared by scene manifests and config files.
///
///   # comment
///   key = value
///   view {
///     key = value
///   }
///
/// Keys are `[A-Za-z0-9_.]+`; values run to end of line with surrounding
/// whitespace trimmed. Blocks do not nest.
struct KvEntry {
    std::string key;
    std::string value;
    int line = 0;
};

struct KvBlock {
    std::string name;
    int line = 0;
    std::vector<KvEntry> entries;
};

struct KvDocument {
    std::string origin; // file name used in error messages
    std::vector<KvEntry> entries;
    std::vector<KvBlock> blocks;
};

/// Throws ParseError with `origin:line` context.
KvDocument parse_kv(const std::string &text, const std::string &origin);
KvDocument read_kv(const std::string &path);
std::string format_kv(const KvDocument &doc);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Value conversions; throw ParseError naming `where` (e.g. "file:12: near").
double parse_double(const std::string &v, const std::string &where);
long long parse_int(const std::string &v, const std::string &where);
unsigned long long parse_u64(const std::string &v, const std::string &where);
bool parse_bool(const std::string &v, const std::string &where);
/// Whitespace- or comma-separated lists.
std::vector<double> parse_double_list(const std::string &v, const std::string &where);
std::vector<int> parse_int_list(const std::string &v, const std::string &where);

} // namespace frf
