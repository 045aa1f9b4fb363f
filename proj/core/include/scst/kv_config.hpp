/*
 * Copyright 2026 The scst Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Flat `key = value` text used by config files, checkpoint headers and the
// resolved-config echo. '#' starts a comment; blank lines are ignored.

#ifndef SCST_KV_CONFIG_HPP
#define SCST_KV_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>

#include "scst/errors.hpp"

namespace scst::kv {

using Map = std::map<std::string, std::string>;

std::string trim(const std::string& s);

/// Throws ConfigError("line N", ...) on a line without '='.
Map parse(std::istream& is, const std::string& source = "<config>");
Map parse_file(const std::filesystem::path& path);

std::string format(int v);
std::string format(std::int64_t v);
std::string format(std::uint64_t v);
/// Shortest representation that parses back to the same double.
std::string format(double v);
std::string format(bool v);
inline std::string format(const std::string& v) { return v; }

void parse_value(const std::string& key, const std::string& text, int& out);
void parse_value(const std::string& key, const std::string& text, std::int64_t& out);
void parse_value(const std::string& key, const std::string& text, std::uint64_t& out);
void parse_value(const std::string& key, const std::string& text, double& out);
void parse_value(const std::string& key, const std::string& text, bool& out);
inline void parse_value(const std::string&, const std::string& text, std::string& out) {
  out = text;
}

/// Assigns `out` from `m[key]` when present.
template <typename T>
void read(const Map& m, const std::string& key, T& out) {
  if (auto it = m.find(key); it != m.end()) parse_value(key, it->second, out);
}

}  // namespace scst::kv

#endif  // SCST_KV_CONFIG_HPP
