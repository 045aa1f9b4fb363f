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

#include "scst/kv_config.hpp"

#include <cmath>
#include <fstream>

namespace scst::kv {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Map parse(std::istream& is, const std::string& source) {
  Map out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno),
                        "expected 'key = value', got '" + line + "'");
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw ConfigError(source + ":" + std::to_string(lineno), "empty key");
    }
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

Map parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file " + path.string());
  return parse(is, path.string());
}

std::string format(int v) { return std::to_string(v); }
std::string format(std::int64_t v) { return std::to_string(v); }
std::string format(std::uint64_t v) { return std::to_string(v); }

std::string format(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string format(bool v) { return v ? "true" : "false"; }

namespace {

template <typename T>
void parse_number(const std::string& key, const std::string& text, T& out) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key, "cannot parse '" + text + "'");
  }
  out = v;
}

}  // namespace

void parse_value(const std::string& key, const std::string& text, int& out) {
  parse_number(key, text, out);
}
void parse_value(const std::string& key, const std::string& text, std::int64_t& out) {
  parse_number(key, text, out);
}
void parse_value(const std::string& key, const std::string& text, std::uint64_t& out) {
  parse_number(key, text, out);
}
void parse_value(const std::string& key, const std::string& text, double& out) {
  parse_number(key, text, out);
  if (!std::isfinite(out)) throw ConfigError(key, "must be finite");
}
void parse_value(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1") {
    out = true;
  } else if (text == "false" || text == "0") {
    out = false;
  } else {
    throw ConfigError(key, "expected true|false, got '" + text + "'");
  }
}

}  // namespace scst::kv
