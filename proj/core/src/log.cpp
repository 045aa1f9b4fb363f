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

#include "scst/log.hpp"

#include <iostream>
#include <mutex>

namespace scst::log {

namespace {

std::mutex g_mu;

Sink& sink() {
  static Sink s = [](Level level, const std::string& msg) {
    std::cerr << (level == Level::kWarn ? "[warn] " : "[info] ") << msg << '\n';
  };
  return s;
}

void emit(Level level, const std::string& msg) {
  std::lock_guard lock(g_mu);
  if (sink()) sink()(level, msg);
}

}  // namespace

Sink set_sink(Sink s) {
  std::lock_guard lock(g_mu);
  std::swap(sink(), s);
  return s;
}

void info(const std::string& msg) { emit(Level::kInfo, msg); }
void warn(const std::string& msg) { emit(Level::kWarn, msg); }

}  // namespace scst::log
