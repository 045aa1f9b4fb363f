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

#ifndef SCST_LOG_HPP
#define SCST_LOG_HPP

#include <functional>
#include <string>

namespace scst::log {

enum class Level { kInfo, kWarn };

using Sink = std::function<void(Level, const std::string&)>;

/// Replaces the process-wide sink (default: stderr); returns the old one.
Sink set_sink(Sink sink);

void info(const std::string& msg);
void warn(const std::string& msg);

}  // namespace scst::log

#endif  // SCST_LOG_HPP
