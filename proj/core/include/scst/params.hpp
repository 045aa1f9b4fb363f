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

#ifndef SCST_PARAMS_HPP
#define SCST_PARAMS_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "scst/autodiff.hpp"
#include "scst/errors.hpp"

namespace scst {

/// Named trainable arrays. Iteration order is lexicographic by name, which
/// fixes the serialized record order.
class ParamStore {
 public:
  /// Registers a new leaf with requires_grad set. Names must be unique.
  ad::Tensor& add(const std::string& name, ad::Tensor value);
  ad::Tensor& at(const std::string& name);
  const ad::Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return map_.count(name) != 0; }

  std::size_t size() const { return map_.size(); }
  std::size_t total_numel() const;
  std::vector<std::string> names() const;

  auto begin() { return map_.begin(); }
  auto end() { return map_.end(); }
  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }

  void zero_grad();
  /// Deep copy of every value (gradients are not copied).
  ParamStore clone() const;
  /// Overwrites values from `other`; names and shapes must match exactly.
  void assign(const ParamStore& other);

 private:
  std::map<std::string, ad::Tensor> map_;
};

// Binary container, all integers and floats little-endian:
//   "SCSTPARM" | u32 version(=1) | u64 count |
//   count × { u32 name_len | name bytes | u32 ndim | u64 dims[ndim] |
//             f64 values[prod(dims)] }
inline constexpr char kParamMagic[8] = {'S', 'C', 'S', 'T', 'P', 'A', 'R', 'M'};
inline constexpr std::uint32_t kParamFormatVersion = 1;

void write_params(std::ostream& os, const ParamStore& params);
ParamStore read_params(std::istream& is);

}  // namespace scst

#endif  // SCST_PARAMS_HPP
