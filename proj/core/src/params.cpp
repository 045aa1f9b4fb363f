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

#include "scst/params.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "scst/binary_io.hpp"

namespace scst {

ad::Tensor& ParamStore::add(const std::string& name, ad::Tensor value) {
  if (map_.count(name) != 0) {
    throw ad::ContractError("duplicate parameter name '" + name + "'");
  }
  value.set_requires_grad(true);
  return map_.emplace(name, std::move(value)).first->second;
}

ad::Tensor& ParamStore::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw ad::ContractError("no parameter '" + name + "'");
  return it->second;
}

const ad::Tensor& ParamStore::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw ad::ContractError("no parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : map_) n += t.numel();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(map_.size());
  for (const auto& [k, _] : map_) out.push_back(k);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : map_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [k, t] : map_) out.add(k, t.clone(true));
  return out;
}

void ParamStore::assign(const ParamStore& other) {
  if (other.size() != size()) {
    throw FormatError("parameter count mismatch: " + std::to_string(other.size()) +
                      " vs " + std::to_string(size()));
  }
  for (auto& [k, t] : map_) {
    const auto& src = other.at(k);
    if (src.shape() != t.shape()) {
      throw FormatError("shape mismatch for '" + k + "': " +
                        ad::shape_str(src.shape()) + " vs " +
                        ad::shape_str(t.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
}

void write_params(std::ostream& os, const ParamStore& params) {
  os.write(kParamMagic, sizeof(kParamMagic));
  io::put_u32(os, kParamFormatVersion);
  io::put_u64(os, params.size());
  for (const auto& [name, t] : params) {
    io::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put_u32(os, static_cast<std::uint32_t>(t.dim()));
    for (auto e : t.shape()) io::put_u64(os, e);
    io::put_f64s(os, t.data());
  }
  if (!os) throw FormatError("failed writing parameter container");
}

ParamStore read_params(std::istream& is) {
  char magic[sizeof(kParamMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kParamMagic, sizeof(magic)) != 0) {
    throw FormatError("not a parameter container (bad magic)");
  }
  const auto version = io::get_u32(is);
  if (version != kParamFormatVersion) {
    throw FormatError("unsupported parameter container version " +
                      std::to_string(version));
  }
  const auto count = io::get_u64(is);
  ParamStore out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = io::get_u32(is);
    if (name_len > (1u << 16)) throw FormatError("parameter name too long");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = io::get_u32(is);
    if (ndim == 0 || ndim > 8) throw FormatError("bad rank for '" + name + "'");
    ad::Shape shape(ndim);
    for (auto& e : shape) e = io::get_u64(is);
    std::vector<double> values(ad::shape_numel(shape));
    io::get_f64s(is, values);
    if (!is) throw FormatError("truncated parameter container at '" + name + "'");
    out.add(name, ad::Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace scst
