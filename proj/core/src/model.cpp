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

#include "scst/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include "scst/binary_io.hpp"
#include "scst/errors.hpp"
#include "scst/frontend.hpp"
#include "scst/kv_config.hpp"

namespace scst {

namespace {

constexpr std::size_t kRawWindow = frontend::kWindowSamples;
constexpr std::size_t kSpeechDim = frontend::kSpeechDim;
constexpr std::size_t kStack = frontend::kStackFactor;

std::string layer_name(const char* stack, int l) {
  return std::string(stack) + "." + std::to_string(l);
}

void add_linear(std::map<std::string, ad::Shape>& m, const std::string& prefix,
                std::size_t in, std::size_t out) {
  m[prefix + ".w"] = {in, out};
  m[prefix + ".b"] = {out};
}

void add_ln(std::map<std::string, ad::Shape>& m, const std::string& prefix,
            std::size_t d) {
  m[prefix + ".gain"] = {d};
  m[prefix + ".bias"] = {d};
}

void add_attention(std::map<std::string, ad::Shape>& m, const std::string& prefix,
                   std::size_t d) {
  for (const char* x : {"q", "k", "v", "o"}) add_linear(m, prefix + "." + x, d, d);
}

}  // namespace

const char* to_string(PenaltyMode m) {
  switch (m) {
    case PenaltyMode::kNone: return "none";
    case PenaltyMode::kLog: return "log";
    case PenaltyMode::kPdp: return "pdp";
  }
  return "?";
}

const char* to_string(FrontendMode m) {
  return m == FrontendMode::kNafm ? "nafm" : "filterbank";
}

PenaltyMode parse_penalty_mode(const std::string& s) {
  if (s == "none") return PenaltyMode::kNone;
  if (s == "log") return PenaltyMode::kLog;
  if (s == "pdp") return PenaltyMode::kPdp;
  throw ConfigError("penalty_mode", "expected none|log|pdp, got '" + s + "'");
}

FrontendMode parse_frontend_mode(const std::string& s) {
  if (s == "filterbank") return FrontendMode::kFilterbank;
  if (s == "nafm") return FrontendMode::kNafm;
  throw ConfigError("frontend_mode", "expected filterbank|nafm, got '" + s + "'");
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::full_preset(int vocab_size) {
  ModelConfig c;
  c.n_enc = 12;
  c.n_dec = 6;
  c.d_model = 256;
  c.heads = 4;
  c.d_head = 64;
  c.d_ff = 4096;
  c.vocab_size = vocab_size;
  c.penalty_mode = PenaltyMode::kPdp;
  c.pdp_r = 512;
  c.dropout = 0.2;
  c.ds_init = true;
  c.ds_init_alpha = 0.5;
  c.nafm_d_ff = 4096;
  return c;
}

ModelConfig ModelConfig::desk_preset(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

void ModelConfig::validate() const {
  if (n_enc < 1) throw ConfigError("n_enc", "must be >= 1");
  if (n_dec < 1) throw ConfigError("n_dec", "must be >= 1");
  if (heads < 1) throw ConfigError("heads", "must be >= 1");
  if (d_head < 1) throw ConfigError("d_head", "must be >= 1");
  if (d_model != heads * d_head) {
    throw ConfigError("d_model", "must equal heads * d_head (" +
                                     std::to_string(heads * d_head) + ")");
  }
  if (d_model % 2 != 0) throw ConfigError("d_model", "must be even");
  if (d_ff < 1) throw ConfigError("d_ff", "must be >= 1");
  if (vocab_size < 4) throw ConfigError("vocab_size", "must be >= 4");
  if (pdp_r < 1) throw ConfigError("pdp_r", "must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout", "must lie in [0, 1)");
  }
  if (!(ds_init_alpha > 0.0)) throw ConfigError("ds_init_alpha", "must be > 0");
  if (nafm_d_ff < 1) throw ConfigError("nafm_d_ff", "must be >= 1");
}

const std::vector<std::string>& ModelConfig::keys() {
  static const std::vector<std::string> k = {
      "n_enc",  "n_dec",   "d_model",      "d_head",        "heads",
      "d_ff",   "vocab_size", "penalty_mode", "pdp_r",       "dropout",
      "ds_init", "ds_init_alpha", "frontend_mode", "nafm_d_ff", "pre_ln"};
  return k;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  return {{"n_enc", kv::format(n_enc)},
          {"n_dec", kv::format(n_dec)},
          {"d_model", kv::format(d_model)},
          {"d_head", kv::format(d_head)},
          {"heads", kv::format(heads)},
          {"d_ff", kv::format(d_ff)},
          {"vocab_size", kv::format(vocab_size)},
          {"penalty_mode", to_string(penalty_mode)},
          {"pdp_r", kv::format(pdp_r)},
          {"dropout", kv::format(dropout)},
          {"ds_init", kv::format(ds_init)},
          {"ds_init_alpha", kv::format(ds_init_alpha)},
          {"frontend_mode", to_string(frontend_mode)},
          {"nafm_d_ff", kv::format(nafm_d_ff)},
          {"pre_ln", kv::format(pre_ln)}};
}

void ModelConfig::apply_kv(const std::map<std::string, std::string>& m) {
  kv::read(m, "n_enc", n_enc);
  kv::read(m, "n_dec", n_dec);
  kv::read(m, "d_model", d_model);
  kv::read(m, "d_head", d_head);
  kv::read(m, "heads", heads);
  kv::read(m, "d_ff", d_ff);
  kv::read(m, "vocab_size", vocab_size);
  if (auto it = m.find("penalty_mode"); it != m.end()) {
    penalty_mode = parse_penalty_mode(it->second);
  }
  kv::read(m, "pdp_r", pdp_r);
  kv::read(m, "dropout", dropout);
  kv::read(m, "ds_init", ds_init);
  kv::read(m, "ds_init_alpha", ds_init_alpha);
  if (auto it = m.find("frontend_mode"); it != m.end()) {
    frontend_mode = parse_frontend_mode(it->second);
  }
  kv::read(m, "nafm_d_ff", nafm_d_ff);
  kv::read(m, "pre_ln", pre_ln);
}

std::map<std::string, ad::Shape> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  std::map<std::string, ad::Shape> m;
  add_linear(m, "input", frontend::kStackedDim, d);
  if (cfg.frontend_mode == FrontendMode::kNafm) {
    const auto nff = static_cast<std::size_t>(cfg.nafm_d_ff);
    add_linear(m, "nafm.proj", kRawWindow, kSpeechDim);
    for (int b = 1; b <= 2; ++b) {
      const auto pre = layer_name("nafm", b);
      add_linear(m, pre + ".ff1", kSpeechDim, nff);
      add_linear(m, pre + ".ff2", nff, kSpeechDim);
      add_ln(m, pre + ".ln", kSpeechDim);
    }
  }
  for (int l = 1; l <= cfg.n_enc; ++l) {
    const auto pre = layer_name("enc", l);
    add_attention(m, pre + ".attn", d);
    if (cfg.penalty_mode == PenaltyMode::kPdp) {
      m[pre + ".attn.pdp_w"] = {static_cast<std::size_t>(cfg.heads),
                                static_cast<std::size_t>(cfg.pdp_r)};
    }
    add_ln(m, pre + ".ln1", d);
    add_linear(m, pre + ".ff1", d, ff);
    add_linear(m, pre + ".ff2", ff, d);
    add_ln(m, pre + ".ln2", d);
  }
  m["dec.embed"] = {v, d};
  for (int l = 1; l <= cfg.n_dec; ++l) {
    const auto pre = layer_name("dec", l);
    add_attention(m, pre + ".self", d);
    add_ln(m, pre + ".ln1", d);
    add_attention(m, pre + ".cross", d);
    add_ln(m, pre + ".ln2", d);
    add_linear(m, pre + ".ff1", d, ff);
    add_linear(m, pre + ".ff2", ff, d);
    add_ln(m, pre + ".ln3", d);
  }
  if (cfg.pre_ln) {
    add_ln(m, "enc.final_ln", d);
    add_ln(m, "dec.final_ln", d);
  }
  add_linear(m, "dec.out", d, v);
  add_linear(m, "ctc", d, v + 1);
  return m;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [_, s] : parameter_shapes(cfg)) n += ad::shape_numel(s);
  return n;
}

// ---------------------------------------------------------------------------
// Penalties and attention

std::vector<double> distance_matrix(std::size_t t) {
  std::vector<double> d(t * t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      d[i * t + j] = static_cast<double>(i > j ? i - j : j - i) + 1.0;
    }
  }
  return d;
}

const ad::Tensor& log_penalty(std::size_t t) {
  static std::mutex mu;
  static std::unordered_map<std::size_t, ad::Tensor> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(t);
  if (it == cache.end()) {
    auto d = distance_matrix(t);
    for (auto& x : d) x = std::log(x);
    it = cache.emplace(t, ad::Tensor::from({t, t}, std::move(d))).first;
  }
  return it->second;
}

ad::Tensor pdp_penalty(const ad::Tensor& w, std::size_t t) {
  const auto r = w.numel();
  const auto& logd = log_penalty(t);
  std::vector<std::size_t> idx(t * t);
  std::vector<double> out(t * t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      const std::size_t dist = (i > j ? i - j : j - i) + 1;
      idx[i * t + j] = std::min(dist, r) - 1;
      out[i * t + j] = logd.at(i * t + j) * w.at(idx[i * t + j]);
    }
  }
  return ad::make_result({t, t}, std::move(out), {w},
                         [idx = std::move(idx), t](ad::Node& o) {
                           const auto& logd = log_penalty(t);
                           auto& g = o.inputs[0]->grad_buffer();
                           for (std::size_t k = 0; k < idx.size(); ++k) {
                             g[idx[k]] += o.grad[k] * logd.at(k);
                           }
                         });
}

ad::Tensor attention_logits(const ad::Tensor& q, const ad::Tensor& k,
                            const ad::Tensor& penalty) {
  auto s = ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  return penalty.defined() ? ad::sub(s, penalty) : s;
}

ad::Tensor attention_head(const ad::Tensor& q, const ad::Tensor& k,
                          const ad::Tensor& v, const ad::Tensor& penalty,
                          std::span<const std::uint8_t> mask) {
  return ad::matmul(ad::masked_softmax(attention_logits(q, k, penalty), mask), v);
}

std::vector<double> sinusoidal_encoding(std::size_t t, std::size_t d) {
  if (d % 2 != 0) throw ad::ContractError("sinusoidal_encoding: d_model must be even");
  std::vector<double> pe(t * d);
  for (std::size_t pos = 0; pos < t; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, 2.0 * static_cast<double>(i) /
                                                 static_cast<double>(d));
      pe[pos * d + 2 * i] = std::sin(angle);
      pe[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

double ds_init_scale(double alpha, int layer) {
  if (layer < 1) throw ad::ContractError("ds_init_scale: layers are 1-based");
  return alpha / std::sqrt(static_cast<double>(layer));
}

// ---------------------------------------------------------------------------
// Initialization

ParamStore ds_init(const ModelConfig& cfg, std::uint64_t seed) {
  const auto shapes = parameter_shapes(cfg);
  ad::Rng rng(seed);
  ParamStore store;
  for (const auto& [name, shape] : shapes) {
    auto ends_with = [&name](const char* suffix) {
      const auto n = std::strlen(suffix);
      return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
    };
    std::vector<double> v(ad::shape_numel(shape), 0.0);
    if (ends_with(".gain") || ends_with(".pdp_w")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (shape.size() == 2) {
      double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      // Layer weights: "enc.<l>." / "dec.<l>." prefixes.
      if (cfg.ds_init && (name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0)) {
        const auto dot = name.find('.', 4);
        const auto layer = name.substr(4, dot - 4);
        if (!layer.empty() && std::all_of(layer.begin(), layer.end(), ::isdigit)) {
          bound *= ds_init_scale(cfg.ds_init_alpha, std::stoi(layer));
        }
      }
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& x : v) x = u(rng);
    }
    store.add(name, ad::Tensor::from(shape, std::move(v)));
  }
  return store;
}

// ---------------------------------------------------------------------------
// SpeechTranslator

std::vector<std::uint8_t> EncoderOutput::mask(std::size_t i) const {
  const auto& s = segments.at(i);
  std::vector<std::uint8_t> m(s.length, 0);
  std::fill_n(m.begin(), s.valid, 1);
  return m;
}

SpeechTranslator::SpeechTranslator(ModelConfig cfg, std::uint64_t seed)
    : cfg_(cfg), params_(ds_init(cfg, seed)) {}

SpeechTranslator::SpeechTranslator(ModelConfig cfg, ParamStore params)
    : cfg_(cfg), params_(std::move(params)) {
  const auto shapes = parameter_shapes(cfg_);
  if (shapes.size() != params_.size()) {
    throw FormatError("checkpoint holds " + std::to_string(params_.size()) +
                      " arrays, config expects " + std::to_string(shapes.size()));
  }
  for (const auto& [name, shape] : shapes) {
    if (!params_.contains(name)) throw FormatError("checkpoint lacks '" + name + "'");
    if (params_.at(name).shape() != shape) {
      throw FormatError("checkpoint array '" + name + "' has shape " +
                        ad::shape_str(params_.at(name).shape()) + ", expected " +
                        ad::shape_str(shape));
    }
  }
}

ad::Tensor SpeechTranslator::linear(const ad::Tensor& x, const std::string& prefix) const {
  return ad::add_row(ad::matmul(x, p(prefix + ".w")), p(prefix + ".b"));
}

ad::Tensor SpeechTranslator::layer_norm(const ad::Tensor& x,
                                        const std::string& prefix) const {
  return ad::layer_norm(x, p(prefix + ".gain"), p(prefix + ".bias"), 1e-6);
}

ad::Tensor SpeechTranslator::feed_forward(const ad::Tensor& x, const std::string& prefix,
                                          ForwardContext& ctx) const {
  auto h = ad::relu(linear(x, prefix + ".ff1"));
  if (ctx.rng != nullptr) h = ad::dropout(h, cfg_.dropout, *ctx.rng, ctx.train);
  return linear(h, prefix + ".ff2");
}

ad::Tensor SpeechTranslator::sublayer(const ad::Tensor& x, const ad::Tensor& y,
                                      const std::string& ln_prefix,
                                      ForwardContext& ctx) const {
  auto r = y;
  if (ctx.rng != nullptr) r = ad::dropout(r, cfg_.dropout, *ctx.rng, ctx.train);
  auto s = ad::add(x, r);
  return cfg_.pre_ln ? s : layer_norm(s, ln_prefix);
}

ad::Tensor SpeechTranslator::attention(const ad::Tensor& q_in, const ad::Tensor& kv_in,
                                       const std::vector<Segment>& q_segs,
                                       const std::vector<Segment>& kv_segs,
                                       const std::string& prefix, bool causal,
                                       bool distance_penalty) const {
  const auto q = linear(q_in, prefix + ".q");
  const auto k = linear(kv_in, prefix + ".k");
  const auto v = linear(kv_in, prefix + ".v");
  const auto dh = static_cast<std::size_t>(cfg_.d_head);
  const bool pdp = distance_penalty && cfg_.penalty_mode == PenaltyMode::kPdp;
  const bool logp = distance_penalty && cfg_.penalty_mode == PenaltyMode::kLog;

  // Per-segment key projections are shared by every query block that
  // attends to the same rows (beam hypotheses reuse one encoder output).
  std::map<std::size_t, std::pair<ad::Tensor, ad::Tensor>> kv_cache;
  std::vector<ad::Tensor> blocks;
  blocks.reserve(q_segs.size());
  for (std::size_t i = 0; i < q_segs.size(); ++i) {
    const auto& qs = q_segs[i];
    const auto& ks = kv_segs[i];
    auto it = kv_cache.find(ks.offset);
    if (it == kv_cache.end()) {
      it = kv_cache
               .emplace(ks.offset, std::make_pair(ad::slice_rows(k, ks.offset, ks.length),
                                                  ad::slice_rows(v, ks.offset, ks.length)))
               .first;
    }
    const auto& [ki, vi] = it->second;
    const auto qi = ad::slice_rows(q, qs.offset, qs.length);

    std::vector<std::uint8_t> mask;
    if (causal || ks.valid < ks.length) {
      mask.assign(qs.length * ks.length, 0);
      for (std::size_t r = 0; r < qs.length; ++r) {
        const auto limit = causal ? std::min(r + 1, ks.valid) : ks.valid;
        std::fill_n(mask.begin() + r * ks.length, limit, 1);
      }
    }
    ad::Tensor fixed_penalty;
    if (logp) fixed_penalty = log_penalty(ks.length);

    std::vector<ad::Tensor> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.heads));
    for (std::size_t h = 0; h < static_cast<std::size_t>(cfg_.heads); ++h) {
      ad::Tensor penalty = fixed_penalty;
      if (pdp) {
        penalty = pdp_penalty(ad::slice_rows(p(prefix + ".pdp_w"), h, 1), ks.length);
      }
      heads.push_back(attention_head(ad::slice_cols(qi, h * dh, dh),
                                     ad::slice_cols(ki, h * dh, dh),
                                     ad::slice_cols(vi, h * dh, dh), penalty, mask));
    }
    blocks.push_back(heads.size() == 1 ? heads.front() : ad::concat_cols(heads));
  }
  auto merged = blocks.size() == 1 ? blocks.front() : ad::concat_rows(blocks);
  return linear(merged, prefix + ".o");
}

ad::Tensor SpeechTranslator::nafm_forward(const ad::Tensor& raw, ForwardContext& ctx) const {
  if (raw.cols() != kRawWindow) {
    throw ad::DimensionError("nafm_forward: expected " + std::to_string(kRawWindow) +
                             "-sample windows, got " + ad::shape_str(raw.shape()));
  }
  auto x = linear(raw, "nafm.proj");
  for (int b = 1; b <= 2; ++b) {
    const auto pre = layer_name("nafm", b);
    auto h = ad::relu(linear(x, pre + ".ff1"));
    if (ctx.rng != nullptr) h = ad::dropout(h, cfg_.dropout, *ctx.rng, ctx.train);
    x = layer_norm(ad::add(linear(h, pre + ".ff2"), x), pre + ".ln");
  }
  return x;
}

EncoderOutput SpeechTranslator::encode(const std::vector<ad::Tensor>& inputs,
                                       ForwardContext& ctx,
                                       const std::vector<std::size_t>& valid) const {
  if (inputs.empty()) throw ad::ContractError("encode: empty batch");
  EncoderOutput out;
  std::vector<ad::Tensor> stacked;
  stacked.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& x = inputs[i];
    if (!x.defined() || x.numel() == 0 || x.rows() == 0) {
      throw ad::ContractError("encode: zero-length input");
    }
    if (cfg_.frontend_mode == FrontendMode::kNafm) {
      auto feats = nafm_forward(x, ctx);
      out.nafm_features.push_back(feats);
      const auto t = feats.rows();
      const auto groups = (t + kStack - 1) / kStack;
      if (groups * kStack != t) {
        feats = ad::concat_rows(
            {feats, ad::Tensor::zeros({groups * kStack - t, kSpeechDim})});
      }
      stacked.push_back(ad::reshape(feats, {groups, kStack * kSpeechDim}));
    } else {
      if (x.cols() != frontend::kStackedDim) {
        throw ad::DimensionError("encode: expected 360-d stacked features, got " +
                                 ad::shape_str(x.shape()));
      }
      stacked.push_back(x);
    }
    Segment s;
    s.offset = i == 0 ? 0 : out.segments.back().offset + out.segments.back().length;
    s.length = stacked.back().rows();
    s.valid = valid.empty() ? s.length : std::min(valid[i], s.length);
    if (s.valid == 0) throw ad::ContractError("encode: no valid frames");
    out.segments.push_back(s);
  }

  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const auto total = out.segments.back().offset + out.segments.back().length;
  std::vector<double> pe(total * d);
  for (const auto& s : out.segments) {
    auto seg_pe = sinusoidal_encoding(s.length, d);
    std::copy(seg_pe.begin(), seg_pe.end(), pe.begin() + s.offset * d);
  }
  auto x = stacked.size() == 1 ? stacked.front() : ad::concat_rows(stacked);
  auto h = ad::add(linear(x, "input"), ad::Tensor::from({total, d}, std::move(pe)));

  const bool penalize = cfg_.penalty_mode != PenaltyMode::kNone;
  for (int l = 1; l <= cfg_.n_enc; ++l) {
    const auto pre = layer_name("enc", l);
    if (cfg_.pre_ln) {
      auto n1 = layer_norm(h, pre + ".ln1");
      auto a = attention(n1, n1, out.segments, out.segments, pre + ".attn", false, penalize);
      h = sublayer(h, a, pre + ".ln1", ctx);
      h = sublayer(h, feed_forward(layer_norm(h, pre + ".ln2"), pre, ctx), pre + ".ln2", ctx);
    } else {
      h = sublayer(h, attention(h, h, out.segments, out.segments, pre + ".attn", false, penalize),
                   pre + ".ln1", ctx);
      h = sublayer(h, feed_forward(h, pre, ctx), pre + ".ln2", ctx);
    }
  }
  if (cfg_.pre_ln) h = layer_norm(h, "enc.final_ln");
  out.states = h;
  return out;
}

ad::Tensor SpeechTranslator::decode(const std::vector<std::vector<std::int64_t>>& prefixes,
                                    const EncoderOutput& enc,
                                    const std::vector<std::size_t>& enc_index,
                                    ForwardContext& ctx) const {
  if (prefixes.empty() || prefixes.size() != enc_index.size()) {
    throw ad::ContractError("decode: need one encoder index per prefix");
  }
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  std::vector<std::int64_t> ids;
  std::vector<Segment> q_segs, kv_segs;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const auto& pfx = prefixes[i];
    if (pfx.empty()) throw ad::ContractError("decode: empty prefix");
    for (auto id : pfx) {
      if (id < 0 || id >= cfg_.vocab_size) {
        throw ad::ContractError("decode: token id " + std::to_string(id) +
                                " outside vocabulary of " +
                                std::to_string(cfg_.vocab_size));
      }
    }
    q_segs.push_back({ids.size(), pfx.size(), pfx.size()});
    kv_segs.push_back(enc.segments.at(enc_index[i]));
    ids.insert(ids.end(), pfx.begin(), pfx.end());
  }
  std::vector<double> pe(ids.size() * d);
  for (const auto& s : q_segs) {
    auto seg_pe = sinusoidal_encoding(s.length, d);
    std::copy(seg_pe.begin(), seg_pe.end(), pe.begin() + s.offset * d);
  }
  auto h = ad::add(ad::scale(ad::embedding(p("dec.embed"), ids),
                             std::sqrt(static_cast<double>(d))),
                   ad::Tensor::from({ids.size(), d}, std::move(pe)));
  for (int l = 1; l <= cfg_.n_dec; ++l) {
    const auto pre = layer_name("dec", l);
    if (cfg_.pre_ln) {
      auto n1 = layer_norm(h, pre + ".ln1");
      h = sublayer(h, attention(n1, n1, q_segs, q_segs, pre + ".self", true, false),
                   pre + ".ln1", ctx);
      h = sublayer(h, attention(layer_norm(h, pre + ".ln2"), enc.states, q_segs, kv_segs,
                                pre + ".cross", false, false),
                   pre + ".ln2", ctx);
      h = sublayer(h, feed_forward(layer_norm(h, pre + ".ln3"), pre, ctx), pre + ".ln3", ctx);
    } else {
      h = sublayer(h, attention(h, h, q_segs, q_segs, pre + ".self", true, false),
                   pre + ".ln1", ctx);
      h = sublayer(h, attention(h, enc.states, q_segs, kv_segs, pre + ".cross", false, false),
                   pre + ".ln2", ctx);
      h = sublayer(h, feed_forward(h, pre, ctx), pre + ".ln3", ctx);
    }
  }
  if (cfg_.pre_ln) h = layer_norm(h, "dec.final_ln");
  return linear(h, "dec.out");
}

ad::Tensor SpeechTranslator::ctc_log_probs(const EncoderOutput& enc) const {
  return ad::log_softmax(linear(enc.states, "ctc"));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kCkptMagic[8] = {'S', 'C', 'S', 'T', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ParamStore& params) {
  std::ostringstream header;
  header << "format=scst-checkpoint\n";
  header << "checkpoint_version=" << kCheckpointVersion << "\n";
  header << "param_format_version=" << kParamFormatVersion << "\n";
  for (const auto& key : ModelConfig::keys()) {
    header << key << "=" << cfg.to_kv().at(key) << "\n";
  }
  const auto text = header.str();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + tmp.string());
    os.write(kCkptMagic, sizeof(kCkptMagic));
    io::put_u32(os, kCheckpointVersion);
    io::put_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_params(os, params);
    if (!os) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof(kCkptMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = io::get_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) +
                      " does not match this build (" +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = io::get_u32(is);
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (!is) throw FormatError(path.string() + ": truncated header");
  std::istringstream hs(text);
  const auto kvs = kv::parse(hs, path.string());
  Checkpoint ck;
  ck.config.apply_kv(kvs);
  ck.config.validate();
  ck.params = read_params(is);
  // Validates names and shapes.
  SpeechTranslator check(ck.config, ck.params.clone());
  return ck;
}

}  // namespace scst
