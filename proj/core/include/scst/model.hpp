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

#ifndef SCST_MODEL_HPP
#define SCST_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "scst/autodiff.hpp"
#include "scst/params.hpp"

namespace scst {

enum class PenaltyMode { kNone, kLog, kPdp };
enum class FrontendMode { kFilterbank, kNafm };

const char* to_string(PenaltyMode m);
const char* to_string(FrontendMode m);
PenaltyMode parse_penalty_mode(const std::string& s);
FrontendMode parse_frontend_mode(const std::string& s);

/// Architecture hyperparameters. Field names double as config-file keys.
struct ModelConfig {
  int n_enc = 4;
  int n_dec = 2;
  int d_model = 64;
  int d_head = 16;
  int heads = 4;
  int d_ff = 256;
  int vocab_size = 0;  // text vocabulary incl. reserved ids; CTC adds a blank
  PenaltyMode penalty_mode = PenaltyMode::kPdp;
  int pdp_r = 512;
  double dropout = 0.1;
  bool ds_init = true;
  double ds_init_alpha = 0.5;
  FrontendMode frontend_mode = FrontendMode::kFilterbank;
  int nafm_d_ff = 256;
  bool pre_ln = false;

  /// N_enc=12, N_dec=6, d_model=256, H=4, d_ff=4096, V=8K, PDP R=512.
  static ModelConfig full_preset(int vocab_size = 8000);
  /// Laptop-scale defaults.
  static ModelConfig desk_preset(int vocab_size);

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  std::map<std::string, std::string> to_kv() const;
  /// Updates fields present in `kv`; unknown keys are ignored here.
  void apply_kv(const std::map<std::string, std::string>& kv);
  static const std::vector<std::string>& keys();
};

/// Shapes of every trainable array, keyed by parameter name. Pure function
/// of the config; the model allocates exactly these.
std::map<std::string, ad::Shape> parameter_shapes(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Distance penalties and attention

/// D[i][j] = |i-j| + 1, row-major T × T.
std::vector<double> distance_matrix(std::size_t t);
/// Natural log of `distance_matrix(t)`; cached per length.
const ad::Tensor& log_penalty(std::size_t t);
/// log(D) ⊙ w[min(D, R) - 1] for a per-head weight vector `w` of length R.
/// Gradients flow into `w`.
ad::Tensor pdp_penalty(const ad::Tensor& w, std::size_t t);

/// QKᵀ/√d_head − penalty. `penalty` may be undefined (no penalty).
ad::Tensor attention_logits(const ad::Tensor& q, const ad::Tensor& k,
                            const ad::Tensor& penalty);
/// masked_softmax(attention_logits(...)) · V.
ad::Tensor attention_head(const ad::Tensor& q, const ad::Tensor& k,
                          const ad::Tensor& v, const ad::Tensor& penalty,
                          std::span<const std::uint8_t> mask);

/// Sinusoidal positions, row-major T × d (d even).
std::vector<double> sinusoidal_encoding(std::size_t t, std::size_t d);

/// Scale applied to the Xavier bound of weight matrices in layer `layer`
/// (1-based) under depth-scaled initialization: alpha / sqrt(layer).
double ds_init_scale(double alpha, int layer);

// ---------------------------------------------------------------------------
// Model

/// A contiguous block of rows in a packed tensor; `valid` leading rows are
/// real frames, the rest padding.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
  std::size_t valid = 0;
};

struct ForwardContext {
  ad::Rng* rng = nullptr;
  bool train = false;
};

/// Encoder result for a batch: per-utterance states are row blocks of
/// `states` described by `segments`.
struct EncoderOutput {
  ad::Tensor states;
  std::vector<Segment> segments;
  /// Learned acoustic features (T × 120) per utterance; NAFM mode only.
  std::vector<ad::Tensor> nafm_features;

  std::size_t size() const { return segments.size(); }
  /// Valid-position flags of utterance i.
  std::vector<std::uint8_t> mask(std::size_t i) const;
};

class SpeechTranslator {
 public:
  /// Depth-scaled random initialization.
  SpeechTranslator(ModelConfig cfg, std::uint64_t seed);
  /// Adopts existing parameters; names and shapes must match the config.
  SpeechTranslator(ModelConfig cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::int64_t blank_id() const { return cfg_.vocab_size; }

  /// `inputs[i]` is T_i × 360 stacked filterbanks, or T_i × 400 raw
  /// windows in NAFM mode. `valid[i]` (optional) counts non-pad rows.
  EncoderOutput encode(const std::vector<ad::Tensor>& inputs, ForwardContext& ctx,
                       const std::vector<std::size_t>& valid = {}) const;

  /// Teacher-forced decoder: logits (ΣL_i × V) for prefixes (each starting
  /// with BOS) where prefix i attends to utterance `enc_index[i]`.
  ad::Tensor decode(const std::vector<std::vector<std::int64_t>>& prefixes,
                    const EncoderOutput& enc, const std::vector<std::size_t>& enc_index,
                    ForwardContext& ctx) const;

  /// CTC head: per-frame log-probabilities over V+1 classes, packed like
  /// `enc.states`.
  ad::Tensor ctc_log_probs(const EncoderOutput& enc) const;

  /// Learned acoustic features from raw windows (T × 400 -> T × 120).
  ad::Tensor nafm_forward(const ad::Tensor& raw, ForwardContext& ctx) const;

 private:
  ad::Tensor linear(const ad::Tensor& x, const std::string& prefix) const;
  ad::Tensor layer_norm(const ad::Tensor& x, const std::string& prefix) const;
  ad::Tensor feed_forward(const ad::Tensor& x, const std::string& prefix,
                          ForwardContext& ctx) const;
  ad::Tensor attention(const ad::Tensor& q_in, const ad::Tensor& kv_in,
                       const std::vector<Segment>& q_segs,
                       const std::vector<Segment>& kv_segs, const std::string& prefix,
                       bool causal, bool distance_penalty) const;
  ad::Tensor sublayer(const ad::Tensor& x, const ad::Tensor& y,
                      const std::string& ln_prefix, ForwardContext& ctx) const;
  const ad::Tensor& p(const std::string& name) const { return params_.at(name); }

  ModelConfig cfg_;
  ParamStore params_;
};

/// Initialized parameters for `cfg` (the ds_init operation).
ParamStore ds_init(const ModelConfig& cfg, std::uint64_t seed);

// Checkpoint file:
//   "SCSTCKPT" | u32 version(=1) | u32 header_len | header text
//   (key=value lines of ModelConfig plus format/producer keys) |
//   parameter container (see params.hpp)
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ParamStore& params);
struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scst

#endif  // SCST_MODEL_HPP
