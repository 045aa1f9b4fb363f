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

#ifndef SCST_TRAINING_HPP
#define SCST_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scst/autodiff.hpp"
#include "scst/data.hpp"
#include "scst/model.hpp"
#include "scst/params.hpp"

namespace scst::train {

enum class DevMetric { kLoss, kBleu };
const char* to_string(DevMetric m);
DevMetric parse_dev_metric(const std::string& s);

/// Optimization hyperparameters. Field names double as config-file keys.
struct TrainConfig {
  double ctc_weight = 0.3;    // lambda
  double nafm_weight = 0.05;  // gamma
  double label_smoothing = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double lr_factor = 1.0;  // multiplies the warmup schedule
  int warmup_steps = 400;
  int max_steps = 3000;
  int batch_target_tokens = 200;
  std::uint64_t seed = 1;
  int checkpoint_every = 100;
  int keep_best_k = 10;
  DevMetric dev_metric = DevMetric::kLoss;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  void apply_kv(const std::map<std::string, std::string>& kv);
  static const std::vector<std::string>& keys();
};

/// One prepared training pair. `input` is T' × 360 stacked filterbanks, or
/// T × 400 raw windows for the learned front end, in which case `anchor`
/// holds the T × 120 filterbank target.
struct Example {
  std::string id;
  ad::Tensor input;
  ad::Tensor anchor;
  std::vector<std::int64_t> target;  // no BOS/EOS
};

/// Front-end features plus tokenized text, computed with up to `workers`
/// threads. Output order follows `utterances`.
std::vector<Example> prepare_examples(std::span<const data::Utterance> utterances,
                                      const data::Vocabulary& vocab, FrontendMode mode,
                                      int workers = 1);
Example prepare_example(const std::string& id, const frontend::Waveform& audio,
                        const std::vector<std::int64_t>& target, FrontendMode mode);

// ---------------------------------------------------------------------------
// Objectives

/// Mean over live rows (`live[r] != 0`) of the cross-entropy between
/// softmax(logits[r]) and (1-eps)·onehot(gold[r]) + eps·uniform(V).
ad::Tensor mle_loss(const ad::Tensor& logits, std::span<const std::int64_t> gold,
                    std::span<const std::uint8_t> live, double eps);

struct LossTerms {
  ad::Tensor total;
  double mle = 0.0;
  double ctc = 0.0;      // mean over feasible items; 0 when none
  double nafm_l2 = 0.0;  // per-frame squared distance; 0 outside NAFM mode
  std::size_t ctc_items = 0;
  std::size_t tokens = 0;
};

/// (1-lambda)·MLE + lambda·CTC on one forward pass. Infeasible items are left
/// out of the CTC mean.
LossTerms joint_loss(const SpeechTranslator& model, std::span<const Example* const> batch,
                     double lambda, double label_smoothing, ForwardContext& ctx);

/// joint_loss + gamma · Σ‖X2 − Xf‖² / Σ T over the batch.
LossTerms nafm_loss(const SpeechTranslator& model, std::span<const Example* const> batch,
                    double lambda, double gamma, double label_smoothing,
                    ForwardContext& ctx);

/// Σ‖a − b‖² / rows; shapes must agree.
ad::Tensor frame_l2(const std::vector<ad::Tensor>& a, const std::vector<ad::Tensor>& b);

// ---------------------------------------------------------------------------
// Optimization

/// d_model^-0.5 · min(step^-0.5, step · warmup^-1.5), step >= 1.
double lr_schedule(std::int64_t step, int d_model, int warmup);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9);

  /// Bias-corrected update of every parameter from its gradient (missing
  /// gradients count as zero). Throws NumericError and leaves parameters
  /// and state untouched if any gradient is not finite.
  void step(ParamStore& params, double lr);
  std::int64_t steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

/// Length-sorted greedy packing: a batch holds items while
/// count × max length <= budget. Ties in length are broken by a seeded
/// shuffle, and batch order is shuffled with the same seed. An item longer
/// than the budget forms its own batch (with a warning).
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths,
                                                   std::size_t budget, std::uint64_t seed);

struct CheckpointRecord {
  std::int64_t step = 0;
  double dev_score = 0.0;  // lower is better
  ParamStore params;
};

/// Elementwise mean of the `k` records with the lowest dev_score (ties: lower
/// step). Uses every record, with a warning, when fewer than `k` exist.
ParamStore average_checkpoints(std::span<const CheckpointRecord> records, std::size_t k);

// ---------------------------------------------------------------------------
// Training loop

struct StepMetrics {
  std::int64_t step = 0;
  double lr = 0.0;
  double mle = 0.0;
  double ctc = 0.0;
  double nafm_l2 = 0.0;
  double total = 0.0;
};

/// Tab-separated `step lr mle ctc nafm_l2 total`.
void write_metrics_header(std::ostream& os);
void write_metrics_line(std::ostream& os, const StepMetrics& m);

/// Token-level cross-entropy (no smoothing) averaged over all dev tokens.
double dev_loss(const SpeechTranslator& model, std::span<const Example> dev);
/// Negated corpus BLEU of greedy output over token ids.
double dev_neg_bleu(const SpeechTranslator& model, std::span<const Example> dev);

struct TrainOptions {
  /// Checkpoints `ckpt-<step>.bin` for the kept best-k and the averaged
  /// `model.bin` go here when set.
  std::filesystem::path out_dir;
  std::ostream* metrics = nullptr;
  /// Called after every dev evaluation with (step, score).
  std::function<void(std::int64_t, double)> on_eval;
};

struct TrainResult {
  ParamStore averaged;
  std::vector<CheckpointRecord> best;  // ascending dev_score
  std::vector<StepMetrics> history;
  double final_dev_score = 0.0;  // of the averaged parameters
  std::int64_t steps = 0;
};

/// Runs `cfg.max_steps` optimizer steps on `model`, evaluating on `dev`
/// every `checkpoint_every` steps (and at the end). On return `model` holds
/// the averaged parameters. A non-finite loss or gradient aborts with
/// NumericError after writing `nan-dump.bin` (when out_dir is set).
TrainResult train(const TrainConfig& cfg, SpeechTranslator& model,
                  std::span<const Example> train_set, std::span<const Example> dev_set,
                  const TrainOptions& opts = {});

}  // namespace scst::train

#endif  // SCST_TRAINING_HPP
