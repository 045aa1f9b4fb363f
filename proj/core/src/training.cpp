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

#include "scst/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "scst/bleu.hpp"
#include "scst/ctc.hpp"
#include "scst/decoding.hpp"
#include "scst/frontend.hpp"
#include "scst/kv_config.hpp"
#include "scst/log.hpp"

namespace scst::train {

const char* to_string(DevMetric m) { return m == DevMetric::kBleu ? "bleu" : "loss"; }

DevMetric parse_dev_metric(const std::string& s) {
  if (s == "loss") return DevMetric::kLoss;
  if (s == "bleu") return DevMetric::kBleu;
  throw ConfigError("dev_metric", "expected loss|bleu, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) {
    throw ConfigError("ctc_weight", "must lie in [0, 1], got " + kv::format(ctc_weight));
  }
  if (!(nafm_weight >= 0.0)) throw ConfigError("nafm_weight", "must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("label_smoothing", "must lie in [0, 1)");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1", "must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps", "must be > 0");
  if (!(lr_factor > 0.0)) throw ConfigError("lr_factor", "must be > 0");
  if (warmup_steps < 1) throw ConfigError("warmup_steps", "must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps", "must be >= 0");
  if (batch_target_tokens < 1) throw ConfigError("batch_target_tokens", "must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every", "must be >= 1");
  if (keep_best_k < 1) throw ConfigError("keep_best_k", "must be >= 1");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {
      "ctc_weight",   "nafm_weight", "label_smoothing",     "adam_beta1",
      "adam_beta2",   "adam_eps",    "lr_factor",           "warmup_steps",
      "max_steps",    "batch_target_tokens", "seed",        "checkpoint_every",
      "keep_best_k",  "dev_metric"};
  return k;
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {{"ctc_weight", kv::format(ctc_weight)},
          {"nafm_weight", kv::format(nafm_weight)},
          {"label_smoothing", kv::format(label_smoothing)},
          {"adam_beta1", kv::format(adam_beta1)},
          {"adam_beta2", kv::format(adam_beta2)},
          {"adam_eps", kv::format(adam_eps)},
          {"lr_factor", kv::format(lr_factor)},
          {"warmup_steps", kv::format(warmup_steps)},
          {"max_steps", kv::format(max_steps)},
          {"batch_target_tokens", kv::format(batch_target_tokens)},
          {"seed", kv::format(seed)},
          {"checkpoint_every", kv::format(checkpoint_every)},
          {"keep_best_k", kv::format(keep_best_k)},
          {"dev_metric", to_string(dev_metric)}};
}

void TrainConfig::apply_kv(const std::map<std::string, std::string>& m) {
  kv::read(m, "ctc_weight", ctc_weight);
  kv::read(m, "nafm_weight", nafm_weight);
  kv::read(m, "label_smoothing", label_smoothing);
  kv::read(m, "adam_beta1", adam_beta1);
  kv::read(m, "adam_beta2", adam_beta2);
  kv::read(m, "adam_eps", adam_eps);
  kv::read(m, "lr_factor", lr_factor);
  kv::read(m, "warmup_steps", warmup_steps);
  kv::read(m, "max_steps", max_steps);
  kv::read(m, "batch_target_tokens", batch_target_tokens);
  kv::read(m, "seed", seed);
  kv::read(m, "checkpoint_every", checkpoint_every);
  kv::read(m, "keep_best_k", keep_best_k);
  if (auto it = m.find("dev_metric"); it != m.end()) dev_metric = parse_dev_metric(it->second);
}

// ---------------------------------------------------------------------------

Example prepare_example(const std::string& id, const frontend::Waveform& audio,
                        const std::vector<std::int64_t>& target, FrontendMode mode) {
  Example ex;
  ex.id = id;
  ex.target = target;
  if (mode == FrontendMode::kNafm) {
    auto raw = frontend::raw_frames(audio);
    const auto t = raw.size() / frontend::kWindowSamples;
    if (t == 0) throw DataError(id + ": audio shorter than one window");
    ex.input = ad::Tensor::from({t, frontend::kWindowSamples}, std::move(raw));
    auto f = frontend::speech_features(audio);
    ex.anchor = ad::Tensor::from({f.num_frames, f.dim}, std::move(f.values));
  } else {
    auto f = frontend::extract_features(audio);
    if (f.num_frames == 0) throw DataError(id + ": audio shorter than one window");
    ex.input = ad::Tensor::from({f.num_frames, f.dim}, std::move(f.values));
  }
  return ex;
}

std::vector<Example> prepare_examples(std::span<const data::Utterance> utterances,
                                      const data::Vocabulary& vocab, FrontendMode mode,
                                      int workers) {
  std::vector<Example> out(utterances.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < utterances.size();) {
      try {
        const auto& u = utterances[i];
        out[i] = prepare_example(u.id, u.audio, vocab.encode(u.translation), mode);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, workers));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  return out;
}

// ---------------------------------------------------------------------------

ad::Tensor mle_loss(const ad::Tensor& logits, std::span<const std::int64_t> gold,
                    std::span<const std::uint8_t> live, double eps) {
  const auto rows = logits.rows();
  const auto v = logits.cols();
  if (gold.size() != rows || live.size() != rows) {
    throw ad::DimensionError("mle_loss: " + std::to_string(rows) + " logit rows, " +
                             std::to_string(gold.size()) + " gold ids, " +
                             std::to_string(live.size()) + " mask entries");
  }
  const auto n = static_cast<std::size_t>(std::count_if(
      live.begin(), live.end(), [](std::uint8_t m) { return m != 0; }));
  if (n == 0) throw ContractError("mle_loss: every target position is padding");
  std::vector<double> w(rows * v, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double smooth = eps / static_cast<double>(v) * inv_n;
  for (std::size_t r = 0; r < rows; ++r) {
    if (live[r] == 0) continue;
    if (gold[r] < 0 || static_cast<std::size_t>(gold[r]) >= v) {
      throw ContractError("mle_loss: gold id " + std::to_string(gold[r]) + " out of range");
    }
    std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(r * v), v, -smooth);
    w[r * v + static_cast<std::size_t>(gold[r])] -= (1.0 - eps) * inv_n;
  }
  return ad::weighted_sum(ad::log_softmax(logits), w);
}

ad::Tensor frame_l2(const std::vector<ad::Tensor>& a, const std::vector<ad::Tensor>& b) {
  if (a.size() != b.size() || a.empty()) throw ContractError("frame_l2: batch size mismatch");
  std::size_t frames = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != b[i].shape()) {
      throw ContractError("frame_l2: " + ad::shape_str(a[i].shape()) + " vs " +
                          ad::shape_str(b[i].shape()));
    }
    frames += a[i].rows();
  }
  auto xa = a.size() == 1 ? a.front() : ad::concat_rows(a);
  auto xb = b.size() == 1 ? b.front() : ad::concat_rows(b);
  return ad::scale(ad::sum(ad::square(ad::sub(xa, xb))), 1.0 / static_cast<double>(frames));
}

namespace {

LossTerms forward_terms(const SpeechTranslator& model, std::span<const Example* const> batch,
                        double lambda, const double* gamma, double eps, ForwardContext& ctx) {
  if (batch.empty()) throw ContractError("loss: empty batch");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("loss: lambda outside [0, 1]");
  std::vector<ad::Tensor> inputs;
  std::vector<std::vector<std::int64_t>> prefixes;
  std::vector<std::int64_t> gold;
  std::vector<std::size_t> enc_index;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = *batch[i];
    inputs.push_back(ex.input);
    std::vector<std::int64_t> p{data::kBosId};
    p.insert(p.end(), ex.target.begin(), ex.target.end());
    prefixes.push_back(std::move(p));
    gold.insert(gold.end(), ex.target.begin(), ex.target.end());
    gold.push_back(data::kEosId);
    enc_index.push_back(i);
  }
  const auto enc = model.encode(inputs, ctx);
  const auto logits = model.decode(prefixes, enc, enc_index, ctx);
  std::vector<std::uint8_t> live(gold.size());
  std::transform(gold.begin(), gold.end(), live.begin(),
                 [](std::int64_t g) { return g != data::kPadId ? 1 : 0; });

  LossTerms t;
  auto mle = mle_loss(logits, gold, live, eps);
  t.mle = mle.item();
  t.tokens = static_cast<std::size_t>(std::count(live.begin(), live.end(), 1));

  const auto lp = model.ctc_log_probs(enc);
  ad::Tensor ctc_sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& seg = enc.segments[i];
    const auto& labels = batch[i]->target;
    if (labels.empty() || !ctc::feasible(seg.valid, labels)) continue;
    auto l = ctc::loss(ad::slice_rows(lp, seg.offset, seg.valid), labels, model.blank_id());
    ctc_sum = ctc_sum.defined() ? ad::add(ctc_sum, l) : l;
    ++t.ctc_items;
  }
  t.total = ad::scale(mle, 1.0 - lambda);
  if (t.ctc_items > 0) {
    auto ctc_mean = ad::scale(ctc_sum, 1.0 / static_cast<double>(t.ctc_items));
    t.ctc = ctc_mean.item();
    t.total = ad::add(t.total, ad::scale(ctc_mean, lambda));
  }

  if (gamma != nullptr) {
    if (model.config().frontend_mode != FrontendMode::kNafm) {
      throw ContractError("nafm_loss: model is not in nafm mode");
    }
    std::vector<ad::Tensor> anchors;
    for (const auto* ex : batch) {
      if (!ex->anchor.defined()) throw ContractError("nafm_loss: " + ex->id + " has no anchor");
      anchors.push_back(ex->anchor);
    }
    auto l2 = frame_l2(enc.nafm_features, anchors);
    t.nafm_l2 = l2.item();
    t.total = ad::add(t.total, ad::scale(l2, *gamma));
  }
  return t;
}

}  // namespace

LossTerms joint_loss(const SpeechTranslator& model, std::span<const Example* const> batch,
                     double lambda, double label_smoothing, ForwardContext& ctx) {
  return forward_terms(model, batch, lambda, nullptr, label_smoothing, ctx);
}

LossTerms nafm_loss(const SpeechTranslator& model, std::span<const Example* const> batch,
                    double lambda, double gamma, double label_smoothing,
                    ForwardContext& ctx) {
  if (!(gamma >= 0.0)) throw ContractError("nafm_loss: gamma must be >= 0");
  return forward_terms(model, batch, lambda, &gamma, label_smoothing, ctx);
}

// ---------------------------------------------------------------------------

double lr_schedule(std::int64_t step, int d_model, int warmup) {
  if (step < 1) throw ContractError("lr_schedule: step must be >= 1");
  if (d_model < 1 || warmup < 1) throw ContractError("lr_schedule: d_model and warmup must be >= 1");
  const auto s = static_cast<double>(step);
  const auto w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

Adam::Adam(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& params, double lr) {
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in " + name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto& [m, v] = state_[name];
    const auto n = p.numel();
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    auto x = p.mutable_data();
    const auto g = p.grad();
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
      v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths,
                                                   std::size_t budget, std::uint64_t seed) {
  if (lengths.empty()) throw ContractError("make_batches: empty dataset");
  if (budget == 0) throw ContractError("make_batches: budget must be >= 1");
  ad::Rng rng(seed);
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  std::size_t cur_max = 0;
  for (auto i : order) {
    const auto len = lengths[i];
    if (len > budget) {
      log::warn("make_batches: item " + std::to_string(i) + " has " + std::to_string(len) +
                " tokens, above the budget of " + std::to_string(budget));
      if (!cur.empty()) batches.push_back(std::move(cur));
      batches.push_back({i});
      cur.clear();
      cur_max = 0;
      continue;
    }
    const auto m = std::max(cur_max, len);
    if (!cur.empty() && (cur.size() + 1) * m > budget) {
      batches.push_back(std::move(cur));
      cur.clear();
      cur_max = len;
    } else {
      cur_max = m;
    }
    cur.push_back(i);
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

ParamStore average_checkpoints(std::span<const CheckpointRecord> records, std::size_t k) {
  if (records.empty()) throw ContractError("average_checkpoints: no records");
  if (k == 0) throw ContractError("average_checkpoints: k must be >= 1");
  if (k > records.size()) {
    log::warn("average_checkpoints: asked for " + std::to_string(k) + " but only " +
              std::to_string(records.size()) + " available; averaging all");
    k = records.size();
  }
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = records[a];
    const auto& rb = records[b];
    if (ra.dev_score != rb.dev_score) return ra.dev_score < rb.dev_score;
    return ra.step < rb.step;
  });
  idx.resize(k);

  auto out = records[idx.front()].params.clone();
  const auto kd = static_cast<double>(k);
  for (auto& [name, t] : out) {
    auto dst = t.mutable_data();
    std::vector<const double*> src;
    for (auto i : idx) {
      const auto& p = records[i].params.at(name);
      if (p.shape() != t.shape()) throw FormatError("average_checkpoints: shape mismatch in " + name);
      src.push_back(p.data().data());
    }
    for (std::size_t e = 0; e < dst.size(); ++e) {
      // Error-free double-double sum, then a corrected division, so that
      // identical inputs come back unchanged and pairs give (p+q)/2 exactly.
      double hi = 0.0, lo = 0.0;
      for (const auto* s : src) {
        const double x = s[e];
        const double sum = hi + x;
        const double bv = sum - hi;
        lo += (hi - (sum - bv)) + (x - bv);
        hi = sum;
      }
      const double q1 = hi / kd;
      const double r = std::fma(-q1, kd, hi) + lo;
      dst[e] = q1 + r / kd;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_metrics_header(std::ostream& os) { os << "step\tlr\tmle\tctc\tnafm_l2\ttotal\n"; }

void write_metrics_line(std::ostream& os, const StepMetrics& m) {
  os << m.step << '\t' << kv::format(m.lr) << '\t' << kv::format(m.mle) << '\t'
     << kv::format(m.ctc) << '\t' << kv::format(m.nafm_l2) << '\t' << kv::format(m.total)
     << '\n';
}

double dev_loss(const SpeechTranslator& model, std::span<const Example> dev) {
  if (dev.empty()) throw ContractError("dev_loss: empty dev set");
  ad::NoGradGuard guard;
  ForwardContext ctx;
  constexpr std::size_t kChunk = 16;
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t b = 0; b < dev.size(); b += kChunk) {
    std::vector<const Example*> batch;
    for (std::size_t i = b; i < std::min(dev.size(), b + kChunk); ++i) batch.push_back(&dev[i]);
    std::vector<ad::Tensor> inputs;
    std::vector<std::vector<std::int64_t>> prefixes;
    std::vector<std::int64_t> gold;
    std::vector<std::size_t> enc_index;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      inputs.push_back(batch[i]->input);
      std::vector<std::int64_t> p{data::kBosId};
      p.insert(p.end(), batch[i]->target.begin(), batch[i]->target.end());
      prefixes.push_back(std::move(p));
      gold.insert(gold.end(), batch[i]->target.begin(), batch[i]->target.end());
      gold.push_back(data::kEosId);
      enc_index.push_back(i);
    }
    const auto enc = model.encode(inputs, ctx);
    const auto logits = model.decode(prefixes, enc, enc_index, ctx);
    const std::vector<std::uint8_t> live(gold.size(), 1);
    total += mle_loss(logits, gold, live, 0.0).item() * static_cast<double>(gold.size());
    tokens += gold.size();
  }
  return total / static_cast<double>(tokens);
}

namespace {

std::string join_ids(std::span<const std::int64_t> ids) {
  std::string s;
  for (auto id : ids) {
    if (!s.empty()) s += ' ';
    s += std::to_string(id);
  }
  return s;
}

}  // namespace

double dev_neg_bleu(const SpeechTranslator& model, std::span<const Example> dev) {
  std::vector<std::string> hyps, refs;
  for (const auto& ex : dev) {
    hyps.push_back(join_ids(decoding::translate(model, ex.input, 0, 0.0).tokens));
    refs.push_back(join_ids(ex.target));
  }
  return -bleu::corpus_bleu(hyps, refs).score;
}

namespace {

double dev_score(const TrainConfig& cfg, const SpeechTranslator& model,
                 std::span<const Example> dev) {
  return cfg.dev_metric == DevMetric::kBleu ? dev_neg_bleu(model, dev) : dev_loss(model, dev);
}

std::filesystem::path ckpt_path(const std::filesystem::path& dir, std::int64_t step) {
  return dir / ("ckpt-" + std::to_string(step) + ".bin");
}

[[noreturn]] void abort_numeric(const TrainOptions& opts, const SpeechTranslator& model,
                                const StepMetrics& m, std::span<const Example* const> batch,
                                const std::string& what) {
  std::ostringstream msg;
  msg << "non-finite training state at step " << m.step << " (" << what << "); lr="
      << m.lr << " mle=" << m.mle << " ctc=" << m.ctc << " nafm_l2=" << m.nafm_l2
      << " total=" << m.total << "; batch:";
  for (const auto* ex : batch) msg << ' ' << ex->id;
  if (!opts.out_dir.empty()) {
    const auto dump = opts.out_dir / "nan-dump.bin";
    try {
      save_checkpoint(dump, model.config(), model.params());
      msg << "; parameters written to " << dump.string();
    } catch (const std::exception& e) {
      msg << "; could not write dump: " << e.what();
    }
  }
  throw NumericError(msg.str());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, SpeechTranslator& model,
                  std::span<const Example> train_set, std::span<const Example> dev_set,
                  const TrainOptions& opts) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (dev_set.empty()) throw ContractError("train: empty dev set");
  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);
  const bool nafm = model.config().frontend_mode == FrontendMode::kNafm;

  std::vector<std::size_t> lengths;
  lengths.reserve(train_set.size());
  for (const auto& ex : train_set) lengths.push_back(ex.target.size() + 1);
  const auto budget = static_cast<std::size_t>(cfg.batch_target_tokens);

  ad::Rng rng(cfg.seed);
  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  TrainResult result;
  std::uint64_t epoch = 0;
  auto batches = make_batches(lengths, budget, cfg.seed + epoch);
  std::size_t pos = 0;
  if (opts.metrics != nullptr) write_metrics_header(*opts.metrics);

  auto evaluate = [&](std::int64_t step) {
    const double score = dev_score(cfg, model, dev_set);
    if (!std::isfinite(score)) {
      StepMetrics m;
      m.step = step;
      abort_numeric(opts, model, m, {}, "dev score");
    }
    if (opts.on_eval) opts.on_eval(step, score);
    result.best.push_back({step, score, model.params().clone()});
    std::sort(result.best.begin(), result.best.end(),
              [](const CheckpointRecord& a, const CheckpointRecord& b) {
                return a.dev_score != b.dev_score ? a.dev_score < b.dev_score : a.step < b.step;
              });
    const bool kept = std::any_of(result.best.begin(), result.best.end(),
                                  [&](const CheckpointRecord& r) { return r.step == step; });
    if (result.best.size() > static_cast<std::size_t>(cfg.keep_best_k)) {
      const auto dropped = result.best.back().step;
      result.best.pop_back();
      if (!opts.out_dir.empty() && dropped != step) {
        std::filesystem::remove(ckpt_path(opts.out_dir, dropped));
      }
      if (dropped == step) return;
    }
    if (kept && !opts.out_dir.empty()) {
      save_checkpoint(ckpt_path(opts.out_dir, step), model.config(), model.params());
    }
  };

  for (std::int64_t step = 1; step <= cfg.max_steps; ++step) {
    if (pos == batches.size()) {
      ++epoch;
      batches = make_batches(lengths, budget, cfg.seed + epoch);
      pos = 0;
    }
    std::vector<const Example*> batch;
    for (auto i : batches[pos]) batch.push_back(&train_set[i]);
    ++pos;

    model.params().zero_grad();
    ForwardContext ctx{&rng, true};
    auto terms = nafm ? nafm_loss(model, batch, cfg.ctc_weight, cfg.nafm_weight,
                                  cfg.label_smoothing, ctx)
                      : joint_loss(model, batch, cfg.ctc_weight, cfg.label_smoothing, ctx);
    StepMetrics m;
    m.step = step;
    m.lr = cfg.lr_factor * lr_schedule(step, model.config().d_model, cfg.warmup_steps);
    m.mle = terms.mle;
    m.ctc = terms.ctc;
    m.nafm_l2 = terms.nafm_l2;
    m.total = terms.total.item();
    if (!std::isfinite(m.total)) abort_numeric(opts, model, m, batch, "loss");
    ad::backward(terms.total);
    try {
      adam.step(model.params(), m.lr);
    } catch (const NumericError& e) {
      abort_numeric(opts, model, m, batch, e.what());
    }
    result.history.push_back(m);
    if (opts.metrics != nullptr) write_metrics_line(*opts.metrics, m);
    result.steps = step;
    if (step % cfg.checkpoint_every == 0 || step == cfg.max_steps) evaluate(step);
  }
  if (result.best.empty()) evaluate(0);
  model.params().zero_grad();

  result.averaged = average_checkpoints(
      result.best, std::min(result.best.size(), static_cast<std::size_t>(cfg.keep_best_k)));
  model.params().assign(result.averaged);
  result.final_dev_score = dev_score(cfg, model, dev_set);
  if (!opts.out_dir.empty()) {
    save_checkpoint(opts.out_dir / "model.bin", model.config(), result.averaged);
  }
  return result;
}

}  // namespace scst::train
