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

#include "scst/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "scst/data.hpp"
#include "scst/log.hpp"

namespace scst::decoding {

namespace {

struct Candidate {
  std::size_t parent;
  std::int64_t token;
  double logp;
};

bool proposable(std::int64_t id) { return id != data::kPadId && id != data::kBosId; }

std::size_t gen_length(const Hypothesis& h) { return h.tokens.size() - 1; }

// Higher score first, then shorter, then lower ids.
bool better(const Hypothesis& a, double sa, const Hypothesis& b, double sb) {
  if (sa != sb) return sa > sb;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

DecodeResult to_result(const Hypothesis& h, double alpha) {
  DecodeResult r;
  r.logp = h.logp;
  r.score = length_penalty_score(h.logp, std::max<std::size_t>(1, gen_length(h)), alpha);
  r.finished = h.finished;
  for (auto id : h.tokens) {
    if (id >= data::kNumReserved) r.tokens.push_back(id);
  }
  return r;
}

const Hypothesis* pick(const std::vector<Hypothesis>& pool, double alpha) {
  const Hypothesis* best = nullptr;
  double best_score = 0.0;
  for (const auto& h : pool) {
    const double s = length_penalty_score(h.logp, std::max<std::size_t>(1, gen_length(h)), alpha);
    if (best == nullptr || better(h, s, *best, best_score)) {
      best = &h;
      best_score = s;
    }
  }
  return best;
}

}  // namespace

TranslatorScorer::TranslatorScorer(const SpeechTranslator& model, const EncoderOutput& enc,
                                   std::size_t index)
    : model_(model), enc_(enc), index_(index) {
  if (index >= enc.size()) throw ContractError("TranslatorScorer: index out of range");
}

std::size_t TranslatorScorer::vocab_size() const {
  return static_cast<std::size_t>(model_.config().vocab_size);
}

std::vector<std::vector<double>> TranslatorScorer::next_log_probs(
    const std::vector<std::vector<std::int64_t>>& prefixes) {
  ad::NoGradGuard guard;
  ForwardContext ctx;
  const std::vector<std::size_t> idx(prefixes.size(), index_);
  const auto logits = model_.decode(prefixes, enc_, idx, ctx);
  const auto v = logits.cols();
  const auto data = logits.data();
  std::vector<std::vector<double>> out;
  out.reserve(prefixes.size());
  std::size_t row = 0;
  for (const auto& p : prefixes) {
    row += p.size();
    const double* x = data.data() + (row - 1) * v;
    const double mx = *std::max_element(x, x + v);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    std::vector<double> lp(v);
    for (std::size_t c = 0; c < v; ++c) lp[c] = x[c] - lse;
    out.push_back(std::move(lp));
  }
  return out;
}

double length_penalty_score(double logp, std::size_t length, double alpha) {
  if (length < 1) throw ContractError("length_penalty_score: length must be >= 1");
  return logp / std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

std::size_t default_max_len(std::size_t encoder_frames) { return 2 * encoder_frames + 10; }

namespace {

Hypothesis greedy_path(StepScorer& scorer, std::size_t max_len) {
  Hypothesis h{{data::kBosId}, 0.0, false};
  while (gen_length(h) < max_len) {
    const auto lp = scorer.next_log_probs({h.tokens}).front();
    std::int64_t best = -1;
    for (std::size_t c = 0; c < lp.size(); ++c) {
      const auto id = static_cast<std::int64_t>(c);
      if (!proposable(id)) continue;
      if (best < 0 || lp[c] > lp[static_cast<std::size_t>(best)]) best = id;
    }
    h.tokens.push_back(best);
    h.logp += lp[static_cast<std::size_t>(best)];
    if (best == data::kEosId) {
      h.finished = true;
      break;
    }
  }
  return h;
}

}  // namespace

DecodeResult greedy_decode(StepScorer& scorer, std::size_t max_len) {
  if (max_len < 1) throw ContractError("greedy_decode: max_len must be >= 1");
  const auto h = greedy_path(scorer, max_len);
  if (!h.finished) log::warn("greedy_decode: no EOS within " + std::to_string(max_len) + " tokens");
  return to_result(h, 0.0);
}

DecodeResult beam_search(StepScorer& scorer, const BeamOptions& opts) {
  if (opts.beam < 1) throw ContractError("beam_search: beam must be >= 1");
  if (opts.max_len < 1) throw ContractError("beam_search: max_len must be >= 1");
  const double alpha = opts.alpha;
  std::vector<Hypothesis> live{{{data::kBosId}, 0.0, false}};
  std::vector<Hypothesis> finished;

  for (std::size_t len = 1; len <= opts.max_len && !live.empty(); ++len) {
    std::vector<std::vector<std::int64_t>> prefixes;
    prefixes.reserve(live.size());
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const auto lps = scorer.next_log_probs(prefixes);

    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      std::vector<Candidate> own;
      for (std::size_t c = 0; c < lps[i].size(); ++c) {
        const auto id = static_cast<std::int64_t>(c);
        // Zero-probability continuations are not hypotheses.
        if (proposable(id) && lps[i][c] > -std::numeric_limits<double>::infinity()) {
          own.push_back({i, id, live[i].logp + lps[i][c]});
        }
      }
      const auto keep = std::min(opts.beam, own.size());
      std::partial_sort(own.begin(), own.begin() + static_cast<std::ptrdiff_t>(keep), own.end(),
                        [](const Candidate& a, const Candidate& b) {
                          return a.logp != b.logp ? a.logp > b.logp : a.token < b.token;
                        });
      cands.insert(cands.end(), own.begin(), own.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      const auto& ta = live[a.parent].tokens;
      const auto& tb = live[b.parent].tokens;
      if (ta != tb) return ta < tb;
      return a.token < b.token;
    });

    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      if (c.token != data::kEosId && next.size() >= opts.beam) continue;
      Hypothesis h{live[c.parent].tokens, c.logp, c.token == data::kEosId};
      h.tokens.push_back(c.token);
      (h.finished ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);

    // Log-probs only fall, so a live hypothesis can at best reach
    // logp / lp(max_len). Stop once the finished pool beats every such bound.
    if (!finished.empty() && !live.empty() && alpha >= 0.0) {
      const auto* best = pick(finished, alpha);
      const double best_score =
          length_penalty_score(best->logp, std::max<std::size_t>(1, gen_length(*best)), alpha);
      double bound = -std::numeric_limits<double>::infinity();
      for (const auto& h : live) {
        bound = std::max(bound, length_penalty_score(h.logp, opts.max_len, alpha));
      }
      if (best_score >= bound) break;
    }
  }

  if (opts.beam > 1) {
    // The greedy path can fall off the beam; keeping it as a candidate means
    // the result never scores below greedy decoding.
    auto h = greedy_path(scorer, opts.max_len);
    if (h.finished) {
      if (std::none_of(finished.begin(), finished.end(),
                       [&](const Hypothesis& f) { return f.tokens == h.tokens; })) {
        finished.push_back(std::move(h));
      }
    }
  }

  if (!finished.empty()) return to_result(*pick(finished, alpha), alpha);
  log::warn("beam_search: no hypothesis finished within " + std::to_string(opts.max_len) +
            " tokens; returning the best unfinished one");
  return to_result(*pick(live, alpha), alpha);
}

DecodeResult translate(const SpeechTranslator& model, const ad::Tensor& input,
                       std::size_t beam, double alpha) {
  ad::NoGradGuard guard;
  ForwardContext ctx;
  const auto enc = model.encode({input}, ctx);
  TranslatorScorer scorer(model, enc, 0);
  const auto max_len = default_max_len(enc.segments.front().length);
  if (beam == 0) return greedy_decode(scorer, max_len);
  return beam_search(scorer, {beam, alpha, max_len});
}

}  // namespace scst::decoding
