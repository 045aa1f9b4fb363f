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

#ifndef SCST_DECODING_HPP
#define SCST_DECODING_HPP

#include <cstdint>
#include <vector>

#include "scst/model.hpp"

namespace scst::decoding {

/// Next-token distributions for a set of prefixes (each starting with BOS).
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  /// Row i: log-probabilities over the vocabulary after prefixes[i].
  virtual std::vector<std::vector<double>> next_log_probs(
      const std::vector<std::vector<std::int64_t>>& prefixes) = 0;
};

/// Scores prefixes with the decoder, attending to utterance `index` of `enc`.
class TranslatorScorer : public StepScorer {
 public:
  TranslatorScorer(const SpeechTranslator& model, const EncoderOutput& enc,
                   std::size_t index);
  std::size_t vocab_size() const override;
  std::vector<std::vector<double>> next_log_probs(
      const std::vector<std::vector<std::int64_t>>& prefixes) override;

 private:
  const SpeechTranslator& model_;
  const EncoderOutput& enc_;
  std::size_t index_;
};

struct Hypothesis {
  std::vector<std::int64_t> tokens;  // starts with BOS
  double logp = 0.0;
  bool finished = false;
};

/// logp / ((5 + length) / 6)^alpha.
double length_penalty_score(double logp, std::size_t length, double alpha);

/// 2 · frames + 10.
std::size_t default_max_len(std::size_t encoder_frames);

struct DecodeResult {
  std::vector<std::int64_t> tokens;  // BOS/EOS stripped
  double logp = 0.0;
  double score = 0.0;
  bool finished = false;
};

struct BeamOptions {
  std::size_t beam = 8;
  double alpha = 0.6;
  std::size_t max_len = 0;  // generated tokens, EOS included
};

/// Beam search. Pad and BOS are never proposed. Every EOS candidate enters
/// the finished pool; the best `beam` other candidates stay live. The result
/// is the finished hypothesis with the highest length-penalized score (ties:
/// shorter, then lower ids), or the best live one with a warning when
/// nothing finished within `max_len`.
DecodeResult beam_search(StepScorer& scorer, const BeamOptions& opts);

/// Per-step argmax (lowest id on ties) until EOS or `max_len` tokens.
DecodeResult greedy_decode(StepScorer& scorer, std::size_t max_len);

/// Encodes one utterance and decodes it; `beam == 0` selects greedy.
DecodeResult translate(const SpeechTranslator& model, const ad::Tensor& input,
                       std::size_t beam, double alpha);

}  // namespace scst::decoding

#endif  // SCST_DECODING_HPP
