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

// Corpus BLEU over whitespace tokens: clipped 1..4-gram precisions, geometric
// mean, brevity penalty. Not a sacrebleu replacement.

#ifndef SCST_BLEU_HPP
#define SCST_BLEU_HPP

#include <array>
#include <span>
#include <string>
#include <vector>

namespace scst::bleu {

inline constexpr int kMaxOrder = 4;

struct Result {
  double score = 0.0;  // 0..100
  std::array<double, kMaxOrder> precisions{};
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

std::vector<std::string> tokenize(const std::string& line);

/// Throws DataError when the line counts differ.
Result corpus_bleu(std::span<const std::string> hyps, std::span<const std::string> refs);

/// "BLEU = 37.21 70.0/45.1/30.2/20.0 (BP = 1.000 hyp_len = 10 ref_len = 9)"
std::string summary(const Result& r);

}  // namespace scst::bleu

#endif  // SCST_BLEU_HPP
