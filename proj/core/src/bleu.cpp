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

#include "scst/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "scst/errors.hpp"

namespace scst::bleu {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++c[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  }
  return c;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

Result corpus_bleu(std::span<const std::string> hyps, std::span<const std::string> refs) {
  if (hyps.size() != refs.size()) {
    throw DataError("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                    std::to_string(refs.size()) + " references");
  }
  std::array<std::size_t, kMaxOrder> matches{}, totals{};
  Result r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = tokenize(hyps[i]);
    const auto ref = tokenize(refs[i]);
    r.hyp_length += h.size();
    r.ref_length += ref.size();
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      const auto hc = count_ngrams(h, n);
      const auto rc = count_ngrams(ref, n);
      for (const auto& [g, c] : hc) {
        auto it = rc.find(g);
        if (it != rc.end()) matches[n - 1] += std::min(c, it->second);
      }
      if (h.size() >= n) totals[n - 1] += h.size() - n + 1;
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < kMaxOrder; ++n) {
    r.precisions[n] = totals[n] == 0 ? 0.0
                                     : static_cast<double>(matches[n]) /
                                           static_cast<double>(totals[n]);
    if (r.precisions[n] == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }
  if (r.hyp_length == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.hyp_length > r.ref_length) {
    r.brevity_penalty = 1.0;
  } else {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_length) /
                                           static_cast<double>(r.hyp_length));
  }
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / kMaxOrder);
  return r;
}

std::string summary(const Result& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "BLEU = %.2f %.1f/%.1f/%.1f/%.1f (BP = %.3f hyp_len = %zu ref_len = %zu)",
                r.score, 100 * r.precisions[0], 100 * r.precisions[1],
                100 * r.precisions[2], 100 * r.precisions[3], r.brevity_penalty,
                r.hyp_length, r.ref_length);
  return buf;
}

}  // namespace scst::bleu
