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

#include "scst/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace scst::ctc {

std::size_t min_frames(std::span<const std::int64_t> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

bool feasible(std::size_t frames, std::span<const std::int64_t> labels) {
  return frames > 0 && frames >= min_frames(labels);
}

double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return std::max(a, kLogZero);
  return a + std::log1p(std::exp(b - a));
}

double neg_log_likelihood(std::span<const double> log_probs, std::size_t frames,
                          std::size_t classes, std::span<const std::int64_t> labels,
                          std::int64_t blank, std::vector<double>* grad) {
  if (labels.empty()) throw ad::ContractError("ctc: empty label sequence");
  if (!feasible(frames, labels)) {
    throw ad::ContractError("ctc: " + std::to_string(labels.size()) +
                            " labels cannot align to " + std::to_string(frames) +
                            " frames");
  }
  if (log_probs.size() != frames * classes) {
    throw ad::DimensionError("ctc: log_probs size does not match T x C");
  }
  // Blank-interleaved target: ∅ l1 ∅ l2 ... lU ∅.
  const std::size_t s_len = 2 * labels.size() + 1;
  std::vector<std::int64_t> ext(s_len, blank);
  for (std::size_t u = 0; u < labels.size(); ++u) {
    if (labels[u] < 0 || static_cast<std::size_t>(labels[u]) >= classes ||
        labels[u] == blank) {
      throw ad::ContractError("ctc: label id " + std::to_string(labels[u]) +
                              " invalid for " + std::to_string(classes) + " classes");
    }
    ext[2 * u + 1] = labels[u];
  }
  auto lp = [&](std::size_t t, std::size_t s) {
    return std::max(log_probs[t * classes + static_cast<std::size_t>(ext[s])], kLogZero);
  };
  auto can_skip = [&](std::size_t s) {  // transition s-2 -> s allowed
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  std::vector<double> alpha(frames * s_len, kLogZero);
  alpha[0] = lp(0, 0);
  if (s_len > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = alpha.data() + (t - 1) * s_len;
    double* cur = alpha.data() + t * s_len;
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (can_skip(s)) acc = log_add(acc, prev[s - 2]);
      cur[s] = std::max(acc + lp(t, s), kLogZero);
    }
  }
  const double* last = alpha.data() + (frames - 1) * s_len;
  const double log_p = log_add(last[s_len - 1], last[s_len - 2]);

  if (grad != nullptr) {
    // beta[t][s]: log prob of emitting frames t+1.. from state s at frame t.
    std::vector<double> beta(frames * s_len, kLogZero);
    double* bl = beta.data() + (frames - 1) * s_len;
    bl[s_len - 1] = 0.0;
    bl[s_len - 2] = 0.0;
    for (std::size_t t = frames - 1; t-- > 0;) {
      const double* next = beta.data() + (t + 1) * s_len;
      double* cur = beta.data() + t * s_len;
      for (std::size_t s = 0; s < s_len; ++s) {
        double acc = next[s] + lp(t + 1, s);
        if (s + 1 < s_len) acc = log_add(acc, next[s + 1] + lp(t + 1, s + 1));
        if (s + 2 < s_len && can_skip(s + 2)) {
          acc = log_add(acc, next[s + 2] + lp(t + 1, s + 2));
        }
        cur[s] = std::max(acc, kLogZero);
      }
    }
    grad->assign(frames * classes, 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t s = 0; s < s_len; ++s) {
        const double occ = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
        if (occ > -700.0) {
          (*grad)[t * classes + static_cast<std::size_t>(ext[s])] -= std::exp(occ);
        }
      }
    }
  }
  return -log_p;
}

ad::Tensor loss(const ad::Tensor& log_probs, std::span<const std::int64_t> labels,
                std::int64_t blank) {
  if (log_probs.dim() != 2) {
    throw ad::DimensionError("ctc: log_probs must be T x C");
  }
  const auto frames = log_probs.shape()[0], classes = log_probs.shape()[1];
  const bool need_grad = ad::grad_enabled() && log_probs.requires_grad();
  std::vector<double> g;
  const double nll = neg_log_likelihood(log_probs.data(), frames, classes, labels,
                                        blank, need_grad ? &g : nullptr);
  return ad::make_result({1}, {nll}, {log_probs}, [g = std::move(g)](ad::Node& o) {
    auto& dst = o.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += o.grad[0] * g[i];
  });
}

std::vector<std::int64_t> greedy_decode(const ad::Tensor& log_probs, std::int64_t blank) {
  const auto frames = log_probs.rows(), classes = log_probs.cols();
  std::vector<std::int64_t> out;
  std::int64_t prev = -1;
  for (std::size_t t = 0; t < frames; ++t) {
    const double* row = log_probs.data().data() + t * classes;
    const auto best = static_cast<std::int64_t>(std::max_element(row, row + classes) - row);
    if (best != blank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace scst::ctc
