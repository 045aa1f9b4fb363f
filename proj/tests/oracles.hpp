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

// Independent reference computations used by the unit and acceptance tests.
// Deliberately naive: enumeration and finite differences only.

#ifndef SCST_TESTS_ORACLES_HPP
#define SCST_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "scst/autodiff.hpp"
#include "scst/data.hpp"
#include "scst/decoding.hpp"

namespace oracle {

/// -log Σ over every length-T path of exp(Σ log_probs) whose collapse
/// (merge repeats, drop blanks) equals `labels`.
inline double ctc_brute_force(const std::vector<double>& log_probs, std::size_t T,
                              std::size_t C, const std::vector<std::int64_t>& labels,
                              std::int64_t blank) {
  std::vector<std::size_t> path(T, 0);
  double total = 0.0;
  while (true) {
    std::vector<std::int64_t> collapsed;
    std::int64_t prev = -1;
    double lp = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const auto c = static_cast<std::int64_t>(path[t]);
      lp += log_probs[t * C + path[t]];
      if (c != prev && c != blank) collapsed.push_back(c);
      prev = c;
    }
    if (collapsed == labels) total += std::exp(lp);
    std::size_t t = 0;
    while (t < T && ++path[t] == C) path[t++] = 0;
    if (t == T) break;
  }
  return -std::log(total);
}

/// Central differences of a scalar function of a flat vector.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  }
  return worst;
}

/// Compares reverse-mode gradients with central differences on `samples`
/// randomly chosen coordinates across `leaves`; returns the worst
/// |analytic - numeric| / max(1, |analytic|).
inline double sampled_grad_check(const std::function<scst::ad::Tensor()>& f,
                                 std::vector<scst::ad::Tensor> leaves, std::size_t samples,
                                 std::mt19937_64& rng, double h = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  scst::ad::backward(f());
  std::size_t total = 0;
  for (const auto& l : leaves) total += l.numel();
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t flat = rng() % total, li = 0;
    while (flat >= leaves[li].numel()) flat -= leaves[li++].numel();
    auto& leaf = leaves[li];
    const double analytic = leaf.has_grad() ? leaf.grad()[flat] : 0.0;
    auto x = leaf.mutable_data();
    const double x0 = x[flat];
    double up, down;
    {
      scst::ad::NoGradGuard ng;
      x[flat] = x0 + h;
      up = f().item();
      x[flat] = x0 - h;
      down = f().item();
      x[flat] = x0;
    }
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  return worst;
}

inline std::vector<double> random_log_softmax(std::size_t T, std::size_t C, std::mt19937_64& rng,
                                              double spread = 2.0) {
  std::normal_distribution<double> nd(0.0, spread);
  std::vector<double> out(T * C);
  for (std::size_t t = 0; t < T; ++t) {
    double mx = -1e300;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, out[t * C + c] = nd(rng));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(out[t * C + c] - mx);
    for (std::size_t c = 0; c < C; ++c) out[t * C + c] -= mx + std::log(z);
  }
  return out;
}

/// A toy autoregressive model: the next-token distribution is a fixed
/// random function of the previous token (a transition table).
class TableScorer : public scst::decoding::StepScorer {
 public:
  TableScorer(std::size_t vocab, std::uint64_t seed, double spread = 1.5) : v_(vocab) {
    std::mt19937_64 rng(seed);
    table_ = random_log_softmax(vocab, vocab, rng, spread);
  }
  std::size_t vocab_size() const override { return v_; }
  std::vector<std::vector<double>> next_log_probs(
      const std::vector<std::vector<std::int64_t>>& prefixes) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) {
      const auto last = static_cast<std::size_t>(p.back());
      out.emplace_back(table_.begin() + static_cast<std::ptrdiff_t>(last * v_),
                       table_.begin() + static_cast<std::ptrdiff_t>((last + 1) * v_));
    }
    return out;
  }
  double logp(std::size_t from, std::size_t to) const { return table_[from * v_ + to]; }

 private:
  std::size_t v_;
  std::vector<double> table_;
};

struct Best {
  std::vector<std::int64_t> tokens;  // text tokens only
  double logp = -std::numeric_limits<double>::infinity();
  double score = -std::numeric_limits<double>::infinity();
};

/// Enumerates every EOS-terminated sequence of at most `max_len` generated
/// tokens (pad/bos excluded) and returns the one with the highest
/// logp / ((5+len)/6)^alpha; ties: shorter, then lexicographically lower.
inline Best exhaustive_search(const TableScorer& m, std::size_t max_len, double alpha) {
  Best best;
  const auto v = m.vocab_size();
  std::vector<std::int64_t> seq;
  std::function<void(std::int64_t, double)> rec = [&](std::int64_t last, double lp) {
    for (std::size_t tok = 0; tok < v; ++tok) {
      const auto id = static_cast<std::int64_t>(tok);
      if (id == scst::data::kPadId || id == scst::data::kBosId) continue;
      const double l = lp + m.logp(static_cast<std::size_t>(last), tok);
      if (id == scst::data::kEosId) {
        const auto len = seq.size() + 1;
        const double s = l / std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
        const bool better =
            s > best.score ||
            (s == best.score && (seq.size() < best.tokens.size() ||
                                 (seq.size() == best.tokens.size() && seq < best.tokens)));
        if (better) best = {seq, l, s};
      } else if (seq.size() + 1 < max_len) {
        seq.push_back(id);
        rec(id, l);
        seq.pop_back();
      }
    }
  };
  rec(scst::data::kBosId, 0.0);
  return best;
}

}  // namespace oracle

#endif  // SCST_TESTS_ORACLES_HPP
