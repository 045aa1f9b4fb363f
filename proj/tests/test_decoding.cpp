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

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "scst/data.hpp"
#include "scst/decoding.hpp"
#include "scst/log.hpp"

using namespace scst;
using namespace scst::decoding;

namespace {

struct Quiet {
  log::Sink prev;
  Quiet() { prev = log::set_sink([](log::Level, const std::string&) {}); }
  ~Quiet() { log::set_sink(prev); }
};

// Follows a fixed sequence with probability 1, then EOS.
class PeakedScorer : public StepScorer {
 public:
  PeakedScorer(std::size_t v, std::vector<std::int64_t> seq) : v_(v), seq_(std::move(seq)) {}
  std::size_t vocab_size() const override { return v_; }
  std::vector<std::vector<double>> next_log_probs(
      const std::vector<std::vector<std::int64_t>>& prefixes) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) {
      std::vector<double> row(v_, -std::numeric_limits<double>::infinity());
      const std::size_t pos = p.size() - 1;
      bool on_path = true;
      for (std::size_t i = 0; i < pos && on_path; ++i) on_path = i < seq_.size() && p[i + 1] == seq_[i];
      if (!on_path) {
        row.assign(v_, -std::log(static_cast<double>(v_ - 1)));
        row[static_cast<std::size_t>(data::kEosId)] = -std::numeric_limits<double>::infinity();
      } else {
        row[static_cast<std::size_t>(pos < seq_.size() ? seq_[pos] : data::kEosId)] = 0.0;
      }
      out.push_back(std::move(row));
    }
    return out;
  }

 private:
  std::size_t v_;
  std::vector<std::int64_t> seq_;
};

ModelConfig tiny(int vocab) {
  ModelConfig c;
  c.n_enc = 1;
  c.n_dec = 1;
  c.d_model = 8;
  c.d_head = 4;
  c.heads = 2;
  c.d_ff = 16;
  c.vocab_size = vocab;
  c.pdp_r = 8;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("length penalty trade-off") {
  const double longer = length_penalty_score(-1.2, 13, 0.6);
  const double shorter = length_penalty_score(-1.0, 5, 0.6);
  CHECK(std::round(longer * 1e4) / 1e4 == doctest::Approx(-0.6207).epsilon(1e-12));
  CHECK(std::round(shorter * 1e4) / 1e4 == doctest::Approx(-0.7360).epsilon(1e-12));
  CHECK(longer > shorter);
  CHECK(length_penalty_score(-1.0, 1, 0.6) == -1.0);
  CHECK(length_penalty_score(-2.5, 40, 0.0) == -2.5);
  CHECK(default_max_len(7) == 24);
}

TEST_CASE("beam 1 reproduces greedy on random table models") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    oracle::TableScorer m(4 + s % 5, s, 1.0 + 0.05 * static_cast<double>(s % 20));
    const std::size_t max_len = 3 + s % 8;
    const auto g = greedy_decode(m, max_len);
    const auto b = beam_search(m, {1, 0.6, max_len});
    CHECK(g.tokens == b.tokens);
    CHECK(g.logp == b.logp);
    CHECK(g.finished == b.finished);
  }
}

TEST_CASE("beam 1 reproduces greedy on random tiny translators") {
  Quiet q;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd;
  for (std::uint64_t s = 0; s < 100; ++s) {
    SpeechTranslator m(tiny(5 + static_cast<int>(s % 4)), s + 1);
    const std::size_t frames = 2 + s % 5;
    std::vector<double> x(frames * 360);
    for (auto& v : x) v = nd(rng);
    const auto in = ad::Tensor::from({frames, 360}, std::move(x));
    const auto g = translate(m, in, 0, 0.6);
    const auto b = translate(m, in, 1, 0.6);
    CHECK(g.tokens == b.tokens);
    CHECK(g.logp == b.logp);
  }
}

TEST_CASE("beam 8 finds the exhaustive optimum on 3-token models") {
  int agree = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    oracle::TableScorer m(6, 1000 + s, 0.5 + 0.03 * static_cast<double>(s));
    const std::size_t max_len = 2 + s % 5;
    const auto best = oracle::exhaustive_search(m, max_len, 0.6);
    const auto b = beam_search(m, {8, 0.6, max_len});
    if (b.tokens == best.tokens && std::abs(b.score - best.score) < 1e-12) ++agree;
  }
  CHECK(agree >= 99);
}

TEST_CASE("peaked model yields its path for every beam width") {
  const std::vector<std::int64_t> path = {5, 3, 3, 7, 4};
  for (std::size_t beam : {1, 2, 4, 8}) {
    PeakedScorer m(9, path);
    const auto r = beam_search(m, {beam, 0.6, 12});
    CHECK(r.tokens == path);
    CHECK(r.logp == 0.0);
    CHECK(r.finished);
  }
  PeakedScorer empty(9, {});
  const auto r = beam_search(empty, {8, 0.6, 12});
  CHECK(r.tokens.empty());
  CHECK(r.finished);
  CHECK(greedy_decode(empty, 12).tokens.empty());
}

TEST_CASE("unfinished decodes return the best live hypothesis") {
  Quiet q;
  PeakedScorer m(9, {3, 4, 5, 6, 7, 8, 3, 4});
  const auto g = greedy_decode(m, 4);
  CHECK_FALSE(g.finished);
  CHECK(g.tokens == std::vector<std::int64_t>{3, 4, 5, 6});
  const auto b = beam_search(m, {4, 0.6, 4});
  CHECK_FALSE(b.finished);
  CHECK(b.tokens == std::vector<std::int64_t>{3, 4, 5, 6});
  CHECK_THROWS(beam_search(m, {0, 0.6, 4}));
  CHECK_THROWS(beam_search(m, {4, 0.6, 0}));
}

TEST_CASE("reserved ids never appear in output") {
  Quiet q;
  for (std::uint64_t s = 0; s < 50; ++s) {
    oracle::TableScorer m(7, 500 + s, 0.3);
    for (std::size_t beam : {1, 3, 8}) {
      const auto r = beam_search(m, {beam, 0.6, 8});
      for (auto t : r.tokens) {
        CHECK(t != data::kPadId);
        CHECK(t != data::kBosId);
        CHECK(t != data::kEosId);
      }
    }
  }
}

TEST_CASE("raw beam logp at alpha 0 is at least the greedy logp") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    oracle::TableScorer m(5 + s % 6, 2000 + s, 2.0);
    const std::size_t max_len = 4 + s % 6;
    const auto g = greedy_decode(m, max_len);
    for (std::size_t beam : {2, 4, 8}) {
      const auto b = beam_search(m, {beam, 0.0, max_len});
      if (g.finished) CHECK(b.logp >= g.logp);
    }
  }
}
