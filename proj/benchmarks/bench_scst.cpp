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

#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <random>

#include "scst/ctc.hpp"
#include "scst/decoding.hpp"
#include "scst/frontend.hpp"
#include "scst/log.hpp"
#include "scst/model.hpp"
#include "scst/training.hpp"

using namespace scst;

namespace {

frontend::Waveform noise_tone(std::size_t samples) {
  frontend::Waveform w;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 0.01);
  for (std::size_t i = 0; i < samples; ++i) {
    w.samples.push_back(0.5 * std::sin(2 * std::numbers::pi * 700.0 * i / 16000.0) + nd(rng));
  }
  return w;
}

ad::Tensor randn(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(r * c);
  for (auto& x : v) x = nd(rng);
  return ad::Tensor::from({r, c}, std::move(v));
}

}  // namespace

static void BM_Features(benchmark::State& state) {
  const auto w = noise_tone(static_cast<std::size_t>(state.range(0)) * 16);
  for (auto _ : state) benchmark::DoNotOptimize(frontend::extract_features(w).values.data());
  state.SetLabel(std::to_string(state.range(0)) + " ms");
}
BENCHMARK(BM_Features)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

static void BM_CtcLoss(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto t = static_cast<std::size_t>(state.range(0));
  const std::size_t c = 41;
  std::vector<double> lp(t * c);
  std::normal_distribution<double> nd;
  for (std::size_t i = 0; i < t; ++i) {
    double z = 0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(lp[i * c + k] = nd(rng));
    for (std::size_t k = 0; k < c; ++k) lp[i * c + k] -= std::log(z);
  }
  std::vector<std::int64_t> labels(t / 3);
  for (auto& l : labels) l = static_cast<std::int64_t>(rng() % (c - 1));
  std::vector<double> grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ctc::neg_log_likelihood(lp, t, c, labels, c - 1, &grad));
  }
}
BENCHMARK(BM_CtcLoss)->Arg(50)->Arg(300)->Unit(benchmark::kMicrosecond);

static void BM_EncoderForward(benchmark::State& state) {
  std::mt19937_64 rng(3);
  SpeechTranslator m(ModelConfig::desk_preset(12), 1);
  const auto x = randn(static_cast<std::size_t>(state.range(0)), 360, rng);
  for (auto _ : state) {
    ad::NoGradGuard ng;
    ForwardContext ctx;
    benchmark::DoNotOptimize(m.encode({x}, ctx).states.data().data());
  }
}
BENCHMARK(BM_EncoderForward)->Arg(30)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  std::mt19937_64 rng(4);
  auto cfg = ModelConfig::desk_preset(12);
  SpeechTranslator m(cfg, 1);
  std::vector<train::Example> batch(static_cast<std::size_t>(state.range(0)));
  for (auto& e : batch) {
    e.input = randn(20, 360, rng);
    for (int i = 0; i < 8; ++i) e.target.push_back(3 + static_cast<std::int64_t>(rng() % 8));
  }
  std::vector<const train::Example*> bp;
  for (const auto& e : batch) bp.push_back(&e);
  train::Adam adam;
  ad::Rng drop(5);
  std::int64_t step = 0;
  for (auto _ : state) {
    m.params().zero_grad();
    ForwardContext ctx{&drop, true};
    auto loss = train::joint_loss(m, bp, 0.3, 0.1, ctx);
    ad::backward(loss.total);
    adam.step(m.params(), train::lr_schedule(++step, cfg.d_model, 400));
  }
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(24)->Unit(benchmark::kMillisecond);

static void BM_BeamSearch(benchmark::State& state) {
  log::set_sink([](log::Level, const std::string&) {});
  std::mt19937_64 rng(6);
  SpeechTranslator m(ModelConfig::desk_preset(12), 1);
  const auto x = randn(12, 360, rng);
  const auto beam = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(decoding::translate(m, x, beam, 0.6).logp);
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
