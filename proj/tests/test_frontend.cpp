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
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "scst/frontend.hpp"

using namespace scst;
using namespace scst::frontend;

namespace {

Waveform tone(double hz, std::size_t n, double amp = 0.5) {
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / kSampleRate);
  }
  return w;
}

FeatureSequence ramp(std::size_t t_len) {
  FeatureSequence f;
  f.stage = Stage::kFbank40;
  f.dim = kNumMels;
  f.num_frames = t_len;
  f.values.resize(t_len * kNumMels);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t k = 0; k < kNumMels; ++k) {
      f.values[t * kNumMels + k] = static_cast<double>(t) + 0.5 * static_cast<double>(k);
    }
  }
  return f;
}

}  // namespace

TEST_CASE("mel scale reference points") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)).epsilon(1e-14));
  CHECK(std::abs(hz_to_mel(700.0) - 781.177) < 0.01);
  for (double hz : {0.0, 123.0, 1000.0, 7999.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz));
}

TEST_CASE("frame counts follow the 25 ms / 10 ms grid") {
  CHECK(num_frames(399) == 0);
  CHECK(num_frames(400) == 1);
  CHECK(num_frames(559) == 1);
  CHECK(num_frames(560) == 2);
  CHECK(num_frames(16000) == 98);
  CHECK(num_frames(14400) == 88);
}

TEST_CASE("one second of audio: 98 frames, 40 -> 120 -> 360 dims") {
  const auto w = tone(440.0, 16000);
  const auto fb = log_mel_fbank(frame_signal(w));
  CHECK(fb.num_frames == 98);
  CHECK(fb.dim == 40);
  const auto d = add_deltas(fb);
  CHECK(d.dim == 120);
  CHECK(d.num_frames == 98);
  const auto s = stack_frames(d);
  CHECK(s.dim == 360);
  CHECK(s.num_frames == 33);
  const auto full = extract_features(w);
  CHECK(full.dim == kStackedDim);
  CHECK(full.num_frames == 33);
}

TEST_CASE("power spectrum agrees with a direct DFT") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 0.2);
  Waveform w;
  w.samples.resize(800);
  for (auto& x : w.samples) x = nd(rng);
  const auto frames = frame_signal(w);
  const auto fb = log_mel_fbank(frames);
  const auto& weights = mel_filter_weights();
  const std::size_t bins = kFftSize / 2 + 1;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    std::vector<double> power(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (std::size_t n = 0; n < kWindowSamples; ++n) {
        const double ang = -2 * std::numbers::pi * static_cast<double>(k * n) / kFftSize;
        re += frames[t][n] * std::cos(ang);
        im += frames[t][n] * std::sin(ang);
      }
      power[k] = re * re + im * im;
    }
    for (std::size_t m = 0; m < kNumMels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += weights[m * bins + k] * power[k];
      CHECK(fb.at(t, m) == doctest::Approx(std::log(e)).epsilon(1e-9));
    }
  }
}

TEST_CASE("filter bank shape") {
  const auto& w = mel_filter_weights();
  const std::size_t bins = kFftSize / 2 + 1;
  REQUIRE(w.size() == kNumMels * bins);
  std::size_t prev_peak = 0;
  for (std::size_t m = 0; m < kNumMels; ++m) {
    double mx = 0.0;
    std::size_t peak = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double v = w[m * bins + k];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      if (v > mx) {
        mx = v;
        peak = k;
      }
    }
    CHECK(mx > 0.0);
    if (m > 0) CHECK(peak >= prev_peak);
    prev_peak = peak;
  }
}

TEST_CASE("deltas of a ramp are 1 inside, delta-deltas 0") {
  const auto d = add_deltas(ramp(12));
  for (std::size_t t = 2; t + 2 < 12; ++t) {
    for (std::size_t k = 0; k < kNumMels; ++k) {
      CHECK(std::abs(d.at(t, kNumMels + k) - 1.0) < 1e-12);
    }
  }
  for (std::size_t t = 4; t + 4 < 12; ++t) CHECK(std::abs(d.at(t, 2 * kNumMels)) < 1e-12);
  // Edge replication: frame 0 sees c(1)-c(0) + 2(c(2)-c(0)) over 10.
  CHECK(d.at(0, kNumMels) == doctest::Approx((1.0 + 2 * 2.0) / 10.0));
}

TEST_CASE("CMVN gives zero-mean unit-variance columns") {
  const auto f = speech_features(tone(1000.0, 9000));
  for (std::size_t k = 0; k < f.dim; ++k) {
    double mu = 0.0, var = 0.0;
    for (std::size_t t = 0; t < f.num_frames; ++t) mu += f.at(t, k);
    mu /= static_cast<double>(f.num_frames);
    for (std::size_t t = 0; t < f.num_frames; ++t) var += (f.at(t, k) - mu) * (f.at(t, k) - mu);
    var /= static_cast<double>(f.num_frames);
    CHECK(std::abs(mu) < 1e-5);
    // Constant columns stay at zero rather than blowing up.
    CHECK((var == doctest::Approx(1.0).epsilon(1e-4) || var < 1e-6));
  }
}

TEST_CASE("stacking concatenates consecutive frames and zero-pads the tail") {
  auto f = add_deltas(ramp(7));
  const auto s = stack_frames(f);
  CHECK(s.num_frames == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t k = 0; k < kSpeechDim; ++k) {
      CHECK(s.at(1, j * kSpeechDim + k) == f.at(3 + j, k));
    }
  }
  for (std::size_t c = kSpeechDim; c < kStackedDim; ++c) CHECK(s.at(2, c) == 0.0);
  CHECK_THROWS_AS(stack_frames(ramp(3)), std::logic_error);
  CHECK_THROWS_AS(add_deltas(f), std::logic_error);
}

TEST_CASE("utterances longer than 3000 frames are truncated") {
  const auto f = speech_features(tone(500.0, 160 * 3100));
  CHECK(f.num_frames == kMaxFrames);
  CHECK(raw_frames(tone(500.0, 160 * 3100)).size() == kMaxFrames * kWindowSamples);
}

TEST_CASE("raw frames are untouched windows") {
  const auto w = tone(300.0, 1000);
  const auto r = raw_frames(w);
  REQUIRE(r.size() == num_frames(1000) * kWindowSamples);
  CHECK(r[kWindowSamples + 5] == w.samples[kStepSamples + 5]);
}

TEST_CASE("wav round trip and format rejection") {
  auto w = tone(440.0, 1234);
  std::stringstream ss;
  write_wav(ss, w);
  const auto back = read_wav(ss);
  REQUIRE(back.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    CHECK(std::abs(back.samples[i] - w.samples[i]) <= 1.0 / 32767);
  }
  w.sample_rate = 8000;
  CHECK_THROWS_AS(frame_signal(w), FormatError);
  std::stringstream bad;
  write_wav(bad, w);
  CHECK_THROWS_AS(read_wav(bad), FormatError);
  std::stringstream junk("RIFFxxxxWAVEjunk");
  CHECK_THROWS_AS(read_wav(junk), FormatError);
}

TEST_CASE("feature dump round trip") {
  const auto f = speech_features(tone(700.0, 4000));
  std::stringstream ss;
  write_feature_dump(ss, "utt1", f, true);
  write_feature_dump(ss, "utt2", f, false);
  const auto recs = read_feature_dump(ss);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].id == "utt1");
  CHECK(recs[1].num_frames == f.num_frames);
  CHECK(recs[1].dim == 120);
  CHECK(recs[1].values == f.values);
}
