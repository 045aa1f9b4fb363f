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

// Acoustic front end: 16 kHz PCM -> 40-d log mel filterbanks -> +deltas
// (120-d) -> per-utterance CMVN -> three-frame stacking (360-d).

#ifndef SCST_FRONTEND_HPP
#define SCST_FRONTEND_HPP

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "scst/errors.hpp"

namespace scst::frontend {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kWindowSamples = 400;  // 25 ms
inline constexpr std::size_t kStepSamples = 160;    // 10 ms
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kNumMels = 40;
inline constexpr std::size_t kSpeechDim = 3 * kNumMels;   // 120
inline constexpr std::size_t kStackFactor = 3;
inline constexpr std::size_t kStackedDim = kStackFactor * kSpeechDim;  // 360
inline constexpr std::size_t kMaxFrames = 3000;
inline constexpr double kPreemphasis = 0.97;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kCmvnEps = 1e-8;
inline constexpr int kDeltaWindow = 2;

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = kSampleRate;
};

enum class Stage { kFbank40, kDeltas120, kStacked360 };

const char* stage_name(Stage s);
std::size_t stage_dim(Stage s);

/// Row-major T × d feature matrix tagged with its pipeline stage.
struct FeatureSequence {
  std::size_t num_frames = 0;
  std::size_t dim = 0;
  Stage stage = Stage::kFbank40;
  std::vector<double> values;

  double at(std::size_t t, std::size_t k) const { return values[t * dim + k]; }
  std::span<const double> frame(std::size_t t) const {
    return {values.data() + t * dim, dim};
  }
};

/// 1 + floor((N - 400) / 160), or 0 when N < 400.
std::size_t num_frames(std::size_t num_samples);

/// Pre-emphasized, Hann-windowed 400-sample frames. Throws FormatError when
/// the sample rate is not 16 kHz.
std::vector<std::vector<double>> frame_signal(const Waveform& w);

/// Unprocessed 400-sample windows on the same 10 ms grid, row-major
/// T × 400; the input of the learned acoustic front end.
std::vector<double> raw_frames(const Waveform& w, std::size_t max_frames = kMaxFrames);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// 40 × 257 triangular filter weights over the one-sided 512-point spectrum,
/// centres equally spaced in mel over [0, 8000] Hz.
const std::vector<double>& mel_filter_weights();

FeatureSequence log_mel_fbank(const std::vector<std::vector<double>>& frames);
FeatureSequence add_deltas(const FeatureSequence& f);
FeatureSequence cmvn(const FeatureSequence& f);
FeatureSequence stack_frames(const FeatureSequence& f);

/// Truncated fbank -> deltas -> CMVN; the 120-d target features.
FeatureSequence speech_features(const Waveform& w);
/// Full pipeline to the 360-d encoder input.
FeatureSequence extract_features(const Waveform& w);

// RIFF/WAVE, PCM s16le, mono, 16 kHz only.
Waveform read_wav(const std::filesystem::path& path);
Waveform read_wav(std::istream& is);
void write_wav(const std::filesystem::path& path, const Waveform& w);
void write_wav(std::ostream& os, const Waveform& w);

// Feature dump:
//   "SCSTFEAT" | u32 version(=1) |
//   records until EOF: { u32 id_len | id bytes | u64 T | u64 d |
//                        f64 values[T*d] row-major }
void write_feature_dump(std::ostream& os, const std::string& id,
                        const FeatureSequence& f, bool with_header);
struct DumpRecord {
  std::string id;
  std::size_t num_frames = 0;
  std::size_t dim = 0;
  std::vector<double> values;
};
std::vector<DumpRecord> read_feature_dump(std::istream& is);

}  // namespace scst::frontend

#endif  // SCST_FRONTEND_HPP
