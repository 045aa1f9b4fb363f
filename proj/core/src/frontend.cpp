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

#include "scst/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "scst/binary_io.hpp"

namespace scst::frontend {

namespace {

constexpr std::size_t kNumBins = kFftSize / 2 + 1;

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// One 512-point real FFT plan per thread; planning is serialized because
// the FFTW planner is not reentrant.
class PowerSpectrum {
 public:
  PowerSpectrum() {
    in_ = fftw_alloc_real(kFftSize);
    out_ = fftw_alloc_complex(kNumBins);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(kFftSize), in_, out_, FFTW_ESTIMATE);
  }
  ~PowerSpectrum() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  PowerSpectrum(const PowerSpectrum&) = delete;
  PowerSpectrum& operator=(const PowerSpectrum&) = delete;

  void compute(std::span<const double> frame, std::span<double> power) {
    std::fill(in_, in_ + kFftSize, 0.0);
    std::copy(frame.begin(), frame.end(), in_);
    fftw_execute(plan_);
    for (std::size_t k = 0; k < kNumBins; ++k) {
      power[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    }
  }

 private:
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kWindowSamples);
    for (std::size_t n = 0; n < kWindowSamples; ++n) {
      v[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                  static_cast<double>(kWindowSamples - 1));
    }
    return v;
  }();
  return w;
}

void check_rate(const Waveform& w) {
  if (w.sample_rate != kSampleRate) {
    throw FormatError("expected 16000 Hz audio, got " +
                      std::to_string(w.sample_rate) + " Hz (resampling unsupported)");
  }
}

FeatureSequence truncated(FeatureSequence f, std::size_t max_frames) {
  if (f.num_frames > max_frames) {
    f.num_frames = max_frames;
    f.values.resize(max_frames * f.dim);
  }
  return f;
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kFbank40: return "fbank40";
    case Stage::kDeltas120: return "fbank+deltas120";
    case Stage::kStacked360: return "stacked360";
  }
  return "?";
}

std::size_t stage_dim(Stage s) {
  switch (s) {
    case Stage::kFbank40: return kNumMels;
    case Stage::kDeltas120: return kSpeechDim;
    case Stage::kStacked360: return kStackedDim;
  }
  return 0;
}

std::size_t num_frames(std::size_t num_samples) {
  if (num_samples < kWindowSamples) return 0;
  return 1 + (num_samples - kWindowSamples) / kStepSamples;
}

std::vector<std::vector<double>> frame_signal(const Waveform& w) {
  check_rate(w);
  const auto n = num_frames(w.samples.size());
  const auto& win = hann_window();
  std::vector<std::vector<double>> frames(n, std::vector<double>(kWindowSamples));
  for (std::size_t t = 0; t < n; ++t) {
    const double* x = w.samples.data() + t * kStepSamples;
    auto& f = frames[t];
    // Per-frame pre-emphasis; the first sample is emphasized against itself.
    f[0] = (x[0] - kPreemphasis * x[0]) * win[0];
    for (std::size_t i = 1; i < kWindowSamples; ++i) {
      f[i] = (x[i] - kPreemphasis * x[i - 1]) * win[i];
    }
  }
  return frames;
}

std::vector<double> raw_frames(const Waveform& w, std::size_t max_frames) {
  check_rate(w);
  const auto n = std::min(num_frames(w.samples.size()), max_frames);
  std::vector<double> out(n * kWindowSamples);
  for (std::size_t t = 0; t < n; ++t) {
    std::copy_n(w.samples.data() + t * kStepSamples, kWindowSamples,
                out.data() + t * kWindowSamples);
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

const std::vector<double>& mel_filter_weights() {
  static const std::vector<double> weights = [] {
    std::vector<double> w(kNumMels * kNumBins, 0.0);
    const double lo = hz_to_mel(0.0);
    const double hi = hz_to_mel(kSampleRate / 2.0);
    std::vector<double> edges(kNumMels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      edges[i] = lo + (hi - lo) * static_cast<double>(i) /
                          static_cast<double>(kNumMels + 1);
    }
    for (std::size_t m = 0; m < kNumMels; ++m) {
      const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
      for (std::size_t k = 0; k < kNumBins; ++k) {
        const double hz = static_cast<double>(k) * kSampleRate /
                          static_cast<double>(kFftSize);
        const double mel = hz_to_mel(hz);
        double v = 0.0;
        if (mel > left && mel <= centre) {
          v = (mel - left) / (centre - left);
        } else if (mel > centre && mel < right) {
          v = (right - mel) / (right - centre);
        }
        w[m * kNumBins + k] = v;
      }
    }
    return w;
  }();
  return weights;
}

FeatureSequence log_mel_fbank(const std::vector<std::vector<double>>& frames) {
  thread_local PowerSpectrum spectrum;
  const auto& w = mel_filter_weights();
  FeatureSequence out;
  out.stage = Stage::kFbank40;
  out.dim = kNumMels;
  out.num_frames = frames.size();
  out.values.resize(frames.size() * kNumMels);
  std::vector<double> power(kNumBins);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    spectrum.compute(frames[t], power);
    for (std::size_t m = 0; m < kNumMels; ++m) {
      double e = 0.0;
      const double* wm = w.data() + m * kNumBins;
      for (std::size_t k = 0; k < kNumBins; ++k) e += wm[k] * power[k];
      out.values[t * kNumMels + m] = std::log(std::max(e, kLogFloor));
    }
  }
  return out;
}

namespace {

// Regression deltas over a ±2 frame window with edge replication.
std::vector<double> deltas(std::span<const double> c, std::size_t t_len,
                           std::size_t d) {
  std::vector<double> out(t_len * d, 0.0);
  double denom = 0.0;
  for (int n = 1; n <= kDeltaWindow; ++n) denom += 2.0 * n * n;
  const auto last = static_cast<long>(t_len) - 1;
  for (std::size_t t = 0; t < t_len; ++t) {
    for (int n = 1; n <= kDeltaWindow; ++n) {
      const auto fwd = static_cast<std::size_t>(std::min<long>(static_cast<long>(t) + n, last));
      const auto bwd = static_cast<std::size_t>(std::max<long>(static_cast<long>(t) - n, 0));
      for (std::size_t k = 0; k < d; ++k) {
        out[t * d + k] += n * (c[fwd * d + k] - c[bwd * d + k]);
      }
    }
    for (std::size_t k = 0; k < d; ++k) out[t * d + k] /= denom;
  }
  return out;
}

}  // namespace

FeatureSequence add_deltas(const FeatureSequence& f) {
  if (f.stage != Stage::kFbank40 || f.dim != kNumMels) {
    throw std::logic_error(std::string("add_deltas: expected fbank40 input, got ") +
                           stage_name(f.stage));
  }
  const auto t_len = f.num_frames, d = f.dim;
  auto d1 = deltas(f.values, t_len, d);
  auto d2 = deltas(d1, t_len, d);
  FeatureSequence out;
  out.stage = Stage::kDeltas120;
  out.dim = 3 * d;
  out.num_frames = t_len;
  out.values.resize(t_len * out.dim);
  for (std::size_t t = 0; t < t_len; ++t) {
    double* row = out.values.data() + t * out.dim;
    std::copy_n(f.values.data() + t * d, d, row);
    std::copy_n(d1.data() + t * d, d, row + d);
    std::copy_n(d2.data() + t * d, d, row + 2 * d);
  }
  return out;
}

FeatureSequence cmvn(const FeatureSequence& f) {
  FeatureSequence out = f;
  const auto t_len = f.num_frames, d = f.dim;
  if (t_len == 0) return out;
  for (std::size_t k = 0; k < d; ++k) {
    double mu = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) mu += f.at(t, k);
    mu /= static_cast<double>(t_len);
    double var = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) var += (f.at(t, k) - mu) * (f.at(t, k) - mu);
    var /= static_cast<double>(t_len);
    const double inv = 1.0 / std::sqrt(var + kCmvnEps);
    for (std::size_t t = 0; t < t_len; ++t) {
      out.values[t * d + k] = (f.at(t, k) - mu) * inv;
    }
  }
  return out;
}

FeatureSequence stack_frames(const FeatureSequence& f) {
  if (f.stage != Stage::kDeltas120) {
    throw std::logic_error(std::string("stack_frames: expected 120-d input, got ") +
                           stage_name(f.stage));
  }
  FeatureSequence out;
  out.stage = Stage::kStacked360;
  out.dim = kStackFactor * f.dim;
  out.num_frames = (f.num_frames + kStackFactor - 1) / kStackFactor;
  // Row-major T×120 is already laid out as ⌈T/3⌉×360 once zero padded.
  out.values = f.values;
  out.values.resize(out.num_frames * out.dim, 0.0);
  return out;
}

FeatureSequence speech_features(const Waveform& w) {
  auto fb = truncated(log_mel_fbank(frame_signal(w)), kMaxFrames);
  return cmvn(add_deltas(fb));
}

FeatureSequence extract_features(const Waveform& w) {
  return stack_frames(speech_features(w));
}

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint32_t read_tag(std::istream& is) { return io::get_u32(is); }

constexpr std::uint32_t tag(const char (&s)[5]) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(s[0])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[3])) << 24;
}

}  // namespace

Waveform read_wav(std::istream& is) {
  if (read_tag(is) != tag("RIFF")) throw FormatError("not a RIFF file");
  io::get_u32(is);
  if (read_tag(is) != tag("WAVE")) throw FormatError("RIFF file is not WAVE");
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (is) {
    const auto id = read_tag(is);
    const auto size = io::get_u32(is);
    if (!is) break;
    if (id == tag("fmt ")) {
      if (size < 16) throw FormatError("fmt chunk too short");
      format = io::get_u16(is);
      channels = io::get_u16(is);
      rate = io::get_u32(is);
      io::get_u32(is);  // byte rate
      io::get_u16(is);  // block align
      bits = io::get_u16(is);
      is.ignore(size - 16 + (size & 1));
      have_fmt = true;
    } else if (id == tag("data")) {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      if (format != 1) throw FormatError("only PCM WAV is supported");
      if (channels != 1) {
        throw FormatError("expected mono audio, got " + std::to_string(channels) +
                          " channels");
      }
      if (bits != 16) {
        throw FormatError("expected 16-bit samples, got " + std::to_string(bits));
      }
      if (rate != static_cast<std::uint32_t>(kSampleRate)) {
        throw FormatError("expected 16000 Hz audio, got " + std::to_string(rate) +
                          " Hz (resampling unsupported)");
      }
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      const auto n = size / 2;
      w.samples.resize(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        const auto raw = static_cast<std::int16_t>(io::get_u16(is));
        w.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      if (!is) throw FormatError("truncated data chunk");
      return w;
    } else {
      is.ignore(size + (size & 1));
    }
  }
  throw FormatError("no data chunk in WAV file");
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open audio file " + path.string());
  try {
    return read_wav(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_wav(std::ostream& os, const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  io::put_u32(os, tag("RIFF"));
  io::put_u32(os, 36 + 2 * n);
  io::put_u32(os, tag("WAVE"));
  io::put_u32(os, tag("fmt "));
  io::put_u32(os, 16);
  io::put_u16(os, 1);
  io::put_u16(os, 1);
  io::put_u32(os, static_cast<std::uint32_t>(w.sample_rate));
  io::put_u32(os, static_cast<std::uint32_t>(w.sample_rate) * 2);
  io::put_u16(os, 2);
  io::put_u16(os, 16);
  io::put_u32(os, tag("data"));
  io::put_u32(os, 2 * n);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0) * 32767.0;
    io::put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c))));
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  write_wav(os, w);
}

// ---------------------------------------------------------------------------
// Feature dump

namespace {
constexpr char kFeatMagic[8] = {'S', 'C', 'S', 'T', 'F', 'E', 'A', 'T'};
constexpr std::uint32_t kFeatVersion = 1;
}  // namespace

void write_feature_dump(std::ostream& os, const std::string& id,
                        const FeatureSequence& f, bool with_header) {
  if (with_header) {
    os.write(kFeatMagic, sizeof(kFeatMagic));
    io::put_u32(os, kFeatVersion);
  }
  io::put_u32(os, static_cast<std::uint32_t>(id.size()));
  os.write(id.data(), static_cast<std::streamsize>(id.size()));
  io::put_u64(os, f.num_frames);
  io::put_u64(os, f.dim);
  io::put_f64s(os, f.values);
}

std::vector<DumpRecord> read_feature_dump(std::istream& is) {
  char magic[sizeof(kFeatMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kFeatMagic, sizeof(magic)) != 0) {
    throw FormatError("not a feature dump (bad magic)");
  }
  if (io::get_u32(is) != kFeatVersion) throw FormatError("unsupported dump version");
  std::vector<DumpRecord> out;
  while (true) {
    const auto id_len = io::get_u32(is);
    if (!is) break;
    DumpRecord r;
    r.id.resize(id_len);
    is.read(r.id.data(), id_len);
    r.num_frames = io::get_u64(is);
    r.dim = io::get_u64(is);
    r.values.resize(r.num_frames * r.dim);
    io::get_f64s(is, r.values);
    if (!is) throw FormatError("truncated feature dump record '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace scst::frontend
