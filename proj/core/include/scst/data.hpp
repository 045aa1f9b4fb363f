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

#ifndef SCST_DATA_HPP
#define SCST_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scst/errors.hpp"
#include "scst/frontend.hpp"

namespace scst::data {

inline constexpr std::int64_t kPadId = 0;
inline constexpr std::int64_t kBosId = 1;
inline constexpr std::int64_t kEosId = 2;
inline constexpr std::int64_t kNumReserved = 3;
inline constexpr const char* kEndOfWord = "</w>";

enum class VocabMode { kChar, kBpe };

/// Token <-> id bijection. Ids 0..2 are pad/bos/eos; text tokens start at 3.
/// The CTC blank (id == size()) is not part of the vocabulary.
class Vocabulary {
 public:
  /// Char mode: every observed code point. BPE mode: word-final-marked code
  /// points, then greedy most-frequent-pair merges until `size` ids exist
  /// (ties: lexicographically smallest pair). `size` is ignored in char mode.
  static Vocabulary build(std::span<const std::string> corpus, VocabMode mode,
                          std::size_t size = 0);

  VocabMode mode() const { return mode_; }
  /// Total id count V including reserved ids.
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::int64_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<std::int64_t> find(const std::string& token) const;
  /// BPE merges in rank order, as (left id, right id).
  const std::vector<std::pair<std::int64_t, std::int64_t>>& merges() const { return merges_; }

  /// Throws DataError for symbols outside the vocabulary.
  std::vector<std::int64_t> encode(const std::string& text) const;
  /// Reserved ids (and out-of-range ids) are dropped.
  std::string decode(std::span<const std::int64_t> ids) const;

  // One token per line; line i (0-based) holds id i + 3. Char tokens escape
  // '\\', space, tab and newline as \\ \s \t \n. BPE merged tokens are
  // written as "left right".
  void write(std::ostream& os) const;
  static Vocabulary read(std::istream& is);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const {
    return mode_ == o.mode_ && tokens_ == o.tokens_ && merges_ == o.merges_;
  }

 private:
  void add_token(const std::string& t);
  std::vector<std::int64_t> encode_word(const std::vector<std::string>& symbols) const;

  VocabMode mode_ = VocabMode::kChar;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
  std::vector<std::pair<std::int64_t, std::int64_t>> merges_;
  // Merged token id -> merge rank.
  std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> merge_rank_;
};

/// UTF-8 code points of `s` as individual strings.
std::vector<std::string> utf8_chars(const std::string& s);

// ---------------------------------------------------------------------------
// Manifest: TSV `id<TAB>audio_path<TAB>translation`, UTF-8, LF.

struct ManifestRecord {
  std::string id;
  std::filesystem::path audio;
  std::string translation;
};

/// Relative audio paths resolve against the manifest's directory. Malformed
/// lines are reported together, by line number, as a DataError; so are
/// missing audio files when `check_audio` is set.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path,
                                          bool check_audio = true);
void write_manifest(const std::filesystem::path& path,
                    std::span<const ManifestRecord> records);

// ---------------------------------------------------------------------------
// Synthetic tone-to-text task

enum class MappingRule { kCopy, kReverse, kCipher };
const char* to_string(MappingRule r);
MappingRule parse_mapping_rule(const std::string& s);

struct SynthSpec {
  int alphabet_size = 8;
  std::vector<double> frequencies;  // Hz per symbol; empty = default ladder
  double tone_ms = 300.0;
  MappingRule rule = MappingRule::kCopy;
  double noise_std = 0.01;
  int min_len = 3;
  int max_len = 12;

  /// Symbol i is 'a' + i.
  char symbol(int i) const { return static_cast<char>('a' + i); }
  /// Resolved per-symbol frequencies (default: 300 Hz upward in equal steps
  /// of at most 300 Hz, staying within 3000 Hz).
  std::vector<double> tone_frequencies() const;
  std::string apply_rule(const std::string& source) const;
  /// Throws ConfigError naming the offending synth_* key.
  void validate() const;

  std::map<std::string, std::string> to_kv() const;  // keys prefixed synth_
  void apply_kv(const std::map<std::string, std::string>& kv);
  static const std::vector<std::string>& keys();
};

struct Utterance {
  std::string id;
  frontend::Waveform audio;
  std::string source;
  std::string translation;
};

/// `n` utterances; symbol strings uniform in length [min_len, max_len],
/// audio = 0.5-amplitude tones plus Gaussian noise. Deterministic in `seed`.
std::vector<Utterance> synth_dataset(const SynthSpec& spec, std::size_t n,
                                     std::uint64_t seed);

}  // namespace scst::data

#endif  // SCST_DATA_HPP
