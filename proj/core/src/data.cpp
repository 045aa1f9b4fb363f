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

#include "scst/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "scst/kv_config.hpp"
#include "scst/log.hpp"

namespace scst::data {

namespace {

const char* const kReservedTokens[] = {"<pad>", "<s>", "</s>"};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> words;
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

std::vector<std::string> word_symbols(const std::string& word) {
  auto syms = utf8_chars(word);
  if (!syms.empty()) syms.back() += kEndOfWord;
  return syms;
}

std::string escape_char_token(const std::string& t) {
  if (t == "\\") return "\\\\";
  if (t == " ") return "\\s";
  if (t == "\t") return "\\t";
  if (t == "\n") return "\\n";
  return t;
}

std::string unescape_char_token(const std::string& t) {
  if (t == "\\\\") return "\\";
  if (t == "\\s") return " ";
  if (t == "\\t") return "\t";
  if (t == "\\n") return "\n";
  return t;
}

}  // namespace

std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t n = 1;
    if (c >= 0xF0) {
      n = 4;
    } else if (c >= 0xE0) {
      n = 3;
    } else if (c >= 0xC0) {
      n = 2;
    }
    n = std::min(n, s.size() - i);
    out.push_back(s.substr(i, n));
    i += n;
  }
  return out;
}

void Vocabulary::add_token(const std::string& t) {
  if (index_.count(t) != 0) throw ContractError("duplicate token '" + t + "'");
  index_.emplace(t, static_cast<std::int64_t>(tokens_.size()));
  tokens_.push_back(t);
}

std::optional<std::int64_t> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end() || it->second < kNumReserved) return std::nullopt;
  return it->second;
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, VocabMode mode,
                             std::size_t size) {
  if (corpus.empty()) throw ContractError("build_vocab: empty corpus");
  Vocabulary v;
  v.mode_ = mode;
  for (const char* r : kReservedTokens) v.add_token(r);

  if (mode == VocabMode::kChar) {
    std::set<std::string> chars;
    for (const auto& line : corpus) {
      for (auto& c : utf8_chars(line)) chars.insert(c);
    }
    for (const auto& c : chars) v.add_token(c);
    return v;
  }

  std::map<std::string, std::size_t> word_counts;
  for (const auto& line : corpus) {
    for (auto& w : split_words(line)) ++word_counts[w];
  }
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  std::set<std::string> initial;
  for (const auto& [w, n] : word_counts) {
    auto syms = word_symbols(w);
    initial.insert(syms.begin(), syms.end());
    words.emplace_back(std::move(syms), n);
  }
  if (size < static_cast<std::size_t>(kNumReserved) + initial.size()) {
    throw ContractError("build_vocab: size " + std::to_string(size) +
                        " is below reserved + observed symbols (" +
                        std::to_string(kNumReserved + initial.size()) + ")");
  }
  for (const auto& s : initial) v.add_token(s);

  while (v.size() < size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const auto& [syms, n] : words) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += n;
    }
    const std::pair<std::string, std::string>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pr, n] : pairs) {
      if (v.index_.count(pr.first + pr.second) != 0) continue;
      // Map order makes the first maximum the lexicographically smallest.
      if (n > best_count) {
        best = &pr;
        best_count = n;
      }
    }
    if (best == nullptr) break;
    const auto [left, right] = *best;
    const auto merged = left + right;
    v.merges_.emplace_back(v.index_.at(left), v.index_.at(right));
    v.merge_rank_[v.merges_.back()] = v.merges_.size() - 1;
    v.add_token(merged);
    for (auto& [syms, n] : words) {
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
  }
  return v;
}

std::vector<std::int64_t> Vocabulary::encode_word(const std::vector<std::string>& symbols) const {
  std::vector<std::int64_t> ids;
  ids.reserve(symbols.size());
  for (const auto& s : symbols) {
    auto id = find(s);
    if (!id) throw DataError("unknown symbol '" + s + "'");
    ids.push_back(*id);
  }
  while (ids.size() > 1) {
    std::size_t best_rank = merges_.size();
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = merge_rank_.find({ids[i], ids[i + 1]});
      if (it != merge_rank_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == merges_.size()) break;
    const auto [l, r] = merges_[best_rank];
    // Merged tokens follow the base symbols in rank order.
    const auto merged = static_cast<std::int64_t>(tokens_.size() - merges_.size() + best_rank);
    std::vector<std::int64_t> next;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
        next.push_back(merged);
        ++i;
      } else {
        next.push_back(ids[i]);
      }
    }
    ids = std::move(next);
  }
  return ids;
}

std::vector<std::int64_t> Vocabulary::encode(const std::string& text) const {
  if (mode_ == VocabMode::kChar) {
    std::vector<std::int64_t> ids;
    for (const auto& c : utf8_chars(text)) {
      auto id = find(c);
      if (!id) throw DataError("unknown symbol '" + c + "' in \"" + text + "\"");
      ids.push_back(*id);
    }
    return ids;
  }
  std::vector<std::int64_t> ids;
  for (const auto& w : split_words(text)) {
    auto part = encode_word(word_symbols(w));
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

std::string Vocabulary::decode(std::span<const std::int64_t> ids) const {
  std::string out;
  for (auto id : ids) {
    if (id < kNumReserved || id >= static_cast<std::int64_t>(tokens_.size())) continue;
    out += tokens_[static_cast<std::size_t>(id)];
  }
  if (mode_ == VocabMode::kBpe) {
    std::string text;
    for (std::size_t pos = 0;;) {
      auto hit = out.find(kEndOfWord, pos);
      text += out.substr(pos, hit == std::string::npos ? std::string::npos : hit - pos);
      if (hit == std::string::npos) break;
      text += ' ';
      pos = hit + std::string(kEndOfWord).size();
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    return text;
  }
  return out;
}

void Vocabulary::write(std::ostream& os) const {
  const std::size_t first_merge = tokens_.size() - merges_.size();
  for (std::size_t id = kNumReserved; id < tokens_.size(); ++id) {
    if (mode_ == VocabMode::kChar) {
      os << escape_char_token(tokens_[id]) << '\n';
    } else if (id >= first_merge) {
      const auto [l, r] = merges_[id - first_merge];
      os << tokens_[static_cast<std::size_t>(l)] << ' '
         << tokens_[static_cast<std::size_t>(r)] << '\n';
    } else {
      os << tokens_[id] << '\n';
    }
  }
}

Vocabulary Vocabulary::read(std::istream& is) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  const bool bpe = std::any_of(lines.begin(), lines.end(), [](const std::string& l) {
    return ends_with(l, kEndOfWord);
  });
  Vocabulary v;
  v.mode_ = bpe ? VocabMode::kBpe : VocabMode::kChar;
  for (const char* r : kReservedTokens) v.add_token(r);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& l = lines[i];
    if (!bpe) {
      v.add_token(unescape_char_token(l));
      continue;
    }
    const auto sp = l.find(' ');
    if (sp == std::string::npos) {
      if (!v.merges_.empty()) {
        throw FormatError("vocab line " + std::to_string(i + 1) +
                          ": base symbol after merges");
      }
      v.add_token(l);
      continue;
    }
    const auto left = v.find(l.substr(0, sp));
    const auto right = v.find(l.substr(sp + 1));
    if (!left || !right) {
      throw FormatError("vocab line " + std::to_string(i + 1) +
                        ": merge refers to unknown tokens");
    }
    v.merges_.emplace_back(*left, *right);
    v.merge_rank_[v.merges_.back()] = v.merges_.size() - 1;
    v.add_token(l.substr(0, sp) + l.substr(sp + 1));
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write vocabulary " + path.string());
  write(os);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open vocabulary " + path.string());
  return read(is);
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path,
                                          bool check_audio) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestRecord> out;
  std::vector<std::string> problems;
  std::vector<std::string> missing;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      cols.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (cols.size() != 3) {
      problems.push_back("line " + std::to_string(lineno) + ": expected 3 tab-separated columns, got " +
                         std::to_string(cols.size()));
      continue;
    }
    if (kv::trim(cols[2]).empty()) {
      problems.push_back("line " + std::to_string(lineno) + ": empty translation");
      continue;
    }
    ManifestRecord r{cols[0], cols[1], cols[2]};
    if (r.audio.is_relative()) r.audio = base / r.audio;
    if (check_audio && !std::filesystem::exists(r.audio)) {
      missing.push_back(r.audio.string());
    }
    out.push_back(std::move(r));
  }
  if (!problems.empty()) {
    std::string msg = path.string() + ": malformed manifest";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  if (!missing.empty()) {
    std::string msg = path.string() + ": missing audio files";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DataError(msg);
  }
  if (out.empty()) log::warn("manifest " + path.string() + " is empty");
  return out;
}

void write_manifest(const std::filesystem::path& path,
                    std::span<const ManifestRecord> records) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : records) {
    os << r.id << '\t' << r.audio.string() << '\t' << r.translation << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

const char* to_string(MappingRule r) {
  switch (r) {
    case MappingRule::kCopy: return "copy";
    case MappingRule::kReverse: return "reverse";
    case MappingRule::kCipher: return "cipher";
  }
  return "?";
}

MappingRule parse_mapping_rule(const std::string& s) {
  if (s == "copy") return MappingRule::kCopy;
  if (s == "reverse") return MappingRule::kReverse;
  if (s == "cipher") return MappingRule::kCipher;
  throw ConfigError("synth_rule", "expected copy|reverse|cipher, got '" + s + "'");
}

std::vector<double> SynthSpec::tone_frequencies() const {
  if (!frequencies.empty()) return frequencies;
  std::vector<double> f(static_cast<std::size_t>(std::max(alphabet_size, 0)));
  const double step = alphabet_size > 1 ? std::min(300.0, 2700.0 / (alphabet_size - 1)) : 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = 300.0 + step * static_cast<double>(i);
  return f;
}

std::string SynthSpec::apply_rule(const std::string& source) const {
  switch (rule) {
    case MappingRule::kCopy: return source;
    case MappingRule::kReverse: return {source.rbegin(), source.rend()};
    case MappingRule::kCipher: {
      // Substitution: symbol i -> symbol (alphabet_size - 1 - i).
      std::string out = source;
      for (auto& c : out) c = symbol(alphabet_size - 1 - (c - 'a'));
      return out;
    }
  }
  return source;
}

void SynthSpec::validate() const {
  if (alphabet_size < 1 || alphabet_size > 26) {
    throw ConfigError("synth_alphabet_size", "must lie in [1, 26]");
  }
  const auto f = tone_frequencies();
  if (f.size() != static_cast<std::size_t>(alphabet_size)) {
    throw ConfigError("synth_frequencies", "need one frequency per symbol");
  }
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] < 200.0 || f[i] > 3000.0) {
      throw ConfigError("synth_frequencies", "frequencies must lie in [200, 3000] Hz");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (std::abs(f[i] - f[j]) < 100.0) {
        throw ConfigError("synth_frequencies", "frequencies must be >= 100 Hz apart");
      }
    }
  }
  if (!(tone_ms > 0.0)) throw ConfigError("synth_tone_ms", "must be > 0");
  if (!(noise_std >= 0.0)) throw ConfigError("synth_noise_std", "must be >= 0");
  if (min_len < 1) throw ConfigError("synth_min_len", "must be >= 1");
  if (max_len < min_len) throw ConfigError("synth_max_len", "must be >= synth_min_len");
}

const std::vector<std::string>& SynthSpec::keys() {
  static const std::vector<std::string> k = {
      "synth_alphabet_size", "synth_frequencies", "synth_tone_ms", "synth_rule",
      "synth_noise_std",     "synth_min_len",     "synth_max_len"};
  return k;
}

std::map<std::string, std::string> SynthSpec::to_kv() const {
  std::string freqs;
  for (std::size_t i = 0; i < frequencies.size(); ++i) {
    freqs += (i ? "," : "") + kv::format(frequencies[i]);
  }
  return {{"synth_alphabet_size", kv::format(alphabet_size)},
          {"synth_frequencies", freqs},
          {"synth_tone_ms", kv::format(tone_ms)},
          {"synth_rule", to_string(rule)},
          {"synth_noise_std", kv::format(noise_std)},
          {"synth_min_len", kv::format(min_len)},
          {"synth_max_len", kv::format(max_len)}};
}

void SynthSpec::apply_kv(const std::map<std::string, std::string>& m) {
  kv::read(m, "synth_alphabet_size", alphabet_size);
  if (auto it = m.find("synth_frequencies"); it != m.end()) {
    frequencies.clear();
    std::istringstream is(it->second);
    std::string item;
    while (std::getline(is, item, ',')) {
      item = kv::trim(item);
      if (item.empty()) continue;
      double f = 0.0;
      kv::parse_value("synth_frequencies", item, f);
      frequencies.push_back(f);
    }
  }
  kv::read(m, "synth_tone_ms", tone_ms);
  if (auto it = m.find("synth_rule"); it != m.end()) rule = parse_mapping_rule(it->second);
  kv::read(m, "synth_noise_std", noise_std);
  kv::read(m, "synth_min_len", min_len);
  kv::read(m, "synth_max_len", max_len);
}

std::vector<Utterance> synth_dataset(const SynthSpec& spec, std::size_t n,
                                     std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw ContractError("synth_dataset: n must be >= 1");
  const auto freqs = spec.tone_frequencies();
  const auto tone_samples = static_cast<std::size_t>(
      std::lround(spec.tone_ms * frontend::kSampleRate / 1000.0));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> sym_dist(0, spec.alphabet_size - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<Utterance> out;
  out.reserve(n);
  for (std::size_t u = 0; u < n; ++u) {
    Utterance utt;
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%06zu", u);
    utt.id = id;
    const int len = len_dist(rng);
    for (int i = 0; i < len; ++i) utt.source.push_back(spec.symbol(sym_dist(rng)));
    utt.translation = spec.apply_rule(utt.source);
    auto& samples = utt.audio.samples;
    samples.reserve(tone_samples * utt.source.size());
    for (char c : utt.source) {
      const double f = freqs[static_cast<std::size_t>(c - 'a')];
      for (std::size_t k = 0; k < tone_samples; ++k) {
        const double t = static_cast<double>(k) / frontend::kSampleRate;
        double x = 0.5 * std::sin(2.0 * std::numbers::pi * f * t);
        if (spec.noise_std > 0.0) x += spec.noise_std * noise(rng);
        samples.push_back(std::clamp(x, -1.0, 1.0));
      }
    }
    out.push_back(std::move(utt));
  }
  return out;
}

}  // namespace scst::data
