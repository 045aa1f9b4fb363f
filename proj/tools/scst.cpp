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

// scst command-line tool: train, translate, evaluate, features, synth.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "scst/bleu.hpp"
#include "scst/data.hpp"
#include "scst/decoding.hpp"
#include "scst/frontend.hpp"
#include "scst/kv_config.hpp"
#include "scst/log.hpp"
#include "scst/model.hpp"
#include "scst/training.hpp"

namespace fs = std::filesystem;
using namespace scst;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Keys that are neither model, training nor synth settings.
struct DataConfig {
  std::string preset = "desk";
  std::string train_manifest;
  std::string dev_manifest;
  std::string vocab_mode = "char";
  int synth_train = 500;
  int synth_dev = 100;
  int workers = 1;

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {"preset",     "train_manifest", "dev_manifest",
                                               "vocab_mode", "synth_train",    "synth_dev",
                                               "workers"};
    return k;
  }
  std::map<std::string, std::string> to_kv() const {
    return {{"preset", preset},
            {"train_manifest", train_manifest},
            {"dev_manifest", dev_manifest},
            {"vocab_mode", vocab_mode},
            {"synth_train", kv::format(synth_train)},
            {"synth_dev", kv::format(synth_dev)},
            {"workers", kv::format(workers)}};
  }
  void apply_kv(const kv::Map& m) {
    kv::read(m, "preset", preset);
    kv::read(m, "train_manifest", train_manifest);
    kv::read(m, "dev_manifest", dev_manifest);
    kv::read(m, "vocab_mode", vocab_mode);
    kv::read(m, "synth_train", synth_train);
    kv::read(m, "synth_dev", synth_dev);
    kv::read(m, "workers", workers);
  }
  void validate() const {
    if (preset != "desk" && preset != "full") {
      throw ConfigError("preset", "expected desk|full, got '" + preset + "'");
    }
    if (vocab_mode != "char" && vocab_mode != "bpe") {
      throw ConfigError("vocab_mode", "expected char|bpe, got '" + vocab_mode + "'");
    }
    if (synth_train < 1) throw ConfigError("synth_train", "must be >= 1");
    if (synth_dev < 1) throw ConfigError("synth_dev", "must be >= 1");
    if (workers < 1) throw ConfigError("workers", "must be >= 1");
  }
};

struct RunConfig {
  ModelConfig model;
  train::TrainConfig train;
  data::SynthSpec synth;
  DataConfig data;

  kv::Map to_kv() const {
    kv::Map m = data.to_kv();
    m.merge(model.to_kv());
    m.merge(train.to_kv());
    m.merge(synth.to_kv());
    return m;
  }
};

std::set<std::string> known_keys() {
  std::set<std::string> k;
  for (const auto* v : {&ModelConfig::keys(), &train::TrainConfig::keys(),
                        &data::SynthSpec::keys(), &DataConfig::keys()}) {
    k.insert(v->begin(), v->end());
  }
  return k;
}

kv::Map parse_overrides(const std::vector<std::string>& sets) {
  kv::Map m;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(s, "override must be key=value");
    m[kv::trim(s.substr(0, eq))] = kv::trim(s.substr(eq + 1));
  }
  return m;
}

// defaults < config file < --set overrides < dedicated flags
RunConfig resolve(const std::string& config_path, const std::vector<std::string>& sets,
                  const kv::Map& flags) {
  kv::Map merged;
  if (!config_path.empty()) merged = kv::parse_file(config_path);
  for (auto& [k, v] : parse_overrides(sets)) merged[k] = v;
  for (const auto& [k, v] : flags) merged[k] = v;
  const auto known = known_keys();
  for (const auto& [k, v] : merged) {
    if (known.count(k) == 0) throw ConfigError(k, "unknown configuration key");
  }
  RunConfig rc;
  rc.data.apply_kv(merged);
  rc.data.validate();
  if (rc.data.preset == "full") rc.model = ModelConfig::full_preset();
  rc.model.apply_kv(merged);
  rc.train.apply_kv(merged);
  rc.synth.apply_kv(merged);
  rc.train.validate();
  rc.synth.validate();
  return rc;
}

void echo_config(const kv::Map& m, std::ostream& os) {
  os << "# resolved config\n";
  for (const auto& [k, v] : m) os << k << " = " << v << "\n";
  os << "# end config\n";
}

std::vector<data::Utterance> load_utterances(const std::string& manifest) {
  std::vector<data::Utterance> out;
  for (const auto& r : data::load_manifest(manifest, true)) {
    data::Utterance u;
    u.id = r.id;
    u.audio = frontend::read_wav(r.audio);
    u.translation = r.translation;
    out.push_back(std::move(u));
  }
  if (out.empty()) throw DataError(manifest + ": no utterances");
  return out;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int workers = 0;
};

int cmd_train(const TrainArgs& a) {
  kv::Map flags;
  if (a.seed_given) flags["seed"] = kv::format(a.seed);
  if (a.workers > 0) flags["workers"] = kv::format(a.workers);
  auto rc = resolve(a.config, a.sets, flags);

  std::vector<data::Utterance> train_utts, dev_utts;
  if (rc.data.train_manifest.empty()) {
    train_utts = data::synth_dataset(rc.synth, static_cast<std::size_t>(rc.data.synth_train),
                                     rc.train.seed);
    dev_utts = data::synth_dataset(rc.synth, static_cast<std::size_t>(rc.data.synth_dev),
                                   rc.train.seed + 0x9E3779B97F4A7C15ULL);
  } else {
    if (rc.data.dev_manifest.empty()) {
      throw ConfigError("dev_manifest", "required when train_manifest is set");
    }
    train_utts = load_utterances(rc.data.train_manifest);
    dev_utts = load_utterances(rc.data.dev_manifest);
  }
  std::vector<std::string> corpus;
  for (const auto& u : train_utts) corpus.push_back(u.translation);
  const auto mode = rc.data.vocab_mode == "bpe" ? data::VocabMode::kBpe : data::VocabMode::kChar;
  if (mode == data::VocabMode::kBpe && rc.model.vocab_size <= data::kNumReserved) {
    throw ConfigError("vocab_size", "bpe mode needs a target vocabulary size");
  }
  data::Vocabulary vocab;
  try {
    vocab = data::Vocabulary::build(corpus, mode,
                                    static_cast<std::size_t>(std::max(0, rc.model.vocab_size)));
  } catch (const ContractError& e) {
    throw ConfigError("vocab_size", e.what());
  }
  rc.model.vocab_size = static_cast<int>(vocab.size());
  rc.model.validate();

  const auto resolved = rc.to_kv();
  echo_config(resolved, std::cout);
  const fs::path out = a.out;
  fs::create_directories(out);
  {
    std::ofstream os(out / "config.txt");
    for (const auto& [k, v] : resolved) os << k << " = " << v << "\n";
  }
  vocab.save(out / "vocab.txt");

  auto train_set = train::prepare_examples(train_utts, vocab, rc.model.frontend_mode,
                                           rc.data.workers);
  auto dev_set = train::prepare_examples(dev_utts, vocab, rc.model.frontend_mode,
                                         rc.data.workers);
  SpeechTranslator model(rc.model, rc.train.seed);
  std::ofstream metrics(out / "metrics.tsv");
  train::TrainOptions opts;
  opts.out_dir = out;
  opts.metrics = &metrics;
  opts.on_eval = [](std::int64_t step, double score) {
    std::cout << "eval step " << step << " dev " << kv::format(score) << std::endl;
  };
  const auto result = train::train(rc.train, model, train_set, dev_set, opts);
  std::cout << "final dev_" << train::to_string(rc.train.dev_metric) << " "
            << kv::format(result.final_dev_score) << " averaged " << result.best.size()
            << " checkpoints -> " << (out / "model.bin").string() << std::endl;
  return kOk;
}

// ---------------------------------------------------------------------------

struct TranslateArgs {
  std::string model;
  std::string vocab;
  std::string manifest;
  std::string wav_list;
  std::vector<std::string> wavs;
  std::string output;
  std::size_t beam = 8;
  double alpha = 0.6;
  bool greedy = false;
  bool scores = false;
  int workers = 1;
  std::uint64_t seed = 0;
};

int cmd_translate(const TranslateArgs& a) {
  auto ck = load_checkpoint(a.model);
  const fs::path vocab_path =
      a.vocab.empty() ? fs::path(a.model).parent_path() / "vocab.txt" : fs::path(a.vocab);
  const auto vocab = data::Vocabulary::load(vocab_path);
  if (static_cast<int>(vocab.size()) != ck.config.vocab_size) {
    throw DataError("vocabulary " + vocab_path.string() + " has " +
                    std::to_string(vocab.size()) + " ids, model expects " +
                    std::to_string(ck.config.vocab_size));
  }

  std::vector<std::pair<std::string, fs::path>> items;
  if (!a.manifest.empty()) {
    for (auto& r : data::load_manifest(a.manifest, false)) items.emplace_back(r.id, r.audio);
  }
  if (!a.wav_list.empty()) {
    std::ifstream is(a.wav_list);
    if (!is) throw DataError("cannot open " + a.wav_list);
    const auto base = fs::path(a.wav_list).parent_path();
    for (std::string line; std::getline(is, line);) {
      line = kv::trim(line);
      if (line.empty()) continue;
      fs::path p(line);
      items.emplace_back(line, p.is_relative() ? base / p : p);
    }
  }
  for (const auto& w : a.wavs) items.emplace_back(w, w);

  auto resolved = ck.config.to_kv();
  resolved["beam"] = a.greedy ? "greedy" : kv::format(static_cast<std::uint64_t>(a.beam));
  resolved["alpha"] = kv::format(a.alpha);
  resolved["workers"] = kv::format(a.workers);
  resolved["seed"] = kv::format(a.seed);
  echo_config(resolved, std::cerr);

  SpeechTranslator model(ck.config, std::move(ck.params));
  std::vector<std::string> lines(items.size());
  std::vector<std::string> errors(items.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
      try {
        const auto ex = train::prepare_example(items[i].first, frontend::read_wav(items[i].second),
                                               {}, ck.config.frontend_mode);
        const auto r = decoding::translate(model, ex.input, a.greedy ? 0 : a.beam, a.alpha);
        lines[i] = vocab.decode(r.tokens);
        if (a.scores) lines[i] += "\t" + kv::format(r.score);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < a.workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::ofstream file;
  if (!a.output.empty()) {
    file.open(a.output);
    if (!file) throw DataError("cannot write " + a.output);
  }
  std::ostream& os = a.output.empty() ? std::cout : file;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!errors[i].empty()) {
      ++failed;
      std::cerr << "error: " << items[i].first << ": " << errors[i] << "\n";
      os << "\n";
    } else {
      os << lines[i] << "\n";
    }
  }
  return failed > 0 && failed == items.size() ? kData : kOk;
}

// ---------------------------------------------------------------------------

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

int cmd_evaluate(const std::string& hyps_path, const std::string& refs_path) {
  const auto hyps = read_lines(hyps_path);
  const auto refs = read_lines(refs_path);
  echo_config({{"hyps", hyps_path}, {"refs", refs_path}, {"tokenizer", "whitespace"}},
              std::cerr);
  std::cout << bleu::summary(bleu::corpus_bleu(hyps, refs)) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_features(const std::string& wav, const std::string& mode, const std::string& stage,
                 const std::string& out) {
  echo_config({{"wav", wav}, {"mode", mode}, {"stage", stage}, {"out", out}}, std::cerr);
  const auto w = frontend::read_wav(wav);
  frontend::FeatureSequence f;
  if (mode == "raw") {
    f.values = frontend::raw_frames(w);
    f.dim = frontend::kWindowSamples;
    f.num_frames = f.values.size() / f.dim;
  } else {
    const auto fb = frontend::log_mel_fbank(frontend::frame_signal(w));
    if (stage == "fbank") {
      f = fb;
    } else {
      f = frontend::speech_features(w);
      if (stage == "stacked") f = frontend::stack_frames(f);
    }
  }
  if (!out.empty()) {
    std::ofstream os(out, std::ios::binary);
    if (!os) throw DataError("cannot write " + out);
    frontend::write_feature_dump(os, fs::path(wav).stem().string(), f, true);
  }
  std::cout << "T=" << f.num_frames << " d=" << f.dim << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config, const std::vector<std::string>& sets, std::size_t n,
              std::uint64_t seed, const std::string& out) {
  auto rc = resolve(config, sets, {});
  auto resolved = rc.synth.to_kv();
  resolved["n"] = kv::format(static_cast<std::uint64_t>(n));
  resolved["seed"] = kv::format(seed);
  echo_config(resolved, std::cerr);
  const fs::path dir = out;
  fs::create_directories(dir / "wav");
  const auto utts = data::synth_dataset(rc.synth, n, seed);
  std::vector<data::ManifestRecord> records;
  std::ofstream src(dir / "source.txt");
  for (const auto& u : utts) {
    const auto rel = fs::path("wav") / (u.id + ".wav");
    frontend::write_wav(dir / rel, u.audio);
    records.push_back({u.id, rel, u.translation});
    src << u.source << "\n";
  }
  data::write_manifest(dir / "manifest.tsv", records);
  std::cout << "wrote " << utts.size() << " utterances to " << (dir / "manifest.tsv").string()
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scst: end-to-end speech-to-text translation"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model (manifest or synthetic data)");
  train_cmd->add_option("-c,--config", ta.config, "key = value config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--set", ta.sets, "Override a config key (key=value)");
  train_cmd->add_option("-o,--out", ta.out, "Output directory")->required();
  auto* seed_opt = train_cmd->add_option("--seed", ta.seed, "Random seed");
  train_cmd->add_option("--workers", ta.workers, "Feature extraction threads");

  TranslateArgs xa;
  auto* tr_cmd = app.add_subcommand("translate", "Translate audio with a trained checkpoint");
  tr_cmd->add_option("-m,--model", xa.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("--vocab", xa.vocab, "Vocabulary (default: vocab.txt next to the model)");
  tr_cmd->add_option("--manifest", xa.manifest, "TSV manifest of inputs");
  tr_cmd->add_option("--wav-list", xa.wav_list, "File with one wav path per line");
  tr_cmd->add_option("wavs", xa.wavs, "Wav files");
  tr_cmd->add_option("-o,--output", xa.output, "Hypotheses file (default: stdout)");
  tr_cmd->add_option("--beam", xa.beam, "Beam size")->check(CLI::PositiveNumber);
  tr_cmd->add_option("--alpha", xa.alpha, "Length penalty exponent");
  tr_cmd->add_flag("--greedy", xa.greedy, "Greedy decoding");
  tr_cmd->add_flag("--scores", xa.scores, "Append the hypothesis score as a second column");
  tr_cmd->add_option("--workers", xa.workers, "Decoding threads")->check(CLI::PositiveNumber);
  tr_cmd->add_option("--seed", xa.seed, "Random seed (decoding is deterministic)");

  std::string hyps, refs;
  auto* ev_cmd = app.add_subcommand("evaluate", "Corpus BLEU of hypotheses against references");
  ev_cmd->add_option("--hyps", hyps, "Hypotheses, one per line")->required();
  ev_cmd->add_option("--refs", refs, "References, one per line")->required();

  std::string wav, fmode = "filterbank", stage = "fbank", fout;
  auto* fe_cmd = app.add_subcommand("features", "Extract and dump front-end features");
  fe_cmd->add_option("wav", wav, "16 kHz mono PCM wav")->required();
  fe_cmd->add_option("--mode", fmode, "filterbank|raw")
      ->check(CLI::IsMember({"filterbank", "raw"}));
  fe_cmd->add_option("--stage", stage, "fbank|deltas|stacked (filterbank mode)")
      ->check(CLI::IsMember({"fbank", "deltas", "stacked"}));
  fe_cmd->add_option("-o,--out", fout, "Feature dump file");

  std::string sconfig, sout;
  std::vector<std::string> ssets;
  std::size_t sn = 100;
  std::uint64_t sseed = 1;
  auto* sy_cmd = app.add_subcommand("synth", "Generate a synthetic tone-to-text dataset");
  sy_cmd->add_option("-c,--config", sconfig, "Config file with synth_* keys")->check(CLI::ExistingFile);
  sy_cmd->add_option("--set", ssets, "Override a config key (key=value)");
  sy_cmd->add_option("-n,--num", sn, "Number of utterances")->check(CLI::PositiveNumber);
  sy_cmd->add_option("--seed", sseed, "Random seed");
  sy_cmd->add_option("-o,--out", sout, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) {
      ta.seed_given = seed_opt->count() > 0;
      return cmd_train(ta);
    }
    if (*tr_cmd) return cmd_translate(xa);
    if (*ev_cmd) return cmd_evaluate(hyps, refs);
    if (*fe_cmd) return cmd_features(wav, fmode, stage, fout);
    if (*sy_cmd) return cmd_synth(sconfig, ssets, sn, sseed, sout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
