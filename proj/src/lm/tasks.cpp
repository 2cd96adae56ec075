#include "voxelenc/lm/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "voxelenc/error.hpp"

namespace voxelenc::lm {

namespace {

using nlohmann::json;

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<int> int_list(const json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + " must be an array of token ids");
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw FormatError(what + " must contain integers only");
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace

void TaskDataset::validate(const ModelConfig& cfg) const {
  if (examples.empty()) throw ArgumentError("task '" + name + "' has no examples");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    if (e.x.empty() || e.y.empty()) {
      throw ArgumentError("task example " + std::to_string(i) + " needs non-empty x and y");
    }
    if (e.x.size() + e.y.size() - 1 > cfg.context) {
      throw ArgumentError("task example " + std::to_string(i) + " exceeds the context length");
    }
    for (const auto* part : {&e.x, &e.y}) {
      for (int id : *part) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) {
          throw ArgumentError("task example " + std::to_string(i) + ": token id " +
                              std::to_string(id) + " outside [0, " + std::to_string(cfg.vocab) +
                              ")");
        }
      }
    }
  }
}

MarkovGrammar::MarkovGrammar(std::size_t n_tokens, std::uint64_t seed, std::size_t branching) {
  if (n_tokens < 2 || branching < 1) {
    throw ArgumentError("MarkovGrammar: need at least 2 tokens and branching >= 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(n_tokens) - 1);
  next_.resize(n_tokens);
  for (auto& successors : next_) {
    for (std::size_t b = 0; b < branching; ++b) successors.push_back(pick(rng));
  }
}

std::vector<int> MarkovGrammar::sample(std::mt19937_64& rng, std::size_t length) const {
  std::vector<int> out;
  if (length == 0) return out;
  std::uniform_int_distribution<std::size_t> start(0, next_.size() - 1);
  int token = static_cast<int>(start(rng));
  out.push_back(token);
  while (out.size() < length) {
    const auto& successors = next_[static_cast<std::size_t>(token)];
    std::uniform_int_distribution<std::size_t> step(0, successors.size() - 1);
    token = successors[step(rng)];
    out.push_back(token);
  }
  return out;
}

TaskDataset make_lm_corpus(const MarkovGrammar& grammar, std::size_t n_examples,
                           std::size_t min_len, std::size_t max_len, std::uint64_t seed) {
  if (min_len < 2 || max_len < min_len) {
    throw ArgumentError("make_lm_corpus: need 2 <= min_len <= max_len");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  TaskDataset task;
  task.name = "lm";
  for (std::size_t i = 0; i < n_examples; ++i) {
    auto tokens = grammar.sample(rng, len(rng));
    TokenSequence s;
    s.x.assign(tokens.begin(), tokens.begin() + 1);
    s.y.assign(tokens.begin() + 1, tokens.end());
    task.examples.push_back(std::move(s));
  }
  return task;
}

TaskDataset make_topic_task(const ModelConfig& cfg, const MarkovGrammar& grammar,
                            const TopicTaskSpec& spec) {
  if (spec.n_labels < 2) throw ArgumentError("make_topic_task: need at least 2 labels");
  if (grammar.n_tokens() + spec.n_labels > cfg.vocab) {
    throw ArgumentError("make_topic_task: grammar tokens and label tokens exceed the vocabulary");
  }
  if (spec.n_labels * spec.topic_words > grammar.n_tokens()) {
    throw ArgumentError("make_topic_task: not enough grammar tokens for disjoint topic words");
  }
  if (spec.min_len < 1 || spec.max_len < spec.min_len) {
    throw ArgumentError("make_topic_task: need 1 <= min_len <= max_len");
  }
  std::mt19937_64 rng(spec.seed);
  std::vector<int> pool(grammar.n_tokens());
  std::iota(pool.begin(), pool.end(), 0);
  std::shuffle(pool.begin(), pool.end(), rng);

  std::uniform_int_distribution<std::size_t> len(spec.min_len, spec.max_len);
  std::uniform_int_distribution<std::size_t> word(0, spec.topic_words - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TaskDataset task;
  task.name = "topic";
  for (std::size_t i = 0; i < spec.n_examples; ++i) {
    const std::size_t label = i % spec.n_labels;
    auto tokens = grammar.sample(rng, len(rng));
    for (int& t : tokens) {
      if (unit(rng) < spec.topic_rate) t = pool[label * spec.topic_words + word(rng)];
    }
    TokenSequence s;
    s.x = std::move(tokens);
    s.y = {static_cast<int>(cfg.vocab - spec.n_labels + label)};
    task.examples.push_back(std::move(s));
  }
  return task;
}

std::vector<std::vector<int>> make_sentences(const MarkovGrammar& grammar, std::size_t n,
                                             std::size_t min_len, std::size_t max_len,
                                             std::uint64_t seed) {
  if (min_len < 1 || max_len < min_len) {
    throw ArgumentError("make_sentences: need 1 <= min_len <= max_len");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(grammar.sample(rng, len(rng)));
  return out;
}

TaskDataset load_task(const std::filesystem::path& path) {
  const json j = read_json(path);
  if (!j.is_object() || !j.contains("examples")) {
    throw FormatError(path.string() + ": expected an object with an \"examples\" array");
  }
  TaskDataset task;
  task.name = j.value("name", path.stem().string());
  for (const auto& e : j.at("examples")) {
    if (!e.contains("x") || !e.contains("y")) {
      throw FormatError(path.string() + ": every example needs \"x\" and \"y\"");
    }
    task.examples.push_back({int_list(e.at("x"), "x"), int_list(e.at("y"), "y")});
  }
  return task;
}

void save_task(const TaskDataset& task, const std::filesystem::path& path) {
  json examples = json::array();
  for (const auto& e : task.examples) examples.push_back({{"x", e.x}, {"y", e.y}});
  write_json({{"name", task.name}, {"examples", examples}}, path);
}

SentenceManifest load_sentences(const std::filesystem::path& path) {
  const json j = read_json(path);
  if (!j.is_object() || !j.contains("sentences")) {
    throw FormatError(path.string() + ": expected an object with a \"sentences\" array");
  }
  SentenceManifest m;
  m.run_id = j.value("run_id", std::string("run-01"));
  double last = -1.0;
  for (const auto& s : j.at("sentences")) {
    Sentence sentence;
    sentence.tokens = int_list(s.at("tokens"), "tokens");
    sentence.onset_s = s.at("onset_s").get<double>();
    sentence.duration_s = s.at("duration_s").get<double>();
    if (sentence.tokens.empty()) {
      throw ArgumentError(path.string() + ": sentence " + std::to_string(m.sentences.size()) +
                          " has no tokens");
    }
    if (sentence.onset_s < last) {
      throw ArgumentError(path.string() + ": sentence onsets are not sorted");
    }
    last = sentence.onset_s;
    m.sentences.push_back(std::move(sentence));
  }
  return m;
}

void save_sentences(const SentenceManifest& manifest, const std::filesystem::path& path) {
  json sentences = json::array();
  for (const auto& s : manifest.sentences) {
    sentences.push_back(
        {{"tokens", s.tokens}, {"onset_s", s.onset_s}, {"duration_s", s.duration_s}});
  }
  write_json({{"run_id", manifest.run_id}, {"sentences", sentences}}, path);
}

SentenceManifest schedule_sentences(const std::vector<std::vector<int>>& sentences,
                                    double min_duration_s, double max_duration_s,
                                    double min_gap_s, double max_gap_s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SentenceManifest m;
  double t = min_gap_s + unit(rng) * (max_gap_s - min_gap_s);
  for (const auto& tokens : sentences) {
    Sentence s;
    s.tokens = tokens;
    s.onset_s = t;
    s.duration_s = min_duration_s + unit(rng) * (max_duration_s - min_duration_s);
    t += s.duration_s + min_gap_s + unit(rng) * (max_gap_s - min_gap_s);
    m.sentences.push_back(std::move(s));
  }
  return m;
}

}  // namespace voxelenc::lm
