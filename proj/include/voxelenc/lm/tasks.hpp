#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "voxelenc/lm/model.hpp"

namespace voxelenc::lm {

struct TaskDataset {
  std::string name;
  std::vector<TokenSequence> examples;

  void validate(const ModelConfig& cfg) const;
};

// First-order Markov chain over token ids [0, n_tokens): every token has
// `branching` successors chosen at construction, picked uniformly when
// sampling.
class MarkovGrammar {
 public:
  MarkovGrammar(std::size_t n_tokens, std::uint64_t seed, std::size_t branching = 4);

  std::vector<int> sample(std::mt19937_64& rng, std::size_t length) const;
  std::size_t n_tokens() const noexcept { return next_.size(); }

 private:
  std::vector<std::vector<int>> next_;
};

// Language-modelling corpus: x is the first token, y the rest.
TaskDataset make_lm_corpus(const MarkovGrammar& grammar, std::size_t n_examples,
                           std::size_t min_len, std::size_t max_len, std::uint64_t seed);

struct TopicTaskSpec {
  std::size_t n_examples = 200;
  std::size_t n_labels = 4;
  std::size_t topic_words = 16;  // per label, disjoint
  std::size_t min_len = 6;
  std::size_t max_len = 10;
  double topic_rate = 0.5;  // share of tokens drawn from the topic's words
  std::uint64_t seed = 0;
};

// Sentence classification cast as next-token prediction of a label token.
// Label tokens are the last n_labels ids of the vocabulary.
TaskDataset make_topic_task(const ModelConfig& cfg, const MarkovGrammar& grammar,
                            const TopicTaskSpec& spec);

std::vector<std::vector<int>> make_sentences(const MarkovGrammar& grammar, std::size_t n,
                                             std::size_t min_len, std::size_t max_len,
                                             std::uint64_t seed);

// {"name": ..., "examples": [{"x": [...], "y": [...]}, ...]}
TaskDataset load_task(const std::filesystem::path& path);
void save_task(const TaskDataset& task, const std::filesystem::path& path);

struct Sentence {
  std::vector<int> tokens;
  double onset_s = 0.0;
  double duration_s = 0.0;
};

// {"run_id": ..., "sentences": [{"tokens": [...], "onset_s": t, "duration_s": d}, ...]}
struct SentenceManifest {
  std::string run_id = "run-01";
  std::vector<Sentence> sentences;
};

SentenceManifest load_sentences(const std::filesystem::path& path);
void save_sentences(const SentenceManifest& manifest, const std::filesystem::path& path);

// Lays sentences out back to back with the given duration and gap range.
SentenceManifest schedule_sentences(const std::vector<std::vector<int>>& sentences,
                                    double min_duration_s, double max_duration_s,
                                    double min_gap_s, double max_gap_s, std::uint64_t seed);

}  // namespace voxelenc::lm
