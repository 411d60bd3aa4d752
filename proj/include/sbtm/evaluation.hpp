// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sbtm/corpus.hpp"
#include "sbtm/model.hpp"

namespace sbtm {

// Document-level binary co-occurrence counts over a reference corpus; a pair
// counts once per document regardless of multiplicity.
struct CooccurrenceStats {
  int64_t doc_count = 0;
  std::vector<int64_t> word_doc_freq;                    // per vocabulary index
  std::unordered_map<uint64_t, int64_t> joint_doc_freq;  // key packs (lo, hi)

  static uint64_t pair_key(int i, int j) {
    const uint64_t lo = static_cast<uint64_t>(std::min(i, j));
    const uint64_t hi = static_cast<uint64_t>(std::max(i, j));
    return (lo << 32) | hi;
  }
  int64_t joint(int i, int j) const {
    auto it = joint_doc_freq.find(pair_key(i, j));
    return it == joint_doc_freq.end() ? 0 : it->second;
  }
};

CooccurrenceStats build_cooccurrence(const std::vector<BowVector>& docs, int vocab_size);

// Normalized pointwise mutual information of one word pair in [-1, 1]; a
// pair that never co-occurs scores -1, a pair that always co-occurs +1.
double npmi(const CooccurrenceStats& stats, int wi, int wj);

// Mean over topics of the mean NPMI over the C(n,2) unordered pairs of each
// topic's top-n words.
double topic_coherence(const std::vector<std::vector<int>>& topics,
                       const CooccurrenceStats& stats);

double topic_diversity(const std::vector<std::vector<int>>& topics);

inline double topic_quality(double tc, double td) { return tc * td; }

// exp(-L / tokens) where L sums each document's deterministic ELBO surrogate
// (reconstruction minus document-level KL at the encoder means). Documents
// with no in-vocabulary tokens are skipped; slices are required for dynamic
// models. Parallelism over documents is capped by SBTM_THREADS.
double perplexity(TopicModel& model, const std::vector<BowVector>& docs,
                  const std::vector<int>& slices = {});

struct EvalReport {
  double perplexity = 0.0;
  double tc = 0.0;
  double td = 0.0;
  double tq = 0.0;
  std::vector<double> per_topic_npmi;
  int detected_topics = 0;
  int capacity = 0;
  std::string mode = "full_document_elbo";

  std::string to_json_string() const;  // canonical keys: perplexity, tc, td, tq, ...
};

struct EvalOptions {
  int coherence_top_n = 10;
  int diversity_top_n = 25;
  double effective_topic_threshold = 0.01;
};

// Full quantitative report: perplexity on the held-out documents, coherence
// against the reference corpus, diversity over the model's topics.
EvalReport evaluate(TopicModel& model, const std::vector<BowVector>& heldout,
                    const std::vector<int>& heldout_slices,
                    const std::vector<BowVector>& reference, const EvalOptions& options);

}  // namespace sbtm
