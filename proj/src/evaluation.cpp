// Apache License, Version 2.0, refer to LICENSE.txt
#include "sbtm/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <stdexcept>
#include <thread>

namespace sbtm {

CooccurrenceStats build_cooccurrence(const std::vector<BowVector>& docs, int vocab_size) {
  CooccurrenceStats stats;
  stats.doc_count = static_cast<int64_t>(docs.size());
  stats.word_doc_freq.assign(static_cast<size_t>(vocab_size), 0);
  for (const auto& doc : docs) {
    for (size_t i = 0; i < doc.entries.size(); ++i) {
      const int wi = doc.entries[i].first;
      ++stats.word_doc_freq[static_cast<size_t>(wi)];
      for (size_t j = i + 1; j < doc.entries.size(); ++j)
        ++stats.joint_doc_freq[CooccurrenceStats::pair_key(wi, doc.entries[j].first)];
    }
  }
  return stats;
}

double npmi(const CooccurrenceStats& stats, int wi, int wj) {
  if (stats.doc_count <= 0) throw std::invalid_argument("npmi: empty reference corpus");
  const int64_t fi = stats.word_doc_freq.at(static_cast<size_t>(wi));
  const int64_t fj = stats.word_doc_freq.at(static_cast<size_t>(wj));
  if (fi == 0 || fj == 0)
    throw std::invalid_argument("npmi: word " + std::to_string(fi == 0 ? wi : wj) +
                                " absent from the reference corpus");
  const int64_t joint = stats.joint(wi, wj);
  if (joint == 0) return -1.0;  // never co-occur: the limit of the ratio
  const double n = static_cast<double>(stats.doc_count);
  const double pij = static_cast<double>(joint) / n;
  if (pij >= 1.0) return 1.0;  // co-occur in every document
  const double pi = static_cast<double>(fi) / n;
  const double pj = static_cast<double>(fj) / n;
  return std::log(pij / (pi * pj)) / (-std::log(pij));
}

double topic_coherence(const std::vector<std::vector<int>>& topics,
                       const CooccurrenceStats& stats) {
  if (topics.empty()) throw std::invalid_argument("topic_coherence: no topics");
  double total = 0.0;
  for (const auto& words : topics) {
    if (words.size() < 2) throw std::invalid_argument("topic_coherence: need at least 2 words");
    double sum = 0.0;
    int pairs = 0;
    for (size_t i = 0; i < words.size(); ++i)
      for (size_t j = i + 1; j < words.size(); ++j) {
        sum += npmi(stats, words[i], words[j]);
        ++pairs;
      }
    total += sum / pairs;
  }
  return total / static_cast<double>(topics.size());
}

double topic_diversity(const std::vector<std::vector<int>>& topics) {
  if (topics.empty()) throw std::invalid_argument("topic_diversity: no topics");
  std::set<int> unique;
  size_t total = 0;
  for (const auto& words : topics) {
    unique.insert(words.begin(), words.end());
    total += words.size();
  }
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

namespace {

int thread_budget() {
  if (const char* env = std::getenv("SBTM_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

}  // namespace

double perplexity(TopicModel& model, const std::vector<BowVector>& docs,
                  const std::vector<int>& slices) {
  if (docs.empty()) throw std::invalid_argument("perplexity: no documents");
  Tensor eta;
  const Tensor* eta_ptr = nullptr;
  if (is_dynamic(model.config.kind)) {
    if (slices.size() != docs.size())
      throw std::invalid_argument("perplexity: dynamic model needs one slice per document");
    eta = eta_means(model);
    eta_ptr = &eta;
  }

  const int V = model.vocab_size;
  auto score_range = [&](size_t lo, size_t hi, double& loglik, int64_t& tokens, int& used) {
    std::vector<double> counts(static_cast<size_t>(V));
    std::vector<double> norm(static_cast<size_t>(V));
    for (size_t i = lo; i < hi; ++i) {
      if (docs[i].length <= 0) continue;  // excluded: no in-vocabulary tokens
      std::fill(counts.begin(), counts.end(), 0.0);
      std::fill(norm.begin(), norm.end(), 0.0);
      for (const auto& [idx, cnt] : docs[i].entries) {
        counts[static_cast<size_t>(idx)] = cnt;
        norm[static_cast<size_t>(idx)] =
            static_cast<double>(cnt) / static_cast<double>(docs[i].length);
      }
      DocScore s =
          score_document(model, counts, norm, slices.empty() ? 0 : slices[i], eta_ptr);
      loglik += s.recon - s.kl;
      tokens += docs[i].length;
      ++used;
    }
  };

  const int threads = std::min<int>(thread_budget(), static_cast<int>(docs.size()));
  double loglik = 0.0;
  int64_t tokens = 0;
  int used = 0;
  if (threads <= 1) {
    score_range(0, docs.size(), loglik, tokens, used);
  } else {
    // Fixed chunking and ordered reduction keep the result deterministic.
    std::vector<double> lls(static_cast<size_t>(threads), 0.0);
    std::vector<int64_t> toks(static_cast<size_t>(threads), 0);
    std::vector<int> useds(static_cast<size_t>(threads), 0);
    std::vector<std::thread> pool;
    const size_t chunk = (docs.size() + static_cast<size_t>(threads) - 1) / static_cast<size_t>(threads);
    for (int t = 0; t < threads; ++t) {
      const size_t lo = static_cast<size_t>(t) * chunk;
      const size_t hi = std::min(docs.size(), lo + chunk);
      pool.emplace_back([&, t, lo, hi]() {
        score_range(lo, hi, lls[static_cast<size_t>(t)], toks[static_cast<size_t>(t)],
                    useds[static_cast<size_t>(t)]);
      });
    }
    for (auto& th : pool) th.join();
    for (int t = 0; t < threads; ++t) {
      loglik += lls[static_cast<size_t>(t)];
      tokens += toks[static_cast<size_t>(t)];
      used += useds[static_cast<size_t>(t)];
    }
  }
  if (used == 0 || tokens == 0)
    throw std::invalid_argument("perplexity: every document is empty after vocabulary filtering");
  return std::exp(-loglik / static_cast<double>(tokens));
}

std::string EvalReport::to_json_string() const {
  nlohmann::json j;
  j["perplexity"] = perplexity;
  j["tc"] = tc;
  j["td"] = td;
  j["tq"] = tq;
  j["per_topic_npmi"] = per_topic_npmi;
  j["detected_topics"] = detected_topics;
  j["capacity"] = capacity;
  j["mode"] = mode;
  return j.dump();
}

EvalReport evaluate(TopicModel& model, const std::vector<BowVector>& heldout,
                    const std::vector<int>& heldout_slices,
                    const std::vector<BowVector>& reference, const EvalOptions& options) {
  EvalReport report;
  report.capacity = model.config.n_topics;
  report.perplexity = perplexity(model, heldout, heldout_slices);

  const int last_slice = is_dynamic(model.config.kind) ? model.n_slices - 1 : 0;
  std::vector<std::vector<int>> coherence_topics;
  std::vector<std::vector<int>> diversity_topics;
  for (int k = 0; k < model.config.n_topics; ++k) {
    std::vector<int> topc, topd;
    for (const auto& [w, p] : topic_words(model, k, last_slice, options.coherence_top_n))
      topc.push_back(w);
    for (const auto& [w, p] : topic_words(model, k, last_slice, options.diversity_top_n))
      topd.push_back(w);
    coherence_topics.push_back(std::move(topc));
    diversity_topics.push_back(std::move(topd));
  }

  const CooccurrenceStats stats = build_cooccurrence(reference, model.vocab_size);
  for (const auto& words : coherence_topics) {
    double sum = 0.0;
    int pairs = 0;
    for (size_t i = 0; i < words.size(); ++i)
      for (size_t j = i + 1; j < words.size(); ++j) {
        sum += npmi(stats, words[i], words[j]);
        ++pairs;
      }
    report.per_topic_npmi.push_back(sum / pairs);
  }
  report.tc = topic_coherence(coherence_topics, stats);
  report.td = topic_diversity(diversity_topics);
  report.tq = topic_quality(report.tc, report.td);
  report.detected_topics = static_cast<int>(
      effective_topics(model, heldout, heldout_slices, options.effective_topic_threshold).size());
  return report;
}

}  // namespace sbtm
