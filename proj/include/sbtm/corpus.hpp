// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "sbtm/rng.hpp"

namespace sbtm {

// Calendar date, day resolution; enough for month/year slicing.
struct Date {
  int year = 0;
  int month = 1;
  int day = 1;

  static Date parse(const std::string& iso);  // YYYY-MM-DD
  std::string to_string() const;
  auto operator<=>(const Date&) const = default;
};

struct Document {
  std::vector<std::string> tokens;
  std::optional<Date> timestamp;
  std::string source_id;
};

struct Vocabulary {
  std::unordered_map<std::string, int> token_to_index;
  std::vector<std::string> index_to_token;
  std::vector<int64_t> doc_freq;  // per token, same order as index_to_token

  int size() const { return static_cast<int>(index_to_token.size()); }
  std::optional<int> lookup(const std::string& token) const;
  uint64_t hash() const;  // FNV-1a over tokens in index order
};

struct BowVector {
  std::vector<std::pair<int, int>> entries;  // (index, count), indices increasing
  int64_t length = 0;                        // sum of counts

  bool empty() const { return entries.empty(); }
};

struct TimeSlicedCorpus {
  // documents per slice, as indices into the source document list; slice t
  // is slices[t-1].
  std::vector<std::vector<int>> slices;
  std::vector<std::vector<double>> slice_bow;  // per-slice normalized aggregate, length V
  std::vector<std::pair<Date, Date>> intervals;  // inclusive [first, last] day per slice
  int T = 0;
};

struct CorpusSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
  std::vector<double> bin_edges;
  std::vector<std::pair<int, int>> merged_bins;  // (from, into) merges of sparse strata
};

struct PoissonLengthFit {
  double lambda = 0.0;
  double ks_statistic = 0.0;
  double fit_fraction = 0.0;
  int64_t tail_cutoff = 0;
};

enum class SliceGranularity { month, year, custom };

Vocabulary build_vocabulary(const std::vector<Document>& docs, int min_doc_freq,
                            const std::set<std::string>* stopwords = nullptr,
                            bool lowercase = false);

BowVector to_bow(const Document& doc, const Vocabulary& vocab);

std::vector<double> normalize_bow(const BowVector& bow, int vocab_size);

// lambda is the mean token count; the KS statistic is the sup distance
// between the empirical CDF and the fitted Poisson CDF over the integer
// support; fit_fraction is the share of documents at or below the point
// where the fitted Poisson has effectively exhausted its mass.
PoissonLengthFit fit_poisson_length(const std::vector<Document>& docs);

// Number of histogram bins by Doane's formula on raw token counts.
int doane_bins(const std::vector<int64_t>& values);

// Documents longer than max_length (0 = no limit) are dropped before
// stratification. Bins with fewer documents than split classes are merged
// into their right neighbor (leftward for the last bin) and recorded.
CorpusSplit stratified_split(const std::vector<Document>& docs, double train_ratio,
                             double val_ratio, double test_ratio, int64_t max_length, Rng& rng);

TimeSlicedCorpus time_slice(const std::vector<Document>& docs, const Vocabulary& vocab,
                            SliceGranularity granularity,
                            const std::vector<Date>& custom_edges = {});

// One document per line: `timestamp<TAB>token token ...` with an empty
// timestamp field (or no tab at all) for static corpora. Malformed
// timestamps raise with the 1-based line number.
std::vector<Document> read_corpus_file(const std::string& path);

std::set<std::string> read_token_set_file(const std::string& path);  // one token per line

void write_vocabulary_file(const Vocabulary& vocab, const std::string& path);
Vocabulary read_vocabulary_file(const std::string& path);

}  // namespace sbtm
