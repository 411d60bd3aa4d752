// Apache License, Version 2.0, refer to LICENSE.txt
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "sbtm/corpus.hpp"

using namespace sbtm;

namespace {

Document doc(std::vector<std::string> tokens, const char* ts = nullptr) {
  Document d;
  d.tokens = std::move(tokens);
  if (ts) d.timestamp = Date::parse(ts);
  return d;
}

}  // namespace

TEST_CASE("build_vocabulary: document frequency filter") {
  std::vector<Document> docs = {doc({"a", "b"}), doc({"b", "c"}), doc({"b"})};
  Vocabulary v = build_vocabulary(docs, 2);
  CHECK(v.size() == 1);
  CHECK(v.index_to_token[0] == "b");
  CHECK(v.doc_freq[0] == 3);
}

TEST_CASE("build_vocabulary: stopwords removed before counting") {
  std::vector<Document> docs = {doc({"a", "b"}), doc({"b", "c"})};
  std::set<std::string> stop = {"b"};
  Vocabulary v = build_vocabulary(docs, 1, &stop);
  CHECK(v.size() == 2);
  CHECK(v.lookup("a").has_value());
  CHECK(v.lookup("c").has_value());
  CHECK(!v.lookup("b").has_value());
}

TEST_CASE("build_vocabulary: lowercase flag, empty vocabulary error, ordering") {
  std::vector<Document> docs = {doc({"Tire", "tire"}), doc({"tire", "Wheel"})};
  Vocabulary v = build_vocabulary(docs, 2, nullptr, true);
  CHECK(v.size() == 1);
  CHECK(v.index_to_token[0] == "tire");

  // Case preserved by default; "Tire" and "tire" count separately.
  CHECK_THROWS(build_vocabulary(docs, 3));

  // Deterministic ordering: doc_freq descending, ties lexicographic.
  std::vector<Document> docs2 = {doc({"z", "m", "a"}), doc({"z", "a"}), doc({"z"})};
  Vocabulary v2 = build_vocabulary(docs2, 1);
  CHECK(v2.index_to_token == std::vector<std::string>{"z", "a", "m"});
  Vocabulary v3 = build_vocabulary(docs2, 1);
  CHECK(v2.index_to_token == v3.index_to_token);  // idempotent rebuild
}

TEST_CASE("to_bow: counting, OOV drop, empty flag") {
  std::vector<Document> docs = {doc({"a", "x"}), doc({"b", "x"}), doc({"c", "x"})};
  Vocabulary v = build_vocabulary(docs, 1);
  // v: x first (df 3), then a, b, c.
  BowVector bow = to_bow(doc({"b", "b", "c", "z"}), v);
  CHECK(bow.length == 3);
  CHECK(bow.entries.size() == 2);

  BowVector empty = to_bow(doc({"zzz"}), v);
  CHECK(empty.empty());
  CHECK(empty.length == 0);

  BowVector one = to_bow(doc({"a"}), v);
  CHECK(one.length == 1);
  CHECK(one.entries[0].second == 1);
}

TEST_CASE("normalize_bow") {
  BowVector bow;
  bow.entries = {{1, 2}, {2, 1}};
  bow.length = 3;
  auto p = normalize_bow(bow, 4);
  CHECK(p[0] == 0.0);
  CHECK(p[1] == doctest::Approx(2.0 / 3.0));
  CHECK(p[2] == doctest::Approx(1.0 / 3.0));
  CHECK(p[3] == 0.0);
  CHECK(std::fabs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9);

  BowVector single;
  single.entries = {{0, 5}};
  single.length = 5;
  auto q = normalize_bow(single, 3);
  CHECK(q[0] == doctest::Approx(1.0));

  BowVector quarters;
  quarters.entries = {{0, 1}, {1, 1}, {2, 2}};
  quarters.length = 4;
  auto r = normalize_bow(quarters, 3);
  CHECK(r[0] == doctest::Approx(0.25));
  CHECK(r[2] == doctest::Approx(0.5));

  BowVector empty;
  CHECK_THROWS(normalize_bow(empty, 3));
}

TEST_CASE("fit_poisson_length: degenerate and sampled corpora") {
  std::vector<Document> five(10, doc({"a", "a", "a", "a", "a"}));
  PoissonLengthFit fit = fit_poisson_length(five);
  CHECK(fit.lambda == doctest::Approx(5.0));

  // 1000 seeded Poisson(50) draws: lambda within 2, KS below the 5% critical value.
  Rng rng(123);
  std::vector<Document> docs;
  for (int i = 0; i < 1000; ++i) {
    const int n = rng.poisson(50.0);
    docs.push_back(doc(std::vector<std::string>(static_cast<size_t>(std::max(1, n)), "w")));
  }
  fit = fit_poisson_length(docs);
  CHECK(std::fabs(fit.lambda - 50.0) < 2.0);
  CHECK(fit.ks_statistic < 1.358 / std::sqrt(1000.0));
  CHECK(fit.fit_fraction > 0.99);

  CHECK_THROWS(fit_poisson_length({doc({"a"})}));
}

TEST_CASE("fit_poisson_length recovers lambda within 3 standard errors") {
  for (uint64_t seed : {7ull, 8ull, 9ull}) {
    Rng rng(seed);
    const double lambda0 = 107.9;
    std::vector<Document> docs;
    for (int i = 0; i < 2000; ++i)
      docs.push_back(doc(std::vector<std::string>(static_cast<size_t>(rng.poisson(lambda0)), "w")));
    PoissonLengthFit fit = fit_poisson_length(docs);
    CHECK(std::fabs(fit.lambda - lambda0) <= 3.0 * std::sqrt(lambda0 / 2000.0));
  }
}

TEST_CASE("doane_bins: hand-computed cases") {
  // Symmetric two-point sample, n=20: skewness 0, k = round(1 + log2 20) = 5.
  std::vector<int64_t> bimodal;
  for (int i = 0; i < 10; ++i) bimodal.push_back(100);
  for (int i = 0; i < 10; ++i) bimodal.push_back(400);
  CHECK(doane_bins(bimodal) == 5);

  // n = 96910 and skewness about 0.15 give the 22-bin segmentation used for
  // the length-stratified subsample: 1 + log2(96910) + log2(1 + 0.15/0.00787).
  Rng rng(42);
  std::vector<int64_t> lengths;
  for (int i = 0; i < 96910; ++i) {
    const int64_t l = rng.poisson(107.9);
    lengths.push_back(std::min<int64_t>(l, 450));
  }
  // Inject the mild right tail the real corpus had (skewness near 0.15).
  for (size_t i = 0; i < lengths.size(); i += 40) lengths[i] += 15;
  const size_t n = lengths.size();
  double mean = 0;
  for (auto l : lengths) mean += double(l);
  mean /= double(n);
  double m2 = 0, m3 = 0;
  for (auto l : lengths) {
    const double d = double(l) - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= double(n);
  m3 /= double(n);
  const double g1 = m3 / std::pow(m2, 1.5);
  const double sg = std::sqrt(6.0 * (double(n) - 2) / ((double(n) + 1) * (double(n) + 3)));
  const int expected = static_cast<int>(std::lround(1 + std::log2(double(n)) + std::log2(1 + std::fabs(g1) / sg)));
  CHECK(doane_bins(lengths) == expected);
  CHECK(expected == 22);

  CHECK(doane_bins({5, 5, 5, 5}) == 1);  // zero variance
}

TEST_CASE("stratified_split: single stratum 80/10/10") {
  std::vector<Document> docs(100, doc({"a", "b", "c"}));
  Rng rng(1);
  CorpusSplit split = stratified_split(docs, 0.8, 0.1, 0.1, 0, rng);
  CHECK(split.train.size() == 80);
  CHECK(split.validation.size() == 10);
  CHECK(split.test.size() == 10);
}

TEST_CASE("stratified_split: bimodal per-bin allocation within one document") {
  std::vector<Document> docs;
  for (int i = 0; i < 10; ++i) docs.push_back(doc(std::vector<std::string>(100, "w")));
  for (int i = 0; i < 10; ++i) docs.push_back(doc(std::vector<std::string>(400, "w")));
  Rng rng(3);
  CorpusSplit split = stratified_split(docs, 0.5, 0.25, 0.25, 0, rng);
  // Each mode has 10 docs; targets 5 / 2.5 / 2.5.
  auto count_mode = [&docs](const std::vector<int>& ids, size_t len) {
    int n = 0;
    for (int i : ids)
      if (docs[static_cast<size_t>(i)].tokens.size() == len) ++n;
    return n;
  };
  for (size_t len : {size_t(100), size_t(400)}) {
    CHECK(count_mode(split.train, len) == 5);
    const int val = count_mode(split.validation, len);
    const int test = count_mode(split.test, len);
    CHECK((val == 2 || val == 3));
    CHECK((test == 2 || test == 3));
    CHECK(val + test == 5);
  }
}

TEST_CASE("stratified_split: partition, max_length filter, sparse-bin merge") {
  std::vector<Document> docs;
  Rng lenrng(9);
  for (int i = 0; i < 60; ++i)
    docs.push_back(doc(std::vector<std::string>(static_cast<size_t>(5 + lenrng.poisson(20.0)), "w")));
  docs.push_back(doc(std::vector<std::string>(500, "w")));  // over max_length
  Rng rng(5);
  CorpusSplit split = stratified_split(docs, 0.8, 0.1, 0.1, 450, rng);
  std::set<int> all;
  for (int i : split.train) CHECK(all.insert(i).second);
  for (int i : split.validation) CHECK(all.insert(i).second);
  for (int i : split.test) CHECK(all.insert(i).second);
  CHECK(all.size() == 60);               // the filtered doc is in no split
  CHECK(!all.count(60));
  CHECK(split.bin_edges.size() >= 2);
}

TEST_CASE("time_slice: yearly and monthly grouping") {
  std::vector<Document> docs = {doc({"a"}, "1970-03-01"), doc({"b"}, "1971-07-15")};
  Vocabulary v = build_vocabulary(docs, 1);
  TimeSlicedCorpus sliced = time_slice(docs, v, SliceGranularity::year);
  CHECK(sliced.T == 2);
  CHECK(sliced.slices[0].size() == 1);
  CHECK(sliced.slices[1].size() == 1);

  std::vector<Document> month_docs = {doc({"a", "b"}, "2020-05-01"), doc({"b"}, "2020-05-20"),
                                      doc({"b", "b"}, "2020-05-31")};
  Vocabulary mv = build_vocabulary(month_docs, 1);
  TimeSlicedCorpus ms = time_slice(month_docs, mv, SliceGranularity::month);
  CHECK(ms.T == 1);
  // Aggregate counts: b appears 4 times, a once; normalized sums to 1.
  const int bi = *mv.lookup("b"), ai = *mv.lookup("a");
  CHECK(ms.slice_bow[0][static_cast<size_t>(bi)] == doctest::Approx(0.8));
  CHECK(ms.slice_bow[0][static_cast<size_t>(ai)] == doctest::Approx(0.2));
}

TEST_CASE("time_slice: empty interior slices retained, totals conserved") {
  std::vector<Document> docs = {doc({"a"}, "2000-01-10"), doc({"b"}, "2000-04-20"),
                                doc({"a", "b"}, "2000-04-25")};
  Vocabulary v = build_vocabulary(docs, 1);
  TimeSlicedCorpus s = time_slice(docs, v, SliceGranularity::month);
  CHECK(s.T == 4);  // Jan..Apr
  CHECK(s.slices[1].empty());
  CHECK(s.slices[2].empty());
  double zero_sum = 0;
  for (double x : s.slice_bow[1]) zero_sum += x;
  CHECK(zero_sum == 0.0);
  size_t total = 0;
  for (const auto& sl : s.slices) total += sl.size();
  CHECK(total == docs.size());

  std::vector<Document> bad = {doc({"a"}, "2000-01-10"), doc({"b"})};
  CHECK_THROWS_WITH_AS(time_slice(bad, v, SliceGranularity::month), doctest::Contains("1"),
                       std::invalid_argument);
}

TEST_CASE("corpus file round trip and parse errors") {
  const char* path = "corpus_test_fixture.txt";
  {
    std::ofstream out(path);
    out << "2020-01-05\tthe tire was good\n";
    out << "\tstatic doc here\n";
    out << "no tab line either\n";
  }
  auto docs = read_corpus_file(path);
  CHECK(docs.size() == 3);
  CHECK(docs[0].timestamp.has_value());
  CHECK(docs[0].timestamp->year == 2020);
  CHECK(docs[0].tokens.size() == 4);
  CHECK(!docs[1].timestamp.has_value());
  CHECK(docs[1].tokens.size() == 3);
  CHECK(!docs[2].timestamp.has_value());
  CHECK(docs[2].tokens.size() == 4);

  {
    std::ofstream out(path);
    out << "2020-01-05\tok line\n";
    out << "2020-13-05\tbad month\n";
  }
  CHECK_THROWS_WITH_AS(read_corpus_file(path), doctest::Contains("line 2"), std::runtime_error);
  std::remove(path);
}

TEST_CASE("vocabulary file export/import preserves order, hash stable") {
  std::vector<Document> docs = {doc({"b", "a"}), doc({"b", "c"})};
  Vocabulary v = build_vocabulary(docs, 1);
  const char* path = "vocab_test_fixture.txt";
  write_vocabulary_file(v, path);
  Vocabulary loaded = read_vocabulary_file(path);
  CHECK(loaded.index_to_token == v.index_to_token);
  CHECK(loaded.hash() == v.hash());
  std::remove(path);
}
