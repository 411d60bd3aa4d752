// Apache License, Version 2.0, refer to LICENSE.txt
#include "sbtm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "sbtm/special.hpp"

namespace sbtm {

namespace {

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static const int d[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : d[m - 1];
}

std::string lower(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
  return out;
}

}  // namespace

Date Date::parse(const std::string& iso) {
  Date d;
  char extra;
  if (std::sscanf(iso.c_str(), "%d-%d-%d%c", &d.year, &d.month, &d.day, &extra) != 3 ||
      iso.size() != 10 || iso[4] != '-' || iso[7] != '-')
    throw std::invalid_argument("Date: expected YYYY-MM-DD, got '" + iso + "'");
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > days_in_month(d.year, d.month))
    throw std::invalid_argument("Date: out of range '" + iso + "'");
  return d;
}

std::string Date::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

std::optional<int> Vocabulary::lookup(const std::string& token) const {
  auto it = token_to_index.find(token);
  if (it == token_to_index.end()) return std::nullopt;
  return it->second;
}

uint64_t Vocabulary::hash() const {
  uint64_t h = 14695981039346656037ull;
  auto mix = [&h](char c) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  };
  for (const auto& tok : index_to_token) {
    for (char c : tok) mix(c);
    mix('\n');
  }
  return h;
}

Vocabulary build_vocabulary(const std::vector<Document>& docs, int min_doc_freq,
                            const std::set<std::string>* stopwords, bool lowercase) {
  if (min_doc_freq < 1) throw std::invalid_argument("build_vocabulary: min_doc_freq must be >= 1");
  std::unordered_map<std::string, int64_t> df;
  std::set<std::string> seen;
  for (const auto& doc : docs) {
    seen.clear();
    for (const auto& raw : doc.tokens) {
      const std::string tok = lowercase ? lower(raw) : raw;
      if (stopwords && stopwords->count(tok)) continue;
      if (seen.insert(tok).second) ++df[tok];
    }
  }
  std::vector<std::pair<std::string, int64_t>> kept;
  for (const auto& [tok, freq] : df)
    if (freq >= min_doc_freq) kept.emplace_back(tok, freq);
  if (kept.empty())
    throw std::runtime_error("build_vocabulary: no token meets min_doc_freq; training impossible");
  // Deterministic order: document frequency descending, then lexicographic.
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [tok, freq] : kept) {
    vocab.token_to_index[tok] = static_cast<int>(vocab.index_to_token.size());
    vocab.index_to_token.push_back(tok);
    vocab.doc_freq.push_back(freq);
  }
  return vocab;
}

BowVector to_bow(const Document& doc, const Vocabulary& vocab) {
  std::map<int, int> counts;
  for (const auto& tok : doc.tokens) {
    auto idx = vocab.lookup(tok);
    if (idx) ++counts[*idx];
  }
  BowVector bow;
  for (const auto& [idx, cnt] : counts) {
    bow.entries.emplace_back(idx, cnt);
    bow.length += cnt;
  }
  return bow;
}

std::vector<double> normalize_bow(const BowVector& bow, int vocab_size) {
  if (bow.length <= 0) throw std::invalid_argument("normalize_bow: empty bag of words");
  std::vector<double> out(vocab_size, 0.0);
  for (const auto& [idx, cnt] : bow.entries)
    out[idx] = static_cast<double>(cnt) / static_cast<double>(bow.length);
  return out;
}

PoissonLengthFit fit_poisson_length(const std::vector<Document>& docs) {
  if (docs.size() < 2) throw std::invalid_argument("fit_poisson_length: need at least 2 documents");
  std::vector<int64_t> lengths;
  lengths.reserve(docs.size());
  int64_t total = 0;
  for (const auto& d : docs) {
    lengths.push_back(static_cast<int64_t>(d.tokens.size()));
    total += lengths.back();
  }
  PoissonLengthFit fit;
  fit.lambda = static_cast<double>(total) / static_cast<double>(docs.size());

  const int64_t max_len = *std::max_element(lengths.begin(), lengths.end());
  std::vector<int64_t> counts(static_cast<size_t>(max_len) + 1, 0);
  for (int64_t l : lengths) ++counts[static_cast<size_t>(l)];
  // Poisson CDF at k is Q(k+1, lambda) = 1 - P(k+1, lambda).
  auto pois_cdf = [&](int64_t k) {
    return 1.0 - reg_inc_gamma(static_cast<double>(k) + 1.0, fit.lambda);
  };
  double d_max = 0.0;
  int64_t cum = 0;
  for (int64_t k = 0; k <= max_len; ++k) {
    cum += counts[static_cast<size_t>(k)];
    const double ecdf = static_cast<double>(cum) / static_cast<double>(lengths.size());
    d_max = std::max(d_max, std::fabs(ecdf - pois_cdf(k)));
  }
  fit.ks_statistic = d_max;

  int64_t cutoff = static_cast<int64_t>(fit.lambda);
  while (pois_cdf(cutoff) < 1.0 - 1e-6) ++cutoff;
  fit.tail_cutoff = cutoff;
  int64_t inside = 0;
  for (int64_t l : lengths)
    if (l <= cutoff) ++inside;
  fit.fit_fraction = static_cast<double>(inside) / static_cast<double>(lengths.size());
  return fit;
}

int doane_bins(const std::vector<int64_t>& values) {
  const size_t n = values.size();
  if (n < 3) return 1;
  double mean = 0.0;
  for (int64_t v : values) mean += static_cast<double>(v);
  mean /= static_cast<double>(n);
  double m2 = 0.0, m3 = 0.0;
  for (int64_t v : values) {
    const double d = static_cast<double>(v) - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  if (m2 <= 0.0) return 1;
  const double g1 = m3 / std::pow(m2, 1.5);
  const double nn = static_cast<double>(n);
  const double sigma_g1 = std::sqrt(6.0 * (nn - 2.0) / ((nn + 1.0) * (nn + 3.0)));
  const double k = 1.0 + std::log2(nn) + std::log2(1.0 + std::fabs(g1) / sigma_g1);
  return std::max(1, static_cast<int>(std::lround(k)));
}

CorpusSplit stratified_split(const std::vector<Document>& docs, double train_ratio,
                             double val_ratio, double test_ratio, int64_t max_length, Rng& rng) {
  if (std::fabs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw std::invalid_argument("stratified_split: ratios must sum to 1");
  std::vector<int> kept;
  std::vector<int64_t> lengths;
  for (size_t i = 0; i < docs.size(); ++i) {
    const int64_t len = static_cast<int64_t>(docs[i].tokens.size());
    if (max_length > 0 && len > max_length) continue;
    kept.push_back(static_cast<int>(i));
    lengths.push_back(len);
  }
  if (kept.empty())
    throw std::invalid_argument("stratified_split: no documents left after length filter");

  const int n_bins = doane_bins(lengths);
  const auto [lo_it, hi_it] = std::minmax_element(lengths.begin(), lengths.end());
  const double lo = static_cast<double>(*lo_it), hi = static_cast<double>(*hi_it);

  CorpusSplit split;
  for (int b = 0; b <= n_bins; ++b)
    split.bin_edges.push_back(lo + (hi - lo) * static_cast<double>(b) / n_bins);

  std::vector<std::vector<int>> bins(static_cast<size_t>(n_bins));
  for (size_t i = 0; i < kept.size(); ++i) {
    int b = hi > lo ? static_cast<int>((static_cast<double>(lengths[i]) - lo) / (hi - lo) * n_bins)
                    : 0;
    b = std::min(b, n_bins - 1);
    bins[static_cast<size_t>(b)].push_back(kept[i]);
  }

  // Strata too small to carry all three split classes are merged rightward;
  // a sparse final bin folds into its nearest populated left neighbor.
  for (int b = 0; b + 1 < n_bins; ++b) {
    auto& bin = bins[static_cast<size_t>(b)];
    if (!bin.empty() && bin.size() < 3) {
      auto& next = bins[static_cast<size_t>(b) + 1];
      next.insert(next.end(), bin.begin(), bin.end());
      bin.clear();
      split.merged_bins.emplace_back(b, b + 1);
    }
  }
  if (n_bins > 1) {
    auto& last = bins[static_cast<size_t>(n_bins) - 1];
    if (!last.empty() && last.size() < 3) {
      for (int b = n_bins - 2; b >= 0; --b) {
        if (!bins[static_cast<size_t>(b)].empty()) {
          auto& dst = bins[static_cast<size_t>(b)];
          dst.insert(dst.end(), last.begin(), last.end());
          last.clear();
          split.merged_bins.emplace_back(n_bins - 1, b);
          break;
        }
      }
    }
  }

  for (auto& bin : bins) {
    if (bin.empty()) continue;
    // Deterministic Fisher-Yates from the caller's generator.
    for (size_t i = bin.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(rng.uniform() * static_cast<double>(i));
      std::swap(bin[i - 1], bin[std::min(j, i - 1)]);
    }
    const double nb = static_cast<double>(bin.size());
    const double targets[3] = {nb * train_ratio, nb * val_ratio, nb * test_ratio};
    int alloc[3];
    int used = 0;
    for (int c = 0; c < 3; ++c) {
      alloc[c] = static_cast<int>(std::floor(targets[c]));
      used += alloc[c];
    }
    // Largest remainder keeps every class within one document of its target.
    std::vector<std::pair<double, int>> rem;
    for (int c = 0; c < 3; ++c) rem.emplace_back(targets[c] - std::floor(targets[c]), c);
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int r = 0; used < static_cast<int>(bin.size()); ++r, ++used) ++alloc[rem[static_cast<size_t>(r % 3)].second];
    size_t pos = 0;
    for (int c = 0; c < 3; ++c) {
      auto& dst = c == 0 ? split.train : (c == 1 ? split.validation : split.test);
      for (int k = 0; k < alloc[c]; ++k) dst.push_back(bin[pos++]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

TimeSlicedCorpus time_slice(const std::vector<Document>& docs, const Vocabulary& vocab,
                            SliceGranularity granularity, const std::vector<Date>& custom_edges) {
  std::string offenders;
  int n_bad = 0;
  for (size_t i = 0; i < docs.size(); ++i) {
    if (!docs[i].timestamp) {
      ++n_bad;
      if (n_bad <= 10) offenders += (offenders.empty() ? "" : ", ") + std::to_string(i);
    }
  }
  if (n_bad > 0)
    throw std::invalid_argument("time_slice: " + std::to_string(n_bad) +
                                " documents lack timestamps (indices " + offenders + ")");
  if (docs.empty()) throw std::invalid_argument("time_slice: empty corpus");

  TimeSlicedCorpus out;
  if (granularity == SliceGranularity::custom) {
    if (custom_edges.size() < 2)
      throw std::invalid_argument("time_slice: custom granularity needs at least 2 edges");
    for (size_t i = 0; i + 1 < custom_edges.size(); ++i) {
      if (!(custom_edges[i] < custom_edges[i + 1]))
        throw std::invalid_argument("time_slice: custom edges must be strictly increasing");
      Date last = custom_edges[i + 1];
      // Half-open [edge_i, edge_{i+1}) except the final slice, which is closed.
      if (i + 2 < custom_edges.size()) {
        if (last.day > 1) {
          --last.day;
        } else if (last.month > 1) {
          --last.month;
          last.day = days_in_month(last.year, last.month);
        } else {
          --last.year;
          last.month = 12;
          last.day = 31;
        }
      }
      out.intervals.emplace_back(custom_edges[i], last);
    }
  } else {
    Date lo = *docs[0].timestamp, hi = *docs[0].timestamp;
    for (const auto& d : docs) {
      lo = std::min(lo, *d.timestamp);
      hi = std::max(hi, *d.timestamp);
    }
    if (granularity == SliceGranularity::year) {
      for (int y = lo.year; y <= hi.year; ++y)
        out.intervals.emplace_back(Date{y, 1, 1}, Date{y, 12, 31});
    } else {
      int y = lo.year, m = lo.month;
      while (y < hi.year || (y == hi.year && m <= hi.month)) {
        out.intervals.emplace_back(Date{y, m, 1}, Date{y, m, days_in_month(y, m)});
        if (++m > 12) {
          m = 1;
          ++y;
        }
      }
    }
  }
  out.T = static_cast<int>(out.intervals.size());
  out.slices.assign(static_cast<size_t>(out.T), {});

  for (size_t i = 0; i < docs.size(); ++i) {
    const Date& ts = *docs[i].timestamp;
    int t = -1;
    for (int s = 0; s < out.T; ++s) {
      if (!(ts < out.intervals[static_cast<size_t>(s)].first) &&
          !(out.intervals[static_cast<size_t>(s)].second < ts)) {
        t = s;
        break;
      }
    }
    if (t < 0)
      throw std::invalid_argument("time_slice: document " + std::to_string(i) + " at " +
                                  ts.to_string() + " falls outside the slice edges");
    out.slices[static_cast<size_t>(t)].push_back(static_cast<int>(i));
  }

  out.slice_bow.assign(static_cast<size_t>(out.T), std::vector<double>(vocab.size(), 0.0));
  for (int t = 0; t < out.T; ++t) {
    auto& w = out.slice_bow[static_cast<size_t>(t)];
    double total = 0.0;
    for (int di : out.slices[static_cast<size_t>(t)]) {
      const BowVector bow = to_bow(docs[static_cast<size_t>(di)], vocab);
      for (const auto& [idx, cnt] : bow.entries) {
        w[static_cast<size_t>(idx)] += cnt;
        total += cnt;
      }
    }
    if (total > 0.0)
      for (double& x : w) x /= total;
  }
  return out;
}

std::vector<Document> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_corpus_file: cannot open " + path);
  std::vector<Document> docs;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Document doc;
    std::string body = line;
    const size_t tab = line.find('\t');
    if (tab != std::string::npos) {
      const std::string ts = line.substr(0, tab);
      body = line.substr(tab + 1);
      if (!ts.empty()) {
        try {
          doc.timestamp = Date::parse(ts);
        } catch (const std::exception& e) {
          throw std::runtime_error("line " + std::to_string(line_no) + ": " + e.what());
        }
      }
    }
    std::istringstream ss(body);
    std::string tok;
    while (ss >> tok) doc.tokens.push_back(tok);
    if (doc.tokens.empty())
      throw std::runtime_error("line " + std::to_string(line_no) + ": no tokens");
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::set<std::string> read_token_set_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_token_set_file: cannot open " + path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

void write_vocabulary_file(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_vocabulary_file: cannot open " + path);
  for (const auto& tok : vocab.index_to_token) out << tok << '\n';
}

Vocabulary read_vocabulary_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_vocabulary_file: cannot open " + path);
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    vocab.token_to_index[line] = static_cast<int>(vocab.index_to_token.size());
    vocab.index_to_token.push_back(line);
    vocab.doc_freq.push_back(0);
  }
  return vocab;
}

}  // namespace sbtm
