// Apache License, Version 2.0, refer to LICENSE.txt
//
// Command-line front end: corpus preparation, training, evaluation and
// topic exploration. Every command is deterministic given (config, seed,
// input files); all randomness flows from the single seed.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "sbtm/checkpoint.hpp"
#include "sbtm/corpus.hpp"
#include "sbtm/evaluation.hpp"
#include "sbtm/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sbtm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct RunConfig {
  // data
  std::string input;
  std::string stopwords;
  std::string embeddings;
  int min_doc_freq = 1;
  bool lowercase = false;
  std::string vocab_from = "train";  // or "all"
  int64_t max_length = 0;
  double split_train = 0.8, split_val = 0.1, split_test = 0.1;
  std::string granularity = "none";  // none | month | year
  // eval
  EvalOptions eval;
  std::string reference_split = "train";
  // misc
  std::string out_dir = "out";
  ModelConfig model;

  json to_json() const {
    json j;
    j["data"]["input"] = input;
    j["data"]["stopwords"] = stopwords;
    j["data"]["embeddings"] = embeddings;
    j["data"]["min_doc_freq"] = min_doc_freq;
    j["data"]["lowercase"] = lowercase;
    j["data"]["vocab_from"] = vocab_from;
    j["data"]["max_length"] = max_length;
    j["data"]["split"] = {split_train, split_val, split_test};
    j["data"]["granularity"] = granularity;
    j["eval"]["coherence_top_n"] = eval.coherence_top_n;
    j["eval"]["diversity_top_n"] = eval.diversity_top_n;
    j["eval"]["reference"] = reference_split;
    j["model"] = json::parse(model.to_json_string());
    j["out_dir"] = out_dir;
    return j;
  }
};

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + where + it.key() + "'");
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json j;
  in >> j;
  reject_unknown(j, {"data", "eval", "model", "out_dir", "seed"}, "");

  RunConfig cfg;
  if (j.contains("data")) {
    const json& d = j["data"];
    reject_unknown(d,
                   {"input", "stopwords", "embeddings", "min_doc_freq", "lowercase", "vocab_from",
                    "max_length", "split", "granularity"},
                   "data.");
    if (d.contains("input")) cfg.input = d["input"].get<std::string>();
    if (d.contains("stopwords")) cfg.stopwords = d["stopwords"].get<std::string>();
    if (d.contains("embeddings")) cfg.embeddings = d["embeddings"].get<std::string>();
    if (d.contains("min_doc_freq")) cfg.min_doc_freq = d["min_doc_freq"].get<int>();
    if (d.contains("lowercase")) cfg.lowercase = d["lowercase"].get<bool>();
    if (d.contains("vocab_from")) cfg.vocab_from = d["vocab_from"].get<std::string>();
    if (d.contains("max_length")) cfg.max_length = d["max_length"].get<int64_t>();
    if (d.contains("split")) {
      const auto s = d["split"].get<std::vector<double>>();
      if (s.size() != 3) throw std::invalid_argument("config: data.split needs 3 ratios");
      cfg.split_train = s[0];
      cfg.split_val = s[1];
      cfg.split_test = s[2];
    }
    if (d.contains("granularity")) cfg.granularity = d["granularity"].get<std::string>();
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    reject_unknown(e, {"coherence_top_n", "diversity_top_n", "reference"}, "eval.");
    if (e.contains("coherence_top_n")) cfg.eval.coherence_top_n = e["coherence_top_n"].get<int>();
    if (e.contains("diversity_top_n")) cfg.eval.diversity_top_n = e["diversity_top_n"].get<int>();
    if (e.contains("reference")) cfg.reference_split = e["reference"].get<std::string>();
  }
  if (j.contains("model")) cfg.model = ModelConfig::from_json_string(j["model"].dump());
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("seed")) cfg.model.seed = j["seed"].get<uint64_t>();
  if (cfg.input.empty()) throw std::invalid_argument("config: data.input is required");
  if (cfg.vocab_from != "train" && cfg.vocab_from != "all")
    throw std::invalid_argument("config: data.vocab_from must be 'train' or 'all'");
  if (cfg.granularity != "none" && cfg.granularity != "month" && cfg.granularity != "year")
    throw std::invalid_argument("config: data.granularity must be none, month or year");
  cfg.eval.effective_topic_threshold = cfg.model.effective_topic_threshold;
  return cfg;
}

std::string hash_hex(uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// Everything the commands derive deterministically from config + seed.
struct PrepBundle {
  std::vector<Document> docs;
  Vocabulary vocab;
  CorpusSplit split;
  PoissonLengthFit length_fit;
  std::vector<BowVector> bows;  // per original document
  std::vector<int> doc_slice;   // 0-based, empty for static corpora
  TimeSlicedCorpus sliced;      // populated when dynamic
  Tensor slice_bow;             // [T, V] train-split aggregates
  bool dynamic = false;

  std::vector<int> nonempty(const std::vector<int>& ids) const {
    std::vector<int> out;
    for (int i : ids)
      if (bows[static_cast<size_t>(i)].length > 0) out.push_back(i);
    return out;
  }
  std::vector<BowVector> gather(const std::vector<int>& ids) const {
    std::vector<BowVector> out;
    for (int i : ids) out.push_back(bows[static_cast<size_t>(i)]);
    return out;
  }
  std::vector<int> gather_slices(const std::vector<int>& ids) const {
    std::vector<int> out;
    if (doc_slice.empty()) return out;
    for (int i : ids) out.push_back(doc_slice[static_cast<size_t>(i)]);
    return out;
  }
};

PrepBundle prepare(const RunConfig& cfg) {
  PrepBundle bundle;
  bundle.docs = read_corpus_file(cfg.input);
  bundle.dynamic = cfg.granularity != "none";

  Rng split_rng(cfg.model.seed);
  bundle.length_fit = fit_poisson_length(bundle.docs);
  bundle.split = stratified_split(bundle.docs, cfg.split_train, cfg.split_val, cfg.split_test,
                                  cfg.max_length, split_rng);

  std::set<std::string> stop;
  if (!cfg.stopwords.empty()) stop = read_token_set_file(cfg.stopwords);
  if (cfg.vocab_from == "train") {
    std::vector<Document> train_docs;
    for (int i : bundle.split.train) train_docs.push_back(bundle.docs[static_cast<size_t>(i)]);
    bundle.vocab = build_vocabulary(train_docs, cfg.min_doc_freq, stop.empty() ? nullptr : &stop,
                                    cfg.lowercase);
  } else {
    bundle.vocab = build_vocabulary(bundle.docs, cfg.min_doc_freq, stop.empty() ? nullptr : &stop,
                                    cfg.lowercase);
  }

  for (const auto& doc : bundle.docs) {
    Document d = doc;
    if (cfg.lowercase)
      for (auto& tok : d.tokens)
        for (char& c : tok)
          if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
    bundle.bows.push_back(to_bow(d, bundle.vocab));
  }

  if (bundle.dynamic) {
    const SliceGranularity g =
        cfg.granularity == "month" ? SliceGranularity::month : SliceGranularity::year;
    bundle.sliced = time_slice(bundle.docs, bundle.vocab, g);
    bundle.doc_slice.assign(bundle.docs.size(), -1);
    for (int t = 0; t < bundle.sliced.T; ++t)
      for (int di : bundle.sliced.slices[static_cast<size_t>(t)])
        bundle.doc_slice[static_cast<size_t>(di)] = t;
    // Latent-mean inputs aggregate the training split only.
    bundle.slice_bow = Tensor::zeros({bundle.sliced.T, bundle.vocab.size()});
    std::vector<double> totals(static_cast<size_t>(bundle.sliced.T), 0.0);
    for (int i : bundle.split.train) {
      const int t = bundle.doc_slice[static_cast<size_t>(i)];
      for (const auto& [idx, cnt] : bundle.bows[static_cast<size_t>(i)].entries) {
        bundle.slice_bow(t, idx) += cnt;
        totals[static_cast<size_t>(t)] += cnt;
      }
    }
    for (int t = 0; t < bundle.sliced.T; ++t)
      if (totals[static_cast<size_t>(t)] > 0)
        for (int v = 0; v < bundle.vocab.size(); ++v)
          bundle.slice_bow(t, v) /= totals[static_cast<size_t>(t)];
  }
  return bundle;
}

void write_resolved_config(const RunConfig& cfg) {
  json j = cfg.to_json();
  j["seed"] = cfg.model.seed;
  write_text((fs::path(cfg.out_dir) / "resolved_config.json").string(), j.dump(2) + "\n");
}

int cmd_prep(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  PrepBundle bundle = prepare(cfg);
  write_vocabulary_file(bundle.vocab, (fs::path(cfg.out_dir) / "vocab.txt").string());

  json manifest;
  manifest["n_documents"] = bundle.docs.size();
  manifest["vocab_size"] = bundle.vocab.size();
  manifest["vocab_hash"] = hash_hex(bundle.vocab.hash());
  manifest["lambda"] = bundle.length_fit.lambda;
  manifest["ks_statistic"] = bundle.length_fit.ks_statistic;
  manifest["fit_fraction"] = bundle.length_fit.fit_fraction;
  manifest["tail_cutoff"] = bundle.length_fit.tail_cutoff;
  manifest["bin_edges"] = bundle.split.bin_edges;
  manifest["merged_bins"] = bundle.split.merged_bins;
  {
    // Per-bin counts of length-filtered documents.
    const auto& edges = bundle.split.bin_edges;
    std::vector<int> counts(edges.size() - 1, 0);
    for (const auto* ids : {&bundle.split.train, &bundle.split.validation, &bundle.split.test})
      for (int i : *ids) {
        const double len = static_cast<double>(bundle.docs[static_cast<size_t>(i)].tokens.size());
        size_t b = 0;
        while (b + 2 < edges.size() && len >= edges[b + 1]) ++b;
        ++counts[b];
      }
    manifest["per_bin_counts"] = counts;
  }
  manifest["splits"]["train"] = bundle.split.train;
  manifest["splits"]["validation"] = bundle.split.validation;
  manifest["splits"]["test"] = bundle.split.test;
  write_text((fs::path(cfg.out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");

  if (bundle.dynamic) {
    json slices;
    slices["T"] = bundle.sliced.T;
    for (int t = 0; t < bundle.sliced.T; ++t) {
      slices["intervals"].push_back(
          {bundle.sliced.intervals[static_cast<size_t>(t)].first.to_string(),
           bundle.sliced.intervals[static_cast<size_t>(t)].second.to_string()});
      slices["per_slice_counts"].push_back(bundle.sliced.slices[static_cast<size_t>(t)].size());
    }
    write_text((fs::path(cfg.out_dir) / "slices.json").string(), slices.dump(2) + "\n");
  }
  write_resolved_config(cfg);
  std::cout << "prep: " << bundle.docs.size() << " documents, V=" << bundle.vocab.size()
            << ", lambda=" << bundle.length_fit.lambda
            << ", ks=" << bundle.length_fit.ks_statistic;
  if (bundle.dynamic) std::cout << ", T=" << bundle.sliced.T;
  std::cout << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  PrepBundle bundle = prepare(cfg);
  if (is_dynamic(cfg.model.kind) && !bundle.dynamic)
    throw std::invalid_argument("train: dynamic model kind '" + to_string(cfg.model.kind) +
                                "' needs a time-sliced corpus (set data.granularity)");
  if (!is_dynamic(cfg.model.kind) && bundle.dynamic)
    std::cout << "train: note: corpus is time-sliced but the model is static; slices ignored\n";

  TopicModel model = TopicModel::create(cfg.model, bundle.vocab.size(), bundle.vocab.hash(),
                                        bundle.dynamic ? bundle.sliced.T : 1,
                                        bundle.dynamic ? &bundle.slice_bow : nullptr);
  if (!cfg.embeddings.empty()) {
    const int applied = load_pretrained_embeddings(model, bundle.vocab, cfg.embeddings);
    std::cout << "train: loaded " << applied << " pretrained embedding rows\n";
  }

  FitData data;
  const std::vector<int> train_ids = bundle.nonempty(bundle.split.train);
  const std::vector<int> val_ids = bundle.nonempty(bundle.split.validation);
  data.train = bundle.gather(train_ids);
  data.train_slice = bundle.gather_slices(train_ids);
  data.validation = bundle.gather(val_ids);
  data.val_slice = bundle.gather_slices(val_ids);

  FitResult result = fit(model, data);

  std::ostringstream metrics;
  for (const auto& e : result.epochs) {
    json line;
    line["epoch"] = e.epoch;
    line["elbo"] = e.elbo_per_doc;
    for (const auto& [name, v] : e.kl_per_doc) line[name] = v;
    line["val_perplexity"] = e.val_perplexity;
    line["effective_topics"] = e.effective_topics;
    line["anneal_weight"] = e.anneal_weight;
    metrics << line.dump() << "\n";
  }
  write_text((fs::path(cfg.out_dir) / "metrics.jsonl").string(), metrics.str());
  save_checkpoint(model, (fs::path(cfg.out_dir) / "checkpoint.sbtm").string());
  write_resolved_config(cfg);
  std::cout << "train: " << result.epochs.size() << " epochs, best epoch " << result.best_epoch
            << ", best val perplexity " << result.best_val_perplexity << "\n";
  return kExitOk;
}

TopicModel load_matching_checkpoint(const RunConfig& cfg, const PrepBundle& bundle) {
  TopicModel model = load_checkpoint((fs::path(cfg.out_dir) / "checkpoint.sbtm").string());
  if (model.vocab_hash != bundle.vocab.hash())
    throw std::invalid_argument("checkpoint vocabulary hash " + hash_hex(model.vocab_hash) +
                                " does not match corpus vocabulary hash " +
                                hash_hex(bundle.vocab.hash()));
  return model;
}

int cmd_eval(const RunConfig& cfg) {
  PrepBundle bundle = prepare(cfg);
  TopicModel model = load_matching_checkpoint(cfg, bundle);

  const std::vector<int> test_ids = bundle.nonempty(bundle.split.test);
  const std::vector<int>& ref_split =
      cfg.reference_split == "test"
          ? bundle.split.test
          : (cfg.reference_split == "validation" ? bundle.split.validation : bundle.split.train);
  EvalReport report = evaluate(model, bundle.gather(test_ids), bundle.gather_slices(test_ids),
                               bundle.gather(bundle.nonempty(ref_split)), cfg.eval);
  write_text((fs::path(cfg.out_dir) / "eval.json").string(), report.to_json_string() + "\n");
  std::cout << report.to_json_string() << "\n";
  return kExitOk;
}

int cmd_topics(const RunConfig& cfg, int top_n) {
  PrepBundle bundle = prepare(cfg);
  TopicModel model = load_matching_checkpoint(cfg, bundle);
  const int T = is_dynamic(model.config.kind) ? model.n_slices : 1;
  json out;
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < model.config.n_topics; ++k) {
      json topic;
      topic["topic"] = k;
      if (T > 1) topic["slice"] = t + 1;
      for (const auto& [w, p] : topic_words(model, k, t, top_n)) {
        topic["words"].push_back(bundle.vocab.index_to_token[static_cast<size_t>(w)]);
        topic["probabilities"].push_back(p);
      }
      out.push_back(topic);
      std::cout << "topic " << k;
      if (T > 1) std::cout << " @t" << (t + 1);
      std::cout << ":";
      for (const auto& [w, p] : topic_words(model, k, t, top_n))
        std::cout << " " << bundle.vocab.index_to_token[static_cast<size_t>(w)];
      std::cout << "\n";
    }
  }
  write_text((fs::path(cfg.out_dir) / "topics.json").string(), out.dump(2) + "\n");
  return kExitOk;
}

int cmd_neighbors(const RunConfig& cfg, const std::string& word, int top_n,
                  const std::string& which, int slice) {
  PrepBundle bundle = prepare(cfg);
  TopicModel model = load_matching_checkpoint(cfg, bundle);
  auto idx = bundle.vocab.lookup(word);
  if (!idx) throw std::invalid_argument("neighbors: '" + word + "' is out of vocabulary");
  json out;
  out["query"] = word;
  out["which"] = which;
  if (which == "word") {
    for (const auto& [w, s] : nearest_neighbor_words(model, *idx, top_n)) {
      out["neighbors"].push_back(
          {{"token", bundle.vocab.index_to_token[static_cast<size_t>(w)]}, {"cosine", s}});
      std::cout << bundle.vocab.index_to_token[static_cast<size_t>(w)] << "\t" << s << "\n";
    }
  } else if (which == "topic") {
    for (const auto& [k, s] : nearest_neighbor_topics(model, *idx, top_n, slice)) {
      out["neighbors"].push_back({{"topic", k}, {"cosine", s}});
      std::cout << "topic " << k << "\t" << s << "\n";
    }
  } else {
    throw std::invalid_argument("neighbors: --which must be word or topic");
  }
  write_text((fs::path(cfg.out_dir) / "neighbors.json").string(), out.dump(2) + "\n");
  return kExitOk;
}

int cmd_trajectories(const RunConfig& cfg, int top_n) {
  PrepBundle bundle = prepare(cfg);
  TopicModel model = load_matching_checkpoint(cfg, bundle);
  const int T = is_dynamic(model.config.kind) ? model.n_slices : 1;
  std::ostringstream csv;
  csv << "topic,word,slice,probability\n";
  for (int k = 0; k < model.config.n_topics; ++k) {
    // Union over slices of the per-slice top words for this topic.
    std::set<int> words;
    for (int t = 0; t < T; ++t)
      for (const auto& [w, p] : topic_words(model, k, t, top_n)) words.insert(w);
    std::vector<Tensor> betas;
    for (int t = 0; t < T; ++t) betas.push_back(topic_word_matrix(model, t));
    for (int w : words)
      for (int t = 0; t < T; ++t)
        csv << k << "," << bundle.vocab.index_to_token[static_cast<size_t>(w)] << "," << (t + 1)
            << "," << json(betas[static_cast<size_t>(t)](k, w)).dump() << "\n";
  }
  write_text((fs::path(cfg.out_dir) / "trajectories.csv").string(), csv.str());
  std::cout << "trajectories: wrote " << (fs::path(cfg.out_dir) / "trajectories.csv").string()
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stick-breaking neural topic models"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  int top_n = 10;
  std::string word;
  std::string which = "word";
  int slice = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration (JSON)")->required();
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--out", out_dir, "override the output directory");
  };
  CLI::App* prep = app.add_subcommand("prep", "build vocabulary, splits and slices");
  add_common(prep);
  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval);
  CLI::App* topics = app.add_subcommand("topics", "top words per topic (per slice when dynamic)");
  add_common(topics);
  topics->add_option("--n", top_n, "words per topic");
  CLI::App* neighbors = app.add_subcommand("neighbors", "cosine neighbors of a word");
  add_common(neighbors);
  neighbors->add_option("--word", word, "query token")->required();
  neighbors->add_option("--n", top_n, "neighbor count");
  neighbors->add_option("--which", which, "word or topic");
  neighbors->add_option("--slice", slice, "topic-embedding slice (dynamic models)");
  CLI::App* trajectories =
      app.add_subcommand("trajectories", "word-probability trajectories as CSV");
  add_common(trajectories);
  trajectories->add_option("--n", top_n, "top words per (topic, slice) in the export");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = parse_run_config(config_path);
    if (seed) cfg.model.seed = *seed;
    if (out_dir) cfg.out_dir = *out_dir;

    if (prep->parsed()) return cmd_prep(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (topics->parsed()) return cmd_topics(cfg, top_n);
    if (neighbors->parsed()) return cmd_neighbors(cfg, word, top_n, which, slice);
    if (trajectories->parsed()) return cmd_trajectories(cfg, top_n);
    return kExitConfig;
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}
