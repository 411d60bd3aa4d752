// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbtm/autodiff.hpp"
#include "sbtm/corpus.hpp"
#include "sbtm/nn.hpp"
#include "sbtm/optim.hpp"

namespace sbtm {

enum class ModelKind { etm, sbvae, edp, ehdp, detm, dedp };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);
bool is_dynamic(ModelKind kind);
bool is_stick_model(ModelKind kind);  // mixture weights via stick breaking

struct ModelConfig {
  ModelKind kind = ModelKind::etm;
  int n_topics = 10;       // truncation level K
  int embedding_dim = 300;  // L
  std::vector<int> hidden = {100, 100};
  int mc_samples = 1;  // S

  // Priors.
  double gem_beta = 5.0;      // GEM concentration, Beta(1, gem_beta) sticks
  double gamma_shape = 1.0;   // concentration hyperprior (ehdp)
  double gamma_rate = 20.0;
  double delta_sq = 0.005;  // latent-mean chain variance
  double sigma_sq = 0.005;  // accepted for config compatibility with the reference regime
  double gamma_sq = 0.005;  // topic-embedding chain variance
  double a_sq = 1.0;        // per-document proportion prior variance

  // Optimizer and training loop.
  double learning_rate = 0.002;
  double adam_beta1 = 0.95;
  double adam_beta2 = 0.99;
  double weight_decay = 1.2e-6;
  double clip_norm = 2.0;
  int batch_size = 1000;
  int max_epochs = 150;
  int anneal_epochs = 10;
  int patience = 10;
  double min_delta_frac = 0.001;
  double dropout_rate = 0.1;
  bool batchnorm = true;

  // Dynamic-model networks.
  int eta_input_dim = 400;
  int lstm_hidden = 400;
  int lstm_layers = 4;

  int taylor_terms = 10;
  double effective_topic_threshold = 0.01;
  uint64_t seed = 1;

  // Audit switches for formula variants kept for comparison only.
  bool audit_printed_edp_kl = false;
  bool audit_double_softmax = false;

  // Batch-size 1000 / lr 0.002 static regime is the default construction.
  static ModelConfig dynamic_un_regime();

  std::string to_json_string() const;  // canonical (sorted keys)
  static ModelConfig from_json_string(const std::string& text);
};

// Named KL (and KL-like penalty) terms; every entry is subtracted from the
// reconstruction to form the total, so positive objective contributions are
// stored negated.
struct ElboBreakdown {
  double reconstruction = 0.0;
  std::vector<std::pair<std::string, double>> kl_terms;
  double total = 0.0;
  double annealed_total = 0.0;
  std::vector<std::pair<std::string, double>> audit;  // informational, not in total

  double kl_sum() const {
    double s = 0.0;
    for (const auto& [name, v] : kl_terms) s += v;
    return s;
  }
};

struct NumericalAbort : std::runtime_error {
  std::string term;
  int epoch;
  int batch;
  NumericalAbort(std::string term_, int epoch_, int batch_)
      : std::runtime_error("non-finite value in term '" + term_ + "' at epoch " +
                           std::to_string(epoch_) + ", batch " + std::to_string(batch_)),
        term(std::move(term_)),
        epoch(epoch_),
        batch(batch_) {}
};

// Dense batch view of a set of documents.
struct Batch {
  Tensor counts;            // [B, V] raw counts
  Tensor norm;              // [B, V] rows normalized to sum 1
  std::vector<int> slice;   // per-document 0-based slice, empty for static
  int size() const { return counts.rank() == 2 ? counts.shape[0] : 0; }
};

Batch make_batch(const std::vector<BowVector>& bows, const std::vector<int>& ids, int vocab_size,
                 const std::vector<int>* doc_slice = nullptr);

struct ForwardResult {
  ElboBreakdown elbo;
  Var annealed_elbo;  // graph scalar, reconstruction - anneal * KL
  Tensor mixture;     // [B, K] document-topic proportions (theta or pi)
};

struct TopicModel {
  ModelConfig config;
  int vocab_size = 0;
  uint64_t vocab_hash = 0;
  int n_slices = 1;

  Var rho;    // [L, V] word embeddings
  Var alpha;  // [K, L] static topic/context embeddings
  Mlp encoder;
  Linear head1;  // mu, or stick parameter a
  Linear head2;  // log-variance, or stick parameter b
  Linear decoder;  // sbvae dense decoder, [K -> V]
  Var g1_raw, g2_raw;  // ehdp Gamma variational, softplus + 1e-3

  Linear eta_in;
  Lstm lstm;
  Linear eta_out;
  std::vector<Var> alpha_mu;      // per slice, [K, L]
  std::vector<Var> alpha_logvar;  // per slice, [K, L]
  Tensor slice_bow;               // [T, V] training slice aggregates

  // K for softmax models, K-1 break fractions for stick models.
  int proportion_dim() const;
  ParamList parameters() const;
  // Non-parameter state that checkpoints carry (batchnorm running stats,
  // slice aggregates).
  std::vector<std::pair<std::string, Tensor*>> state_tensors();

  static TopicModel create(const ModelConfig& config, int vocab_size, uint64_t vocab_hash,
                           int n_slices = 1, const Tensor* slice_bow = nullptr);
};

ForwardResult forward_batch(TopicModel& model, const Batch& batch, NoiseSource& noise, bool train,
                            double anneal_weight = 1.0, double chain_scale = 1.0);

// Deterministic (mean-field, noise-free) quantities used by evaluation.

// Topic-word matrix [K, V] from variational means; t selects the slice for
// dynamic models.
Tensor topic_word_matrix(const TopicModel& model, int t = 0);

// Latent-mean trajectory [T, D] evaluated with zero noise.
Tensor eta_means(TopicModel& model);

struct DocScore {
  double recon = 0.0;     // log-likelihood part at deterministic posterior
  double kl = 0.0;        // document-level KL at the encoder outputs
  std::vector<double> mixture;
};

// Per-document deterministic evaluation; eta is required for dynamic models.
DocScore score_document(TopicModel& model, const std::vector<double>& counts,
                        const std::vector<double>& norm, int slice, const Tensor* eta);

struct EpochMetrics {
  int epoch = 0;
  double elbo_per_doc = 0.0;
  std::vector<std::pair<std::string, double>> kl_per_doc;
  double val_perplexity = 0.0;
  int effective_topics = 0;
  double anneal_weight = 0.0;
};

struct FitData {
  std::vector<BowVector> train;
  std::vector<int> train_slice;  // 0-based, required for dynamic models
  std::vector<BowVector> validation;
  std::vector<int> val_slice;
};

struct FitResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
  double best_val_perplexity = 0.0;
};

// Minibatch training with Adam, weight decay, gradient clipping and KL
// annealing; early-stops on held-out perplexity and leaves the model at the
// best-validation parameters.
FitResult fit(TopicModel& model, const FitData& data);

// Deterministic per-document mixtures averaged over the corpus; topics whose
// mean proportion reaches the threshold.
std::vector<int> effective_topics(TopicModel& model, const std::vector<BowVector>& bows,
                                  const std::vector<int>& slices, double threshold);

// Top-n (word, probability) rows of topic k (slice t for dynamic models),
// ties broken by word index.
std::vector<std::pair<int, double>> topic_words(const TopicModel& model, int k,
                                                std::optional<int> t, int n);

// Cosine neighbors of a word among word embeddings (columns of rho) or topic
// embeddings; the query itself is excluded from word neighborhoods.
std::vector<std::pair<int, double>> nearest_neighbor_words(const TopicModel& model, int query,
                                                           int n);
std::vector<std::pair<int, double>> nearest_neighbor_topics(const TopicModel& model, int query,
                                                            int n, int t = 0);

// Plain-text embedding file: `token v1 ... vL` per line. Tokens absent from
// the file keep their current initialization. Returns the number of rows
// applied.
int load_pretrained_embeddings(TopicModel& model, const Vocabulary& vocab,
                               const std::string& path);

}  // namespace sbtm
