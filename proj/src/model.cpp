// Apache License, Version 2.0, refer to LICENSE.txt
#include "sbtm/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "sbtm/distributions.hpp"
#include "sbtm/special.hpp"

namespace sbtm {

using nlohmann::json;

namespace {

constexpr double kParamFloor = 1e-3;
constexpr double kEulerGamma = 0.57721566490153286;

// Zero-noise source for deterministic (mean) evaluation of Gaussian chains.
struct ZeroNoise final : NoiseSource {
  double normal() override { return 0.0; }
  double uniform() override { return 0.5; }
  double gamma_unit(double shape) override { return shape; }
};

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::etm: return "etm";
    case ModelKind::sbvae: return "sbvae";
    case ModelKind::edp: return "edp";
    case ModelKind::ehdp: return "ehdp";
    case ModelKind::detm: return "detm";
    case ModelKind::dedp: return "dedp";
  }
  throw std::logic_error("unknown model kind");
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "etm") return ModelKind::etm;
  if (name == "sbvae") return ModelKind::sbvae;
  if (name == "edp") return ModelKind::edp;
  if (name == "ehdp") return ModelKind::ehdp;
  if (name == "detm") return ModelKind::detm;
  if (name == "dedp") return ModelKind::dedp;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

bool is_dynamic(ModelKind kind) { return kind == ModelKind::detm || kind == ModelKind::dedp; }

bool is_stick_model(ModelKind kind) {
  return kind == ModelKind::sbvae || kind == ModelKind::edp || kind == ModelKind::ehdp ||
         kind == ModelKind::dedp;
}

ModelConfig ModelConfig::dynamic_un_regime() {
  ModelConfig c;
  c.kind = ModelKind::dedp;
  c.n_topics = 10;
  c.learning_rate = 0.001;
  c.batch_size = 200;
  c.dropout_rate = 0.1;
  c.batchnorm = false;
  c.hidden = {800, 800};
  c.eta_input_dim = 400;
  c.lstm_hidden = 400;
  c.lstm_layers = 4;
  c.max_epochs = 400;
  return c;
}

std::string ModelConfig::to_json_string() const {
  json j;
  j["kind"] = to_string(kind);
  j["n_topics"] = n_topics;
  j["embedding_dim"] = embedding_dim;
  j["hidden"] = hidden;
  j["mc_samples"] = mc_samples;
  j["gem_beta"] = gem_beta;
  j["gamma_shape"] = gamma_shape;
  j["gamma_rate"] = gamma_rate;
  j["delta_sq"] = delta_sq;
  j["sigma_sq"] = sigma_sq;
  j["gamma_sq"] = gamma_sq;
  j["a_sq"] = a_sq;
  j["learning_rate"] = learning_rate;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["weight_decay"] = weight_decay;
  j["clip_norm"] = clip_norm;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["anneal_epochs"] = anneal_epochs;
  j["patience"] = patience;
  j["min_delta_frac"] = min_delta_frac;
  j["dropout_rate"] = dropout_rate;
  j["batchnorm"] = batchnorm;
  j["eta_input_dim"] = eta_input_dim;
  j["lstm_hidden"] = lstm_hidden;
  j["lstm_layers"] = lstm_layers;
  j["taylor_terms"] = taylor_terms;
  j["effective_topic_threshold"] = effective_topic_threshold;
  j["seed"] = seed;
  j["audit_printed_edp_kl"] = audit_printed_edp_kl;
  j["audit_double_softmax"] = audit_double_softmax;
  return j.dump();
}

ModelConfig ModelConfig::from_json_string(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  static const std::set<std::string> known = {
      "kind",          "n_topics",       "embedding_dim", "hidden",
      "mc_samples",    "gem_beta",       "gamma_shape",   "gamma_rate",
      "delta_sq",      "sigma_sq",       "gamma_sq",      "a_sq",
      "learning_rate", "adam_beta1",     "adam_beta2",    "weight_decay",
      "clip_norm",     "batch_size",     "max_epochs",    "anneal_epochs",
      "patience",      "min_delta_frac", "dropout_rate",  "batchnorm",
      "eta_input_dim", "lstm_hidden",    "lstm_layers",   "taylor_terms",
      "effective_topic_threshold",       "seed",
      "audit_printed_edp_kl",            "audit_double_softmax"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("model config: unknown key '" + it.key() + "'");
  auto get = [&j](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  if (j.contains("kind")) c.kind = model_kind_from_string(j.at("kind").get<std::string>());
  get("n_topics", c.n_topics);
  get("embedding_dim", c.embedding_dim);
  get("hidden", c.hidden);
  get("mc_samples", c.mc_samples);
  get("gem_beta", c.gem_beta);
  get("gamma_shape", c.gamma_shape);
  get("gamma_rate", c.gamma_rate);
  get("delta_sq", c.delta_sq);
  get("sigma_sq", c.sigma_sq);
  get("gamma_sq", c.gamma_sq);
  get("a_sq", c.a_sq);
  get("learning_rate", c.learning_rate);
  get("adam_beta1", c.adam_beta1);
  get("adam_beta2", c.adam_beta2);
  get("weight_decay", c.weight_decay);
  get("clip_norm", c.clip_norm);
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("anneal_epochs", c.anneal_epochs);
  get("patience", c.patience);
  get("min_delta_frac", c.min_delta_frac);
  get("dropout_rate", c.dropout_rate);
  get("batchnorm", c.batchnorm);
  get("eta_input_dim", c.eta_input_dim);
  get("lstm_hidden", c.lstm_hidden);
  get("lstm_layers", c.lstm_layers);
  get("taylor_terms", c.taylor_terms);
  get("effective_topic_threshold", c.effective_topic_threshold);
  get("seed", c.seed);
  get("audit_printed_edp_kl", c.audit_printed_edp_kl);
  get("audit_double_softmax", c.audit_double_softmax);
  if (c.n_topics < 2) throw std::invalid_argument("model config: n_topics must be >= 2");
  if (c.mc_samples < 1) throw std::invalid_argument("model config: mc_samples must be >= 1");
  if (!(c.delta_sq > 0 && c.gamma_sq > 0 && c.a_sq > 0))
    throw std::invalid_argument("model config: prior variances must be positive");
  return c;
}

int TopicModel::proportion_dim() const {
  return is_stick_model(config.kind) ? config.n_topics - 1 : config.n_topics;
}

TopicModel TopicModel::create(const ModelConfig& config, int vocab_size, uint64_t vocab_hash,
                              int n_slices, const Tensor* slice_bow) {
  if (config.n_topics < 2) throw std::invalid_argument("TopicModel: n_topics must be >= 2");
  if (vocab_size < 1) throw std::invalid_argument("TopicModel: empty vocabulary");
  if (is_dynamic(config.kind) && n_slices < 1)
    throw std::invalid_argument("TopicModel: dynamic model needs slices");

  TopicModel m;
  m.config = config;
  m.vocab_size = vocab_size;
  m.vocab_hash = vocab_hash;
  m.n_slices = is_dynamic(config.kind) ? n_slices : 1;

  Rng rng(config.seed);
  const int K = config.n_topics;
  const int L = config.embedding_dim;
  const int V = vocab_size;
  const int D = m.proportion_dim();

  if (config.kind != ModelKind::sbvae) m.rho = parameter(glorot_normal(L, V, {L, V}, rng));
  if (config.kind == ModelKind::etm || config.kind == ModelKind::edp ||
      config.kind == ModelKind::ehdp)
    m.alpha = parameter(glorot_normal(K, L, {K, L}, rng));

  const int enc_in = is_dynamic(config.kind) ? V + D : V;
  m.encoder = Mlp(enc_in, config.hidden, config.batchnorm, config.dropout_rate, rng);
  const int enc_out = config.hidden.empty() ? enc_in : config.hidden.back();
  m.head1 = Linear(enc_out, D, rng);
  m.head2 = Linear(enc_out, D, rng);

  if (config.kind == ModelKind::sbvae) m.decoder = Linear(K, V, rng);

  if (config.kind == ModelKind::ehdp) {
    m.g1_raw = parameter(Tensor::scalar(inverse_softplus(config.gamma_shape - kParamFloor)));
    m.g2_raw = parameter(Tensor::scalar(inverse_softplus(config.gamma_rate - kParamFloor)));
  }

  if (is_dynamic(config.kind)) {
    m.eta_in = Linear(V, config.eta_input_dim, rng);
    m.lstm = Lstm(config.eta_input_dim, config.lstm_hidden, config.lstm_layers, rng);
    m.eta_out = Linear(config.lstm_hidden + D, 2 * D, rng);
    for (int t = 0; t < m.n_slices; ++t) {
      m.alpha_mu.push_back(parameter(Tensor::zeros({K, L})));
      m.alpha_logvar.push_back(parameter(Tensor::full({K, L}, -4.0)));
    }
    if (slice_bow) {
      if (slice_bow->shape != std::vector<int>{m.n_slices, V})
        throw std::invalid_argument("TopicModel: slice_bow shape mismatch");
      m.slice_bow = *slice_bow;
    } else {
      m.slice_bow = Tensor::zeros({m.n_slices, V});
    }
  }
  return m;
}

ParamList TopicModel::parameters() const {
  ParamList out;
  if (rho) out.emplace_back("rho", rho);
  if (alpha) out.emplace_back("alpha", alpha);
  encoder.collect("encoder", out);
  head1.collect("head1", out);
  head2.collect("head2", out);
  if (config.kind == ModelKind::sbvae) decoder.collect("decoder", out);
  if (config.kind == ModelKind::ehdp) {
    out.emplace_back("g1_raw", g1_raw);
    out.emplace_back("g2_raw", g2_raw);
  }
  if (is_dynamic(config.kind)) {
    eta_in.collect("eta_in", out);
    lstm.collect("lstm", out);
    eta_out.collect("eta_out", out);
    for (size_t t = 0; t < alpha_mu.size(); ++t) {
      out.emplace_back("alpha_mu." + std::to_string(t), alpha_mu[t]);
      out.emplace_back("alpha_logvar." + std::to_string(t), alpha_logvar[t]);
    }
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> TopicModel::state_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (size_t i = 0; i < encoder.norms.size(); ++i) {
    out.emplace_back("encoder.bn" + std::to_string(i) + ".running_mean",
                     &encoder.norms[i].running_mean);
    out.emplace_back("encoder.bn" + std::to_string(i) + ".running_var",
                     &encoder.norms[i].running_var);
  }
  if (is_dynamic(config.kind)) out.emplace_back("slice_bow", &slice_bow);
  return out;
}

Batch make_batch(const std::vector<BowVector>& bows, const std::vector<int>& ids, int vocab_size,
                 const std::vector<int>* doc_slice) {
  Batch batch;
  const int B = static_cast<int>(ids.size());
  batch.counts = Tensor::zeros({B, vocab_size});
  batch.norm = Tensor::zeros({B, vocab_size});
  for (int r = 0; r < B; ++r) {
    const BowVector& bow = bows[static_cast<size_t>(ids[static_cast<size_t>(r)])];
    if (bow.length <= 0)
      throw std::invalid_argument("make_batch: empty document in batch (filter before training)");
    for (const auto& [idx, cnt] : bow.entries) {
      batch.counts(r, idx) = static_cast<double>(cnt);
      batch.norm(r, idx) = static_cast<double>(cnt) / static_cast<double>(bow.length);
    }
    if (doc_slice)
      batch.slice.push_back((*doc_slice)[static_cast<size_t>(ids[static_cast<size_t>(r)])]);
  }
  return batch;
}

namespace {

// 0.5 * sum[(exp(lv) + (mu - pm)^2) / pv - 1 + log pv - lv]; null prior_mu
// means a zero-mean prior.
Var gaussian_kl_graph(const Var& mu, const Var& lv, const Var& prior_mu, double prior_var) {
  Var d = prior_mu ? sub(mu, prior_mu) : mu;
  Var num = add(exp_op(lv), mul(d, d));
  Var inner = add_scalar(sub(mul_scalar(num, 1.0 / prior_var), lv), std::log(prior_var) - 1.0);
  return mul_scalar(sum_all(inner), 0.5);
}

// Sum over entries of KL(Beta(a,b) || Beta(1, d)) with d a rank-0 node.
Var beta_kl_graph(const Var& a, const Var& b, const Var& d) {
  Var log_b1d = sub(lgamma_op(d), lgamma_op(add_scalar(d, 1.0)));
  Var log_bab = sub(add(lgamma_op(a), lgamma_op(b)), lgamma_op(add(a, b)));
  Var term = sub(add(log_b1d, mul(add_scalar(a, -1.0), digamma_op(a))), log_bab);
  term = sub(term, mul(sub(d, b), digamma_op(b)));
  Var coef = add(sub(d, b), add_scalar(mul_scalar(a, -1.0), 1.0));  // 1 - a + d - b
  term = add(term, mul(coef, digamma_op(add(a, b))));
  return sum_all(term);
}

// Sum over entries of the truncated-series KL(Kumaraswamy(a,b) || Beta(1, beta)).
Var kumaraswamy_kl_graph(const Var& a, const Var& b, double beta, int terms) {
  Var inv_a = reciprocal(a);
  Var inv_b = reciprocal(b);
  Var frac_a = add_scalar(mul_scalar(inv_a, -1.0), 1.0);  // (a-1)/a
  Var bracket = mul_scalar(add(add_scalar(digamma_op(b), kEulerGamma), inv_b), -1.0);
  Var out = mul(frac_a, bracket);
  out = add(out, log_op(mul(a, b)));
  out = add_scalar(out, log_beta_fn(1.0, beta));
  out = add(out, add_scalar(inv_b, -1.0));  // -(b-1)/b
  if (beta != 1.0) {
    Var series;
    Var lg_b = lgamma_op(b);
    Var ab = mul(a, b);
    for (int m = 1; m <= terms; ++m) {
      Var ma = mul_scalar(inv_a, static_cast<double>(m));
      Var log_term = sub(add(lgamma_op(ma), lg_b), lgamma_op(add(ma, b)));
      Var term = mul(exp_op(log_term), reciprocal(add_scalar(ab, static_cast<double>(m))));
      series = series ? add(series, term) : term;
    }
    out = add(out, mul_scalar(mul(b, series), beta - 1.0));
  }
  return sum_all(out);
}

struct EncodedHeads {
  Var h1;  // mu, or stick parameter a
  Var h2;  // log-variance, or stick parameter b
};

EncodedHeads encode(TopicModel& m, const Var& input, bool train, NoiseSource& noise) {
  Var h = m.encoder(input, train, noise);
  EncodedHeads heads;
  if (is_stick_model(m.config.kind) && !is_dynamic(m.config.kind)) {
    heads.h1 = add_scalar(softplus(m.head1(h)), kParamFloor);
    heads.h2 = add_scalar(softplus(m.head2(h)), kParamFloor);
  } else {
    heads.h1 = m.head1(h);
    heads.h2 = m.head2(h);
  }
  return heads;
}

Var gaussian_sample_graph(const Var& mu, const Var& lv, NoiseSource& noise) {
  Tensor eps(mu->value.shape);
  for (int64_t i = 0; i < eps.size(); ++i) eps[i] = noise.normal();
  return add(mu, mul(exp_op(mul_scalar(lv, 0.5)), constant(eps)));
}

// Reconstruction sum(counts . log(mixture beta)); the audit variant applies
// a second softmax over the vocabulary axis.
Var mixture_recon_graph(const Var& mixture, const Var& beta_mat, const Var& counts,
                        bool double_softmax) {
  Var mix = matmul(mixture, beta_mat);
  Var logp = double_softmax ? log_softmax_rows(mix) : log_op(mix);
  return sum_all(mul(counts, logp));
}

struct EtaChain {
  std::vector<Var> eta;  // sampled [1, D] per slice
  std::vector<Var> mu;
  std::vector<Var> logvar;
  Var kl;
  double kl_value = 0.0;  // independent numeric value
};

EtaChain run_eta_chain(TopicModel& m, NoiseSource& noise) {
  const int D = m.proportion_dim();
  const double delta_sq = m.config.delta_sq;
  EtaChain chain;
  auto state = m.lstm.initial_state(1);
  Var prev = constant(Tensor::zeros({1, D}));
  for (int t = 0; t < m.n_slices; ++t) {
    Tensor wt({1, m.vocab_size});
    for (int vv = 0; vv < m.vocab_size; ++vv) wt(0, vv) = m.slice_bow(t, vv);
    Var h = m.lstm.step(m.eta_in(constant(wt)), state);
    Var stats = m.eta_out(concat_cols(h, prev));
    Var mu = slice_cols(stats, 0, D);
    Var lv = slice_cols(stats, D, 2 * D);
    Var eta_t = gaussian_sample_graph(mu, lv, noise);
    // The first link of each chain is anchored at the standard-Gaussian base.
    const double pv = t == 0 ? 1.0 : delta_sq;
    Var kl_t = gaussian_kl_graph(mu, lv, t == 0 ? Var{} : chain.eta.back(), pv);
    chain.kl = chain.kl ? add(chain.kl, kl_t) : kl_t;

    GaussianParams q{std::vector<double>(mu->value.data), std::vector<double>(lv->value.data)};
    GaussianParams p;
    p.mu = t == 0 ? std::vector<double>(static_cast<size_t>(D), 0.0)
                  : std::vector<double>(chain.eta.back()->value.data);
    p.log_var.assign(static_cast<size_t>(D), std::log(pv));
    chain.kl_value += kld_gaussian_gaussian(q, p);

    chain.mu.push_back(mu);
    chain.logvar.push_back(lv);
    chain.eta.push_back(eta_t);
    prev = eta_t;
  }
  return chain;
}

struct AlphaChain {
  std::vector<Var> sample;  // [K, L] per slice
  Var kl;
  double kl_value = 0.0;
};

AlphaChain run_alpha_chain(TopicModel& m, NoiseSource& noise) {
  AlphaChain chain;
  const double gamma_sq = m.config.gamma_sq;
  for (int t = 0; t < m.n_slices; ++t) {
    Var mu = m.alpha_mu[static_cast<size_t>(t)];
    Var lv = m.alpha_logvar[static_cast<size_t>(t)];
    Var sample = gaussian_sample_graph(mu, lv, noise);
    const double pv = t == 0 ? 1.0 : gamma_sq;
    Var kl_t = gaussian_kl_graph(mu, lv, t == 0 ? Var{} : chain.sample.back(), pv);
    chain.kl = chain.kl ? add(chain.kl, kl_t) : kl_t;

    GaussianParams q{std::vector<double>(mu->value.data), std::vector<double>(lv->value.data)};
    GaussianParams p;
    p.mu = t == 0 ? std::vector<double>(mu->value.data.size(), 0.0)
                  : std::vector<double>(chain.sample.back()->value.data);
    p.log_var.assign(mu->value.data.size(), std::log(pv));
    chain.kl_value += kld_gaussian_gaussian(q, p);

    chain.sample.push_back(sample);
  }
  return chain;
}

void fill_mixture(Tensor& dst, const Var& mixture, const std::vector<int>& rows, double weight) {
  const int K = mixture->value.shape[1];
  for (size_t i = 0; i < rows.size(); ++i)
    for (int k = 0; k < K; ++k)
      dst(rows[i], k) += weight * mixture->value(static_cast<int>(i), k);
}

ForwardResult finish(const Var& recon, std::vector<std::pair<std::string, Var>> kl_vars,
                     std::vector<std::pair<std::string, double>> kl_numeric, double anneal,
                     const Tensor& mixture) {
  ForwardResult out;
  out.elbo.reconstruction = recon->value.data[0];
  out.elbo.kl_terms = std::move(kl_numeric);
  Var kl_total;
  for (auto& [name, v] : kl_vars) kl_total = kl_total ? add(kl_total, v) : v;
  Var total = kl_total ? sub(recon, kl_total) : recon;
  out.elbo.total = total->value.data[0];
  out.annealed_elbo = kl_total ? sub(recon, mul_scalar(kl_total, anneal)) : recon;
  out.elbo.annealed_total = out.annealed_elbo->value.data[0];
  out.mixture = mixture;
  return out;
}

}  // namespace

ForwardResult forward_batch(TopicModel& m, const Batch& batch, NoiseSource& noise, bool train,
                            double anneal_weight, double chain_scale) {
  const int B = batch.size();
  if (B == 0) throw std::invalid_argument("forward_batch: empty batch");
  const ModelKind kind = m.config.kind;
  const int K = m.config.n_topics;
  const int S = m.config.mc_samples;
  const double inv_s = 1.0 / static_cast<double>(S);

  if (is_dynamic(kind)) {
    if (batch.slice.empty())
      throw std::invalid_argument("forward_batch: dynamic model needs slice-tagged documents");
    for (int s : batch.slice)
      if (s < 0 || s >= m.n_slices)
        throw std::invalid_argument("forward_batch: document slice " + std::to_string(s) +
                                    " outside [0," + std::to_string(m.n_slices) + ")");

    EtaChain eta = run_eta_chain(m, noise);
    AlphaChain alpha = run_alpha_chain(m, noise);

    // Group rows by slice so each group shares one topic matrix.
    std::vector<std::vector<int>> by_slice(static_cast<size_t>(m.n_slices));
    for (int r = 0; r < B; ++r)
      by_slice[static_cast<size_t>(batch.slice[static_cast<size_t>(r)])].push_back(r);

    Var recon, kl_theta;
    double kl_theta_value = 0.0;
    Tensor mixture_out = Tensor::zeros({B, K});
    const int D = m.proportion_dim();
    for (int t = 0; t < m.n_slices; ++t) {
      const auto& rows = by_slice[static_cast<size_t>(t)];
      if (rows.empty()) continue;
      const int Bt = static_cast<int>(rows.size());
      Tensor counts({Bt, m.vocab_size}), norm({Bt, m.vocab_size});
      for (int i = 0; i < Bt; ++i)
        for (int vv = 0; vv < m.vocab_size; ++vv) {
          counts(i, vv) = batch.counts(rows[static_cast<size_t>(i)], vv);
          norm(i, vv) = batch.norm(rows[static_cast<size_t>(i)], vv);
        }
      Var eta_tiled = tile_rows(eta.eta[static_cast<size_t>(t)], Bt);
      Var enc_in = concat_cols(constant(norm), eta_tiled);
      EncodedHeads heads = encode(m, enc_in, train, noise);
      Var beta_mat = softmax_rows(matmul(alpha.sample[static_cast<size_t>(t)], m.rho));

      Var kl_t = gaussian_kl_graph(heads.h1, heads.h2, eta_tiled, m.config.a_sq);
      kl_theta = kl_theta ? add(kl_theta, kl_t) : kl_t;
      {
        GaussianParams q{std::vector<double>(heads.h1->value.data),
                         std::vector<double>(heads.h2->value.data)};
        GaussianParams p;
        p.mu.assign(q.mu.size(), 0.0);
        for (int i = 0; i < Bt; ++i)
          for (int d = 0; d < D; ++d)
            p.mu[static_cast<size_t>(i * D + d)] = eta_tiled->value(i, d);
        p.log_var.assign(q.mu.size(), std::log(m.config.a_sq));
        kl_theta_value += kld_gaussian_gaussian(q, p);
      }

      for (int s = 0; s < S; ++s) {
        Var z = gaussian_sample_graph(heads.h1, heads.h2, noise);
        Var mixture =
            kind == ModelKind::detm ? softmax_rows(z) : stick_break_rows(logistic(z));
        Var recon_t =
            mul_scalar(mixture_recon_graph(mixture, beta_mat, constant(counts), false), inv_s);
        recon = recon ? add(recon, recon_t) : recon_t;
        fill_mixture(mixture_out, mixture, rows, inv_s);
      }
    }

    std::vector<std::pair<std::string, Var>> kl_vars;
    std::vector<std::pair<std::string, double>> kl_nums;
    kl_vars.emplace_back("kl_theta", kl_theta);
    kl_nums.emplace_back("kl_theta", kl_theta_value);
    kl_vars.emplace_back("kl_eta", mul_scalar(eta.kl, chain_scale));
    kl_nums.emplace_back("kl_eta", chain_scale * eta.kl_value);
    kl_vars.emplace_back("kl_alpha", mul_scalar(alpha.kl, chain_scale));
    kl_nums.emplace_back("kl_alpha", chain_scale * alpha.kl_value);
    return finish(recon, std::move(kl_vars), std::move(kl_nums), anneal_weight, mixture_out);
  }

  // Static models share the encoder-head scaffold.
  Var enc_in = constant(batch.norm);
  EncodedHeads heads = encode(m, enc_in, train, noise);
  Var counts = constant(batch.counts);
  Tensor mixture_out = Tensor::zeros({B, K});
  std::vector<int> all_rows(static_cast<size_t>(B));
  for (int r = 0; r < B; ++r) all_rows[static_cast<size_t>(r)] = r;

  if (kind == ModelKind::etm) {
    Var beta_mat = softmax_rows(matmul(m.alpha, m.rho));
    Var recon;
    for (int s = 0; s < S; ++s) {
      Var theta = softmax_rows(gaussian_sample_graph(heads.h1, heads.h2, noise));
      Var recon_s = mul_scalar(mixture_recon_graph(theta, beta_mat, counts, false), inv_s);
      recon = recon ? add(recon, recon_s) : recon_s;
      fill_mixture(mixture_out, theta, all_rows, inv_s);
    }
    Var kl = gaussian_kl_graph(heads.h1, heads.h2, Var{}, 1.0);
    GaussianParams q{std::vector<double>(heads.h1->value.data),
                     std::vector<double>(heads.h2->value.data)};
    GaussianParams p;
    p.mu.assign(q.mu.size(), 0.0);
    p.log_var.assign(q.mu.size(), 0.0);
    return finish(recon, {{"kl_theta", kl}}, {{"kl_theta", kld_gaussian_gaussian(q, p)}},
                  anneal_weight, mixture_out);
  }

  if (kind == ModelKind::sbvae) {
    Var recon;
    for (int s = 0; s < S; ++s) {
      Var v = kumaraswamy_rows(heads.h1, heads.h2, noise);
      Var pi = stick_break_rows(v);
      Var logits = m.decoder(pi);
      Var recon_s = mul_scalar(sum_all(mul(counts, log_softmax_rows(logits))), inv_s);
      recon = recon ? add(recon, recon_s) : recon_s;
      fill_mixture(mixture_out, pi, all_rows, inv_s);
    }
    Var kl = kumaraswamy_kl_graph(heads.h1, heads.h2, m.config.gem_beta, m.config.taylor_terms);
    KumaraswamyParams q{std::vector<double>(heads.h1->value.data),
                        std::vector<double>(heads.h2->value.data)};
    const double kl_num = kld_kumaraswamy_beta(q, m.config.gem_beta, m.config.taylor_terms);
    return finish(recon, {{"kl_sticks", kl}}, {{"kl_sticks", kl_num}}, anneal_weight,
                  mixture_out);
  }

  if (kind == ModelKind::edp || kind == ModelKind::ehdp) {
    Var xi = softmax_rows(matmul(m.alpha, m.rho));
    Var recon;
    for (int s = 0; s < S; ++s) {
      Var v = beta_implicit_rows(heads.h1, heads.h2, noise);
      Var pi = stick_break_rows(v);
      Var recon_s =
          mul_scalar(mixture_recon_graph(pi, xi, counts, m.config.audit_double_softmax), inv_s);
      recon = recon ? add(recon, recon_s) : recon_s;
      fill_mixture(mixture_out, pi, all_rows, inv_s);
    }

    BetaParams q{std::vector<double>(heads.h1->value.data),
                 std::vector<double>(heads.h2->value.data)};

    if (kind == ModelKind::edp) {
      Var kl = beta_kl_graph(heads.h1, heads.h2, constant(Tensor::scalar(m.config.gem_beta)));
      BetaParams prior;
      prior.a.assign(q.a.size(), 1.0);
      prior.b.assign(q.a.size(), m.config.gem_beta);
      ForwardResult out =
          finish(recon, {{"kl_sticks", kl}}, {{"kl_sticks", kld_beta_beta(q, prior)}},
                 anneal_weight, mixture_out);
      if (m.config.audit_printed_edp_kl)
        out.elbo.audit.emplace_back("printed_kl_sticks",
                                    kld_beta_gem_printed(q, m.config.gem_beta));
      return out;
    }

    // EHDP: the GEM concentration is a learned Gamma variational. The stick
    // penalty is the expected KL under q(beta) = Gamma(g1, g2),
    //   E_beta[KL(q(v) || Beta(1, beta))]
    //     = KL(q(v) || Beta(1, E beta)) + log(E beta) - (digamma(g1) - log g2)
    // per stick, plus the Gamma KL to the hyperprior.
    Var g1 = add_scalar(softplus(m.g1_raw), kParamFloor);
    Var g2 = add_scalar(softplus(m.g2_raw), kParamFloor);
    Var beta_hat = clamp_min(divide(g1, g2), kParamFloor);
    const double g1v = g1->value.data[0], g2v = g2->value.data[0];
    const double bh = std::max(g1v / g2v, kParamFloor);

    Var kl_sticks = beta_kl_graph(heads.h1, heads.h2, beta_hat);
    BetaParams prior;
    prior.a.assign(q.a.size(), 1.0);
    prior.b.assign(q.a.size(), bh);
    const double kl_sticks_num = kld_beta_beta(q, prior);

    const double n_sticks = static_cast<double>(q.a.size());  // batch x (K-1)
    Var gem_corr = mul_scalar(sub(log_op(beta_hat), sub(digamma_op(g1), log_op(g2))), n_sticks);
    const double gem_corr_num = n_sticks * (std::log(bh) - (digamma(g1v) - std::log(g2v)));

    Var kl_gamma_v;
    {
      const double c1 = m.config.gamma_shape, c2 = m.config.gamma_rate;
      Var t = mul(sub(g1, constant(Tensor::scalar(c1))), digamma_op(g1));
      t = sub(t, lgamma_op(g1));
      t = add_scalar(t, std::lgamma(c1));
      t = add(t, mul_scalar(sub(log_op(g2), constant(Tensor::scalar(std::log(c2)))), c1));
      t = add(t, mul(g1, divide(sub(constant(Tensor::scalar(c2)), g2), g2)));
      kl_gamma_v = mul_scalar(t, chain_scale);
    }
    const double kl_gamma_num =
        chain_scale * kld_gamma_gamma({g1v, g2v}, {m.config.gamma_shape, m.config.gamma_rate});

    std::vector<std::pair<std::string, Var>> kl_vars = {{"kl_sticks", kl_sticks},
                                                        {"kl_gem_correction", gem_corr},
                                                        {"kl_gamma", kl_gamma_v}};
    std::vector<std::pair<std::string, double>> kl_nums = {{"kl_sticks", kl_sticks_num},
                                                           {"kl_gem_correction", gem_corr_num},
                                                           {"kl_gamma", kl_gamma_num}};
    ForwardResult out =
        finish(recon, std::move(kl_vars), std::move(kl_nums), anneal_weight, mixture_out);
    // The objective printed alongside the model carries three extra terms,
    // (K-1)(digamma(g1) - log g2), log B(1, beta) and 2 log(ab); they are
    // reported for auditing but kept out of the trained objective (the
    // 2 log(ab) reward inflates every stick's parameters and defeats the
    // truncation's neutralization).
    out.elbo.audit.emplace_back("printed_gem_e_log_beta",
                                (K - 1) * (digamma(g1v) - std::log(g2v)));
    out.elbo.audit.emplace_back("printed_log_norm", log_beta_fn(1.0, bh));
    double log_ab = 0.0;
    for (size_t i = 0; i < q.a.size(); ++i) log_ab += 2.0 * std::log(q.a[i] * q.b[i]);
    out.elbo.audit.emplace_back("printed_2log_ab", log_ab);
    return out;
  }

  throw std::logic_error("forward_batch: unhandled model kind");
}

// --- deterministic evaluation ---

namespace {

std::vector<double> linear_eval(const Linear& lin, const std::vector<double>& x) {
  const Tensor& W = lin.W->value;
  const int in = W.shape[0], out = W.shape[1];
  if (static_cast<int>(x.size()) != in)
    throw std::invalid_argument("linear_eval: input size mismatch");
  std::vector<double> y(static_cast<size_t>(out));
  for (int j = 0; j < out; ++j) y[static_cast<size_t>(j)] = lin.b->value[j];
  for (int i = 0; i < in; ++i) {
    const double xi = x[static_cast<size_t>(i)];
    if (xi == 0.0) continue;
    for (int j = 0; j < out; ++j) y[static_cast<size_t>(j)] += xi * W(i, j);
  }
  return y;
}

std::vector<double> encoder_eval(const TopicModel& m, std::vector<double> x) {
  for (size_t l = 0; l < m.encoder.layers.size(); ++l) {
    x = linear_eval(m.encoder.layers[l], x);
    if (!m.encoder.norms.empty()) {
      const BatchNorm& bn = m.encoder.norms[l];
      for (size_t j = 0; j < x.size(); ++j) {
        const double xhat = (x[j] - bn.running_mean[static_cast<int64_t>(j)]) /
                            std::sqrt(bn.running_var[static_cast<int64_t>(j)] + 1e-5);
        x[j] = bn.gamma->value[static_cast<int64_t>(j)] * xhat +
               bn.beta->value[static_cast<int64_t>(j)];
      }
    }
    for (double& v : x) v = v > 0.0 ? v : 0.0;
  }
  return x;
}

void softmax_inplace(std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : x) v /= sum;
}

std::vector<double> softplus_floor(std::vector<double> x) {
  for (double& v : x)
    v = (v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v))) + kParamFloor;
  return x;
}

double g_value(const Var& raw) {
  const double x = raw->value.data[0];
  return (x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x))) + kParamFloor;
}

}  // namespace

Tensor topic_word_matrix(const TopicModel& m, int t) {
  const int K = m.config.n_topics, V = m.vocab_size;
  if (is_dynamic(m.config.kind)) {
    if (t < 0 || t >= m.n_slices)
      throw std::out_of_range("topic_word_matrix: slice " + std::to_string(t) + " out of range");
  } else if (t != 0) {
    throw std::out_of_range("topic_word_matrix: static model has a single slice");
  }

  Tensor beta({K, V});
  if (m.config.kind == ModelKind::sbvae) {
    for (int k = 0; k < K; ++k) {
      std::vector<double> row(static_cast<size_t>(V));
      for (int vv = 0; vv < V; ++vv)
        row[static_cast<size_t>(vv)] = m.decoder.W->value(k, vv) + m.decoder.b->value[vv];
      softmax_inplace(row);
      for (int vv = 0; vv < V; ++vv) beta(k, vv) = row[static_cast<size_t>(vv)];
    }
    return beta;
  }
  const Tensor& emb =
      is_dynamic(m.config.kind) ? m.alpha_mu[static_cast<size_t>(t)]->value : m.alpha->value;
  const int L = m.config.embedding_dim;
  for (int k = 0; k < K; ++k) {
    std::vector<double> row(static_cast<size_t>(V), 0.0);
    for (int l = 0; l < L; ++l) {
      const double a = emb(k, l);
      if (a == 0.0) continue;
      for (int vv = 0; vv < V; ++vv) row[static_cast<size_t>(vv)] += a * m.rho->value(l, vv);
    }
    softmax_inplace(row);
    for (int vv = 0; vv < V; ++vv) beta(k, vv) = row[static_cast<size_t>(vv)];
  }
  return beta;
}

Tensor eta_means(TopicModel& m) {
  if (!is_dynamic(m.config.kind))
    throw std::logic_error("eta_means: static model has no latent-mean chain");
  ZeroNoise zero;
  EtaChain chain = run_eta_chain(m, zero);
  const int D = m.proportion_dim();
  Tensor out({m.n_slices, D});
  for (int t = 0; t < m.n_slices; ++t)
    for (int d = 0; d < D; ++d) out(t, d) = chain.mu[static_cast<size_t>(t)]->value(0, d);
  return out;
}

DocScore score_document(TopicModel& m, const std::vector<double>& counts,
                        const std::vector<double>& norm, int slice, const Tensor* eta) {
  const ModelKind kind = m.config.kind;
  const int K = m.config.n_topics;
  const int D = m.proportion_dim();

  std::vector<double> enc_input = norm;
  if (is_dynamic(kind)) {
    if (!eta) throw std::invalid_argument("score_document: dynamic model needs eta means");
    if (slice < 0 || slice >= m.n_slices)
      throw std::out_of_range("score_document: slice out of range");
    for (int d = 0; d < D; ++d) enc_input.push_back((*eta)(slice, d));
  }
  const std::vector<double> h = encoder_eval(m, enc_input);
  std::vector<double> h1 = linear_eval(m.head1, h);
  std::vector<double> h2 = linear_eval(m.head2, h);

  DocScore score;
  if (kind == ModelKind::etm || kind == ModelKind::detm) {
    score.mixture = h1;
    softmax_inplace(score.mixture);
    GaussianParams q{h1, h2};
    GaussianParams p;
    p.mu.assign(h1.size(), 0.0);
    if (kind == ModelKind::detm)
      for (int d = 0; d < D; ++d) p.mu[static_cast<size_t>(d)] = (*eta)(slice, d);
    p.log_var.assign(h1.size(), kind == ModelKind::etm ? 0.0 : std::log(m.config.a_sq));
    score.kl = kld_gaussian_gaussian(q, p);
  } else if (kind == ModelKind::dedp) {
    score.mixture = stick_break(logistic_stick_prep(h1)).pi;
    GaussianParams q{h1, h2};
    GaussianParams p;
    p.mu.resize(h1.size());
    for (int d = 0; d < D; ++d) p.mu[static_cast<size_t>(d)] = (*eta)(slice, d);
    p.log_var.assign(h1.size(), std::log(m.config.a_sq));
    score.kl = kld_gaussian_gaussian(q, p);
  } else {
    h1 = softplus_floor(std::move(h1));
    h2 = softplus_floor(std::move(h2));
    std::vector<double> v(h1.size());
    if (kind == ModelKind::sbvae) {
      // Kumaraswamy mean: b B(1 + 1/a, b).
      for (size_t i = 0; i < v.size(); ++i)
        v[i] = h2[i] * std::exp(log_beta_fn(1.0 + 1.0 / h1[i], h2[i]));
      score.kl = kld_kumaraswamy_beta({h1, h2}, m.config.gem_beta, m.config.taylor_terms);
    } else {
      for (size_t i = 0; i < v.size(); ++i) v[i] = h1[i] / (h1[i] + h2[i]);
      const double prior_b =
          kind == ModelKind::ehdp ? std::max(g_value(m.g1_raw) / g_value(m.g2_raw), kParamFloor)
                                  : m.config.gem_beta;
      BetaParams prior;
      prior.a.assign(v.size(), 1.0);
      prior.b.assign(v.size(), prior_b);
      score.kl = kld_beta_beta({h1, h2}, prior);
    }
    for (double& x : v) x = std::clamp(x, 1e-6, 1.0 - 1e-6);
    score.mixture = stick_break(v).pi;
  }

  const Tensor beta = topic_word_matrix(m, is_dynamic(kind) ? slice : 0);
  double recon = 0.0;
  for (int vv = 0; vv < m.vocab_size; ++vv) {
    const double c = counts[static_cast<size_t>(vv)];
    if (c == 0.0) continue;
    double p = 0.0;
    for (int k = 0; k < K; ++k) p += score.mixture[static_cast<size_t>(k)] * beta(k, vv);
    recon += c * std::log(p);
  }
  score.recon = recon;
  return score;
}

// --- training ---

namespace {

double validation_perplexity(TopicModel& m, const std::vector<BowVector>& bows,
                             const std::vector<int>& slices, const Tensor* eta) {
  double loglik = 0.0;
  int64_t tokens = 0;
  int used = 0;
  for (size_t i = 0; i < bows.size(); ++i) {
    if (bows[i].length <= 0) continue;
    std::vector<double> counts(static_cast<size_t>(m.vocab_size), 0.0);
    std::vector<double> norm(static_cast<size_t>(m.vocab_size), 0.0);
    for (const auto& [idx, cnt] : bows[i].entries) {
      counts[static_cast<size_t>(idx)] = cnt;
      norm[static_cast<size_t>(idx)] =
          static_cast<double>(cnt) / static_cast<double>(bows[i].length);
    }
    const int slice = slices.empty() ? 0 : slices[i];
    DocScore s = score_document(m, counts, norm, slice, eta);
    loglik += s.recon - s.kl;
    tokens += bows[i].length;
    ++used;
  }
  if (used == 0 || tokens == 0)
    throw std::invalid_argument("perplexity: no non-empty documents to evaluate");
  return std::exp(-loglik / static_cast<double>(tokens));
}

void check_finite(const ElboBreakdown& elbo, int epoch, int batch) {
  if (!std::isfinite(elbo.reconstruction)) throw NumericalAbort("reconstruction", epoch, batch);
  for (const auto& [name, v] : elbo.kl_terms)
    if (!std::isfinite(v)) throw NumericalAbort(name, epoch, batch);
  if (!std::isfinite(elbo.total)) throw NumericalAbort("total", epoch, batch);
}

}  // namespace

FitResult fit(TopicModel& model, const FitData& data) {
  const ModelConfig& cfg = model.config;
  if (data.train.empty()) throw std::invalid_argument("fit: no training documents");
  if (is_dynamic(cfg.kind) && data.train_slice.size() != data.train.size())
    throw std::invalid_argument("fit: dynamic model needs one slice id per training document");

  ParamList named = model.parameters();
  std::vector<Var> params;
  for (auto& [name, p] : named) params.push_back(p);
  Adam opt(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.weight_decay);

  Rng rng(cfg.seed + 0x5eed);
  RngNoise noise(rng);
  const int n_train = static_cast<int>(data.train.size());
  std::vector<int> order(static_cast<size_t>(n_train));
  for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;

  const std::vector<BowVector>& val_bows = data.validation.empty() ? data.train : data.validation;
  const std::vector<int>& val_slices = data.validation.empty() ? data.train_slice : data.val_slice;

  FitResult result;
  std::vector<Tensor> best_params;
  std::vector<Tensor> best_state;
  int stall = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double anneal = kl_anneal_weight(epoch, cfg.anneal_epochs);
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(rng.uniform() * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }

    double epoch_total = 0.0;
    std::vector<std::pair<std::string, double>> epoch_kl;
    int batch_index = 0;
    for (int start = 0; start < n_train; start += cfg.batch_size, ++batch_index) {
      const int end = std::min(start + cfg.batch_size, n_train);
      std::vector<int> ids(order.begin() + start, order.begin() + end);
      Batch batch = make_batch(data.train, ids, model.vocab_size,
                               is_dynamic(cfg.kind) ? &data.train_slice : nullptr);
      const double chain_scale = static_cast<double>(ids.size()) / static_cast<double>(n_train);
      ForwardResult fwd = [&]() {
        try {
          return forward_batch(model, batch, noise, true, anneal, chain_scale);
        } catch (const std::domain_error& e) {
          // Samplers reject non-finite or degenerate encoder outputs; surface
          // that with the same forensics as a non-finite objective.
          throw NumericalAbort(std::string("sampler: ") + e.what(), epoch, batch_index);
        }
      }();
      check_finite(fwd.elbo, epoch, batch_index);

      Var loss = mul_scalar(fwd.annealed_elbo, -1.0 / static_cast<double>(ids.size()));
      if (!std::isfinite(loss->value.data[0])) throw NumericalAbort("loss", epoch, batch_index);
      opt.zero_grad();
      backward(loss);
      clip_gradients(params, cfg.clip_norm);
      opt.step();

      epoch_total += fwd.elbo.total;
      if (epoch_kl.empty())
        epoch_kl = fwd.elbo.kl_terms;
      else
        for (size_t k = 0; k < epoch_kl.size(); ++k)
          epoch_kl[k].second += fwd.elbo.kl_terms[k].second;
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.anneal_weight = anneal;
    metrics.elbo_per_doc = epoch_total / n_train;
    for (auto& [name, v] : epoch_kl) metrics.kl_per_doc.emplace_back(name, v / n_train);

    Tensor eta;
    const Tensor* eta_ptr = nullptr;
    if (is_dynamic(cfg.kind)) {
      eta = eta_means(model);
      eta_ptr = &eta;
    }
    metrics.val_perplexity = validation_perplexity(model, val_bows, val_slices, eta_ptr);
    metrics.effective_topics = static_cast<int>(
        effective_topics(model, data.train, data.train_slice, cfg.effective_topic_threshold)
            .size());
    result.epochs.push_back(metrics);

    const bool improved =
        result.best_epoch < 0 ||
        metrics.val_perplexity < result.best_val_perplexity * (1.0 - cfg.min_delta_frac);
    if (improved) {
      result.best_epoch = epoch;
      result.best_val_perplexity = metrics.val_perplexity;
      best_params.clear();
      for (const auto& p : params) best_params.push_back(p->value);
      best_state.clear();
      for (auto& [name, t] : model.state_tensors()) best_state.push_back(*t);
      stall = 0;
    } else if (++stall > cfg.patience) {
      break;
    }
  }

  if (!best_params.empty()) {
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
    auto state = model.state_tensors();
    for (size_t i = 0; i < state.size(); ++i) *state[i].second = best_state[i];
  }
  return result;
}

std::vector<int> effective_topics(TopicModel& model, const std::vector<BowVector>& bows,
                                  const std::vector<int>& slices, double threshold) {
  const int K = model.config.n_topics;
  std::vector<double> mean(static_cast<size_t>(K), 0.0);
  Tensor eta;
  const Tensor* eta_ptr = nullptr;
  if (is_dynamic(model.config.kind)) {
    eta = eta_means(model);
    eta_ptr = &eta;
  }
  int used = 0;
  for (size_t i = 0; i < bows.size(); ++i) {
    if (bows[i].length <= 0) continue;
    std::vector<double> counts(static_cast<size_t>(model.vocab_size), 0.0);
    std::vector<double> norm(static_cast<size_t>(model.vocab_size), 0.0);
    for (const auto& [idx, cnt] : bows[i].entries) {
      counts[static_cast<size_t>(idx)] = cnt;
      norm[static_cast<size_t>(idx)] =
          static_cast<double>(cnt) / static_cast<double>(bows[i].length);
    }
    DocScore s = score_document(model, counts, norm, slices.empty() ? 0 : slices[i], eta_ptr);
    for (int k = 0; k < K; ++k) mean[static_cast<size_t>(k)] += s.mixture[static_cast<size_t>(k)];
    ++used;
  }
  std::vector<int> active;
  if (used == 0) return active;
  for (int k = 0; k < K; ++k)
    if (mean[static_cast<size_t>(k)] / used >= threshold) active.push_back(k);
  return active;
}

std::vector<std::pair<int, double>> topic_words(const TopicModel& model, int k,
                                                std::optional<int> t, int n) {
  if (k < 0 || k >= model.config.n_topics)
    throw std::out_of_range("topic_words: topic " + std::to_string(k) + " out of range");
  if (is_dynamic(model.config.kind) && !t)
    throw std::invalid_argument("topic_words: dynamic model needs a slice");
  const Tensor beta = topic_word_matrix(model, t.value_or(0));
  std::vector<std::pair<int, double>> row(static_cast<size_t>(model.vocab_size));
  for (int vv = 0; vv < model.vocab_size; ++vv) row[static_cast<size_t>(vv)] = {vv, beta(k, vv)};
  std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  row.resize(static_cast<size_t>(std::min<int>(n, model.vocab_size)));
  return row;
}

namespace {

std::vector<std::pair<int, double>> rank_cosine(const std::vector<double>& query,
                                                const std::function<double(int, int)>& emb,
                                                int count, int dim, int exclude, int n) {
  double qn = 0.0;
  for (double x : query) qn += x * x;
  qn = std::sqrt(qn);
  std::vector<std::pair<int, double>> scored;
  for (int c = 0; c < count; ++c) {
    if (c == exclude) continue;
    double dot = 0.0, cn = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double e = emb(c, d);
      dot += query[static_cast<size_t>(d)] * e;
      cn += e * e;
    }
    const double denom = qn * std::sqrt(cn);
    scored.emplace_back(c, denom > 0.0 ? dot / denom : 0.0);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  scored.resize(std::min<size_t>(static_cast<size_t>(n), scored.size()));
  return scored;
}

}  // namespace

std::vector<std::pair<int, double>> nearest_neighbor_words(const TopicModel& model, int query,
                                                           int n) {
  if (!model.rho) throw std::logic_error("nearest_neighbors: model has no word embeddings");
  if (query < 0 || query >= model.vocab_size)
    throw std::out_of_range("nearest_neighbors: word index out of range");
  const int L = model.config.embedding_dim;
  std::vector<double> q(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) q[static_cast<size_t>(l)] = model.rho->value(l, query);
  return rank_cosine(
      q, [&model](int vv, int l) { return model.rho->value(l, vv); }, model.vocab_size, L, query,
      n);
}

std::vector<std::pair<int, double>> nearest_neighbor_topics(const TopicModel& model, int query,
                                                            int n, int t) {
  if (!model.rho) throw std::logic_error("nearest_neighbors: model has no word embeddings");
  if (query < 0 || query >= model.vocab_size)
    throw std::out_of_range("nearest_neighbors: word index out of range");
  const int L = model.config.embedding_dim;
  std::vector<double> q(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) q[static_cast<size_t>(l)] = model.rho->value(l, query);
  const Tensor& emb = is_dynamic(model.config.kind)
                          ? model.alpha_mu.at(static_cast<size_t>(t))->value
                          : model.alpha->value;
  return rank_cosine(
      q, [&emb](int k, int l) { return emb(k, l); }, model.config.n_topics, L, -1, n);
}

int load_pretrained_embeddings(TopicModel& model, const Vocabulary& vocab,
                               const std::string& path) {
  if (!model.rho) throw std::logic_error("load_pretrained_embeddings: model has no embeddings");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_pretrained_embeddings: cannot open " + path);
  const int L = model.config.embedding_dim;
  std::string line;
  int applied = 0;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    auto idx = vocab.lookup(token);
    std::vector<double> vec;
    double x;
    while (ss >> x) vec.push_back(x);
    if (static_cast<int>(vec.size()) != L)
      throw std::runtime_error("embeddings line " + std::to_string(line_no) + ": expected " +
                               std::to_string(L) + " values, got " + std::to_string(vec.size()));
    if (!idx) continue;  // token outside the vocabulary keeps its init
    for (int l = 0; l < L; ++l) model.rho->value(l, *idx) = vec[static_cast<size_t>(l)];
    ++applied;
  }
  return applied;
}

}  // namespace sbtm
