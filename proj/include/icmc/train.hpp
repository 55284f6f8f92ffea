#pragma once

// Optimizers, the online training loop (one fresh chain per training
// sequence), held-out evaluation against the reference strategies, and phase
// detection over the resulting metric log.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "icmc/chain.hpp"
#include "icmc/loss.hpp"
#include "icmc/minimal.hpp"
#include "icmc/numcore.hpp"
#include "icmc/strategies.hpp"
#include "icmc/transformer.hpp"

namespace icmc {

// ---------------------------------------------------------------- optimizers

struct SGD {
  double lr = 2e-3;
  double wd = 0.0;
};

struct AdamW {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double wd = 0.01;
};

using OptimizerConfig = std::variant<SGD, AdamW>;

/// p <- (1 - wd) p - lr g
inline void sgd_step(std::span<double> params, std::span<const double> grads, double lr, double wd) {
  if (params.size() != grads.size()) throw InvalidParameter("sgd_step: shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = (1.0 - wd) * params[i] - lr * grads[i];
}

struct AdamState {
  std::vector<double> m, v;
  std::size_t step = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

/// Decoupled weight decay, then the bias-corrected Adam update.
inline void adamw_step(AdamState& s, std::span<double> params, std::span<const double> grads, const AdamW& h) {
  if (params.size() != grads.size()) throw InvalidParameter("adamw_step: shape mismatch");
  if (s.m.size() != params.size() || s.v.size() != params.size())
    throw InvalidParameter("adamw_step: optimizer state has the wrong size");
  ++s.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * g;
    s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * g * g;
    params[i] -= h.lr * h.wd * params[i];
    params[i] -= h.lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + h.eps);
  }
}

// ---------------------------------------------------------------- models

struct MinimalConfig {
  std::size_t k = 2;
  std::size_t t = 100;
  double w_init = 0.0;
  std::optional<double> v_init;  // constant over all offsets; defaults to 1/t

  double v_start() const { return v_init.value_or(1.0 / static_cast<double>(t)); }
};

using ModelConfig = std::variant<TransformerConfig, MinimalConfig>;
using ModelParams = std::variant<TransformerParams, MinimalParams>;

inline std::size_t model_k(const ModelConfig& m) {
  return std::visit([](const auto& c) { return c.k; }, m);
}
inline std::size_t model_t(const ModelConfig& m) {
  return std::visit([](const auto& c) { return c.t; }, m);
}

inline ModelParams init_model(const ModelConfig& m, RngStream& rng) {
  if (const auto* tc = std::get_if<TransformerConfig>(&m)) return init_params(*tc, rng);
  const auto& mc = std::get<MinimalConfig>(m);
  if (mc.k < 2 || mc.t < 1) throw InvalidParameter("minimal model needs k >= 2 and t >= 1");
  return MinimalParams::constant(mc.k, mc.t, mc.w_init, mc.v_start());
}

inline Matrix model_logits(const ModelParams& p, std::span<const int> tokens) {
  return std::visit(
      [&](const auto& q) -> Matrix {
        if constexpr (std::is_same_v<std::decay_t<decltype(q)>, TransformerParams>)
          return forward(q, tokens);
        else
          return minimal_forward(q, tokens);
      },
      p);
}

inline std::vector<double> model_gradient(const ModelParams& p, std::span<const int> tokens, const LossKind& kind,
                                          double* loss) {
  return std::visit(
      [&](const auto& q) -> std::vector<double> {
        if constexpr (std::is_same_v<std::decay_t<decltype(q)>, TransformerParams>)
          return backward(q, tokens, kind, loss).flatten();
        else
          return minimal_backward(q, tokens, kind, loss).flatten();
      },
      p);
}

inline std::vector<double> model_flatten(const ModelParams& p) {
  return std::visit([](const auto& q) { return q.flatten(); }, p);
}
inline void model_assign(ModelParams& p, std::span<const double> flat) {
  std::visit([&](auto& q) { q.assign(flat); }, p);
}

// ---------------------------------------------------------------- config

struct TrainingConfig {
  ModelConfig model = TransformerConfig{};
  ChainPrior prior = prior::DirichletRows{};
  std::vector<ChainPrior> eval_priors{prior::DirichletRows{}};
  std::size_t n = 2;  // task order; n >= 3 draws a random n-gram table per sequence
  std::size_t t = 100;
  std::size_t batch = 64;
  OptimizerConfig optimizer = AdamW{};
  LossKind loss = CrossEntropy{};
  std::size_t total_examples = 1'000'000;
  std::size_t eval_every = 16'384;
  std::size_t eval_episodes = 1024;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  std::size_t k() const { return model_k(model); }

  void validate() const {
    if (const auto* tc = std::get_if<TransformerConfig>(&model)) tc->validate();
    if (k() < 2) throw InvalidParameter("vocabulary needs at least two tokens");
    if (n < 2) throw InvalidParameter("task order must be at least 2");
    if (t < 2 || t > model_t(model)) throw InvalidParameter("sequence length must lie in [2, model t]");
    if (n > 2 && t <= n - 1) throw InvalidParameter("sequence must be longer than n-1");
    if (batch == 0 || eval_every == 0 || eval_episodes == 0 || threads == 0)
      throw InvalidParameter("batch, eval_every, eval_episodes and threads must be positive");
    if (eval_priors.empty()) throw InvalidParameter("at least one evaluation prior is required");
    check_loss(loss);
    std::visit(
        [](const auto& o) {
          if (!(o.lr >= 0.0) || !(o.wd >= 0.0)) throw InvalidParameter("learning rate and weight decay must be >= 0");
        },
        optimizer);
  }
};

/// Stream ids: training example i uses stream i; evaluation and initialization
/// live in disjoint high ranges.
inline constexpr std::uint64_t kEvalStreamBase = std::uint64_t{1} << 62;
inline constexpr std::uint64_t kInitStream = std::uint64_t{1} << 63;

inline Episode draw_training_episode(const TrainingConfig& cfg, const ChainPrior& pr, RngStream& rng) {
  if (cfg.n == 2) return sample_episode(pr, cfg.k(), cfg.t, rng);
  const auto table = sample_ngram_table(cfg.n, cfg.k(), rng);
  return sample_ngram_sequence(table, cfg.t, kNGramBurnIn, rng);
}

inline std::vector<Episode> make_eval_set(const TrainingConfig& cfg, std::size_t prior_index) {
  std::vector<Episode> out;
  out.reserve(cfg.eval_episodes);
  for (std::size_t e = 0; e < cfg.eval_episodes; ++e) {
    RngStream rng(cfg.seed, kEvalStreamBase + (static_cast<std::uint64_t>(prior_index) << 32) + e);
    out.push_back(draw_training_episode(cfg, cfg.eval_priors.at(prior_index), rng));
  }
  return out;
}

// ---------------------------------------------------------------- evaluation

struct PriorMetrics {
  std::string eval_prior;
  double kl_truth = 0.0;
  double kl_uniform = 0.0;
  double kl_unigram = 0.0;
  double kl_bigram = 0.0;
  std::optional<double> kl_ngram;
};

struct MetricsRecord {
  std::size_t examples_seen = 0;
  double train_loss = 0.0;
  std::vector<PriorMetrics> per_prior;
};

/// kl_truth of each reference strategy on an evaluation set.
struct StrategyBaselines {
  std::string eval_prior;
  double uniform = 0.0, unigram = 0.0, bigram = 0.0;
  std::optional<double> ngram;
};

/// Last-position predictions of the reference strategies.
struct StrategyOutputs {
  PredictiveDistribution truth, uniform, unigram, bigram;
  std::optional<PredictiveDistribution> ngram;
};

inline StrategyOutputs strategy_outputs(const Episode& ep, std::size_t k, std::size_t n) {
  const std::size_t T = ep.tokens.size();
  StrategyOutputs o{ep.next_distribution(), PredictiveDistribution::uniform(k), unigram_predict(ep.tokens, T, k),
                    bigram_predict(ep.tokens, T, k), std::nullopt};
  if (n > 2) o.ngram = ngram_predict(ep.tokens, T, n, k);
  return o;
}

/// Mean last-position KLs. `predict` maps an episode to the model's next-token
/// distribution; model-vs-strategy KLs are KL(model || strategy).
template <typename Predict>
PriorMetrics evaluate_predictor(Predict&& predict, const std::vector<Episode>& eval_set,
                                const std::vector<StrategyOutputs>& refs, const std::string& name, std::size_t n,
                                std::size_t threads = 1) {
  const std::size_t N = eval_set.size();
  std::vector<double> truth(N), uni(N), ug(N), bg(N), ng(N, 0.0);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t e = lo; e < hi; ++e) {
      const PredictiveDistribution q = predict(eval_set[e]);
      truth[e] = kl(refs[e].truth, q);
      uni[e] = kl(q, refs[e].uniform);
      ug[e] = kl(q, refs[e].unigram);
      bg[e] = kl(q, refs[e].bigram);
      if (refs[e].ngram) ng[e] = kl(q, *refs[e].ngram);
    }
  };
  if (threads <= 1 || N < 2 * threads) {
    work(0, N);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, N * w / threads, N * (w + 1) / threads);
    for (auto& th : pool) th.join();
  }
  const double inv = N ? 1.0 / static_cast<double>(N) : 0.0;
  PriorMetrics m{name, tree_sum(truth) * inv, tree_sum(uni) * inv, tree_sum(ug) * inv, tree_sum(bg) * inv,
                 std::nullopt};
  if (n > 2) m.kl_ngram = tree_sum(ng) * inv;
  return m;
}

inline PredictiveDistribution model_predict_last(const ModelParams& p, const Episode& ep) {
  const Matrix logits = model_logits(p, ep.tokens);
  return softmax(logits.row(logits.rows - 1));
}

inline PriorMetrics evaluate(const ModelParams& p, const std::vector<Episode>& eval_set,
                             const std::vector<StrategyOutputs>& refs, const std::string& name, std::size_t n,
                             std::size_t threads = 1) {
  return evaluate_predictor([&](const Episode& ep) { return model_predict_last(p, ep); }, eval_set, refs, name, n,
                            threads);
}

inline StrategyBaselines strategy_baselines(const std::vector<StrategyOutputs>& refs, const std::string& name) {
  std::vector<double> u, ug, bg, ng;
  for (const auto& r : refs) {
    u.push_back(kl(r.truth, r.uniform));
    ug.push_back(kl(r.truth, r.unigram));
    bg.push_back(kl(r.truth, r.bigram));
    if (r.ngram) ng.push_back(kl(r.truth, *r.ngram));
  }
  const double inv = refs.empty() ? 0.0 : 1.0 / static_cast<double>(refs.size());
  StrategyBaselines b{name, tree_sum(u) * inv, tree_sum(ug) * inv, tree_sum(bg) * inv, std::nullopt};
  if (!ng.empty()) b.ngram = tree_sum(ng) * inv;
  return b;
}

// ---------------------------------------------------------------- training loop

enum class TrainingStatus { Completed, Stopped, NonFinite };

struct TrainingResult {
  std::vector<MetricsRecord> log;
  std::vector<StrategyBaselines> baselines;  // one per eval prior
  ModelParams params;                        // final (or last finite) parameters
  TrainingStatus status = TrainingStatus::Completed;
  std::size_t examples_seen = 0;
};

/// Called after each record; returning false stops training early.
using RecordCallback = std::function<bool(const MetricsRecord&, const ModelParams&)>;

namespace detail {
/// In-place pairwise reduction of per-example gradients into slot 0.
inline void tree_reduce(std::vector<std::vector<double>>& g) {
  for (std::size_t stride = 1; stride < g.size(); stride *= 2)
    for (std::size_t i = 0; i + stride < g.size(); i += 2 * stride)
      for (std::size_t j = 0; j < g[i].size(); ++j) g[i][j] += g[i + stride][j];
}
}  // namespace detail

inline TrainingResult run_training(const TrainingConfig& cfg, const RecordCallback& on_record = {}) {
  cfg.validate();
  RngStream init_rng(cfg.seed, kInitStream);
  TrainingResult res{{}, {}, init_model(cfg.model, init_rng), TrainingStatus::Completed, 0};
  const std::size_t k = cfg.k();

  std::vector<std::vector<Episode>> eval_sets;
  std::vector<std::vector<StrategyOutputs>> refs;
  for (std::size_t i = 0; i < cfg.eval_priors.size(); ++i) {
    eval_sets.push_back(make_eval_set(cfg, i));
    std::vector<StrategyOutputs> r;
    for (const auto& ep : eval_sets.back()) r.push_back(strategy_outputs(ep, k, cfg.n));
    res.baselines.push_back(strategy_baselines(r, prior_name(cfg.eval_priors[i])));
    refs.push_back(std::move(r));
  }

  auto record = [&](double train_loss) {
    MetricsRecord rec{res.examples_seen, train_loss, {}};
    for (std::size_t i = 0; i < eval_sets.size(); ++i)
      rec.per_prior.push_back(
          evaluate(res.params, eval_sets[i], refs[i], prior_name(cfg.eval_priors[i]), cfg.n, cfg.threads));
    res.log.push_back(rec);
    return !on_record || on_record(rec, res.params);
  };

  // The initial record reports the loss on the first evaluation set.
  {
    std::vector<double> l;
    for (const auto& ep : eval_sets[0]) l.push_back(sequence_loss(model_logits(res.params, ep.tokens), ep.tokens, cfg.loss));
    if (!record(tree_sum(l) / static_cast<double>(l.size()))) {
      res.status = TrainingStatus::Stopped;
      return res;
    }
  }

  auto flat = model_flatten(res.params);
  AdamState adam = AdamState::zeros(flat.size());
  std::vector<std::vector<double>> grads(cfg.batch);
  std::vector<double> losses(cfg.batch);
  std::vector<double> window_losses;
  std::size_t next_eval = cfg.eval_every;

  while (res.examples_seen < cfg.total_examples) {
    const std::size_t B = std::min(cfg.batch, cfg.total_examples - res.examples_seen);
    const std::uint64_t base = res.examples_seen;
    auto work = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t b = lo; b < hi; ++b) {
        RngStream rng(cfg.seed, base + b);
        const auto ep = draw_training_episode(cfg, cfg.prior, rng);
        grads[b] = model_gradient(res.params, ep.tokens, cfg.loss, &losses[b]);
      }
    };
    if (cfg.threads <= 1 || B < 2) {
      work(0, B);
    } else {
      const std::size_t W = std::min(cfg.threads, B);
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < W; ++w) pool.emplace_back(work, B * w / W, B * (w + 1) / W);
      for (auto& th : pool) th.join();
    }
    std::vector<std::vector<double>> g(grads.begin(), grads.begin() + static_cast<std::ptrdiff_t>(B));
    detail::tree_reduce(g);
    const double batch_loss = tree_sum(std::span<const double>(losses.data(), B)) / static_cast<double>(B);
    bool finite = std::isfinite(batch_loss);
    for (double& x : g[0]) {
      x /= static_cast<double>(B);
      finite = finite && std::isfinite(x);
    }
    if (!finite) {
      res.status = TrainingStatus::NonFinite;
      return res;
    }
    std::visit(
        [&](const auto& o) {
          if constexpr (std::is_same_v<std::decay_t<decltype(o)>, SGD>)
            sgd_step(flat, g[0], o.lr, o.wd);
          else
            adamw_step(adam, flat, g[0], o);
        },
        cfg.optimizer);
    for (double x : flat)
      if (!std::isfinite(x)) {
        res.status = TrainingStatus::NonFinite;
        return res;
      }
    model_assign(res.params, flat);
    res.examples_seen += B;
    window_losses.push_back(batch_loss * static_cast<double>(B));

    if (res.examples_seen >= next_eval || res.examples_seen == cfg.total_examples) {
      const double sum = tree_sum(window_losses);
      const auto seen = static_cast<double>(res.examples_seen - res.log.back().examples_seen);
      window_losses.clear();
      while (next_eval <= res.examples_seen) next_eval += cfg.eval_every;
      if (!record(sum / seen)) {
        res.status = TrainingStatus::Stopped;
        return res;
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------- phases

enum class StrategyId { Uniform, Unigram, Bigram, NGram };

inline std::string strategy_label(StrategyId s) {
  switch (s) {
    case StrategyId::Uniform: return "uniform";
    case StrategyId::Unigram: return "unigram";
    case StrategyId::Bigram: return "bigram";
    case StrategyId::NGram: return "ngram";
  }
  return "unknown";
}

struct PhaseSpan {
  StrategyId strategy;
  std::size_t first, last;  // record indices, inclusive
};

struct PhaseReport {
  std::vector<StrategyId> closest;  // per record
  std::optional<std::size_t> crossover_record;
  std::optional<std::size_t> crossover_examples;
  std::vector<PhaseSpan> spans;
  /// Longest run of consecutive records with kl_unigram < kl_bigram that ends
  /// before the final permanent reversal (0 when there is none).
  std::size_t unigram_window = 0;
};

/// `target` is the strategy whose permanent dominance marks the crossover.
inline PhaseReport detect_phases(const std::vector<MetricsRecord>& log, std::size_t prior_index = 0,
                                 StrategyId target = StrategyId::Bigram) {
  if (log.size() < 3) throw InvalidParameter("phase detection needs at least three records");
  PhaseReport r;
  for (const auto& rec : log) {
    const auto& m = rec.per_prior.at(prior_index);
    StrategyId best = StrategyId::Uniform;
    double v = m.kl_uniform;
    if (m.kl_unigram < v) best = StrategyId::Unigram, v = m.kl_unigram;
    if (m.kl_bigram < v) best = StrategyId::Bigram, v = m.kl_bigram;
    if (m.kl_ngram && *m.kl_ngram < v) best = StrategyId::NGram, v = *m.kl_ngram;
    r.closest.push_back(best);
  }
  for (std::size_t i = 0; i < r.closest.size(); ++i) {
    if (r.spans.empty() || r.spans.back().strategy != r.closest[i])
      r.spans.push_back({r.closest[i], i, i});
    else
      r.spans.back().last = i;
  }
  if (r.closest.back() == target) {
    std::size_t i = r.closest.size() - 1;
    while (i > 0 && r.closest[i - 1] == target) --i;
    // A log that starts at the target never crossed over.
    if (i > 0) {
      r.crossover_record = i;
      r.crossover_examples = log[i].examples_seen;
    }
  }
  // Unigram-ahead window before the last index from which bigram stays ahead.
  std::size_t stay = log.size();
  while (stay > 0) {
    const auto& m = log[stay - 1].per_prior.at(prior_index);
    if (!(m.kl_bigram < m.kl_unigram)) break;
    --stay;
  }
  if (stay < log.size()) {
    std::size_t run = 0;
    for (std::size_t i = 0; i < stay; ++i) {
      const auto& m = log[i].per_prior.at(prior_index);
      run = m.kl_unigram < m.kl_bigram ? run + 1 : 0;
      r.unigram_window = std::max(r.unigram_window, run);
    }
  }
  return r;
}

/// Layer-`layer` positional profile averaged over episodes.
inline std::vector<double> mean_positional_profile(const TransformerParams& p, const std::vector<Episode>& eps,
                                                   std::size_t layer = 0) {
  std::vector<double> acc;
  for (const auto& ep : eps) {
    const auto prof = effective_positional_profile(p, ep.tokens, layer);
    if (acc.empty()) acc.assign(prof.size(), 0.0);
    for (std::size_t i = 0; i < prof.size(); ++i) acc[i] += prof[i];
  }
  for (double& x : acc) x /= static_cast<double>(eps.size());
  return acc;
}

}  // namespace icmc
