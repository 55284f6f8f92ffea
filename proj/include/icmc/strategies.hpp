#pragma once

// In-context reference predictors: uniform, Dirichlet-smoothed unigram, bigram
// and n-gram posterior means, and a k=2 quadrature Bayes oracle.

#include <algorithm>
#include <cmath>
#include <optional>
#include <limits>
#include <span>
#include <variant>
#include <vector>

#include "icmc/chain.hpp"
#include "icmc/numcore.hpp"

namespace icmc {

/// Counts of n-gram transitions: row = base-k code of the n-1 preceding
/// tokens (oldest most significant), column = next token.
struct CountTable {
  std::size_t n = 2;
  std::size_t k = 2;
  std::vector<long> counts;  // contexts × k
  std::vector<long> totals;  // per context

  long operator()(std::size_t ctx, std::size_t j) const { return counts[ctx * k + j]; }
  long total(std::size_t ctx) const { return totals[ctx]; }
};

inline std::size_t context_code(std::span<const int> tokens, std::size_t end, std::size_t len, std::size_t k) {
  std::size_t code = 0;
  for (std::size_t i = end - len; i < end; ++i) code = code * k + static_cast<std::size_t>(tokens[i]);
  return code;
}

inline void check_tokens(std::span<const int> tokens, std::size_t k) {
  for (int x : tokens)
    if (x < 0 || static_cast<std::size_t>(x) >= k) throw InvalidInput("token out of range");
}

/// Transitions fully contained in positions 1..upto (1-based).
inline CountTable count_transitions(std::span<const int> tokens, std::size_t n, std::size_t upto, std::size_t k) {
  if (n < 2) throw InvalidParameter("count order must be at least 2");
  if (upto > tokens.size()) throw InvalidParameter("upto beyond sequence end");
  const std::size_t rows = checked_pow(k, n - 1);
  CountTable c{n, k, std::vector<long>(rows * k, 0), std::vector<long>(rows, 0)};
  for (std::size_t s = n; s <= upto; ++s) {  // target x_s at index s-1
    const std::size_t ctx = context_code(tokens, s - 1, n - 1, k);
    const auto next = static_cast<std::size_t>(tokens[s - 1]);
    ++c.counts[ctx * k + next];
    ++c.totals[ctx];
  }
  return c;
}

inline std::vector<double> default_alpha(std::span<const double> alpha, std::size_t k) {
  if (alpha.empty()) return std::vector<double>(k, 1.0);
  if (alpha.size() != k) throw InvalidParameter("alpha length must equal k");
  for (double a : alpha)
    if (!(a > 0.0)) throw InvalidParameter("alpha entries must be positive");
  return {alpha.begin(), alpha.end()};
}

/// (c_i + alpha_i) / (upto + sum alpha) over positions 1..upto.
inline PredictiveDistribution unigram_predict(std::span<const int> tokens, std::size_t upto, std::size_t k,
                                              std::span<const double> alpha = {}) {
  const auto al = default_alpha(alpha, k);
  if (upto > tokens.size()) throw InvalidParameter("upto beyond sequence end");
  std::vector<double> c(k, 0.0);
  for (std::size_t i = 0; i < upto; ++i) c[static_cast<std::size_t>(tokens[i])] += 1.0;
  double denom = static_cast<double>(upto);
  for (double a : al) denom += a;
  for (std::size_t i = 0; i < k; ++i) c[i] = (c[i] + al[i]) / denom;
  return {std::move(c)};
}

/// Posterior mean conditioned on the last n-1 tokens, counts over 1..upto.
inline PredictiveDistribution ngram_predict(std::span<const int> tokens, std::size_t upto, std::size_t n,
                                            std::size_t k, std::span<const double> alpha = {}) {
  const auto al = default_alpha(alpha, k);
  if (upto < n - 1) throw InvalidParameter("context shorter than n-1");
  const auto counts = count_transitions(tokens, n, upto, k);
  const std::size_t ctx = context_code(tokens, upto, n - 1, k);
  double denom = static_cast<double>(counts.total(ctx));
  for (double a : al) denom += a;
  std::vector<double> p(k);
  for (std::size_t j = 0; j < k; ++j) p[j] = (static_cast<double>(counts(ctx, j)) + al[j]) / denom;
  return {std::move(p)};
}

/// (c_ij + alpha_j) / (N_i + sum alpha) for i = x_upto.
inline PredictiveDistribution bigram_predict(std::span<const int> tokens, std::size_t upto, std::size_t k,
                                             std::span<const double> alpha = {}) {
  if (upto < 1) throw InvalidParameter("bigram prediction needs at least one token");
  return ngram_predict(tokens, upto, 2, k, alpha);
}

/// Exact posterior predictive for k=2 under a, b ~ U(0,1), x_1 ~ pi(a, b),
/// by midpoint quadrature over (a, b) with log-space weights.
inline PredictiveDistribution bayes_oracle_k2(std::span<const int> tokens, std::size_t upto,
                                              std::size_t grid_size = 400) {
  if (grid_size < 100) throw InvalidParameter("oracle grid must have at least 100 points per axis");
  if (upto < 1 || upto > tokens.size()) throw InvalidParameter("oracle position out of range");
  check_tokens(tokens.first(upto), 2);
  const auto counts = count_transitions(tokens, 2, upto, 2);
  const double c00 = static_cast<double>(counts(0, 0)), c01 = static_cast<double>(counts(0, 1));
  const double c10 = static_cast<double>(counts(1, 0)), c11 = static_cast<double>(counts(1, 1));
  const int first = tokens[0];
  const int last = tokens[upto - 1];
  const double h = 1.0 / static_cast<double>(grid_size);

  // Log-sum-exp of log w and of log w + log P(last -> 0).
  double max_lw = -std::numeric_limits<double>::infinity();
  std::vector<double> lw(grid_size * grid_size), p0(grid_size * grid_size);
  for (std::size_t ia = 0; ia < grid_size; ++ia) {
    const double a = (static_cast<double>(ia) + 0.5) * h;
    const double la = std::log(a), l1a = std::log1p(-a);
    for (std::size_t ib = 0; ib < grid_size; ++ib) {
      const double b = (static_cast<double>(ib) + 0.5) * h;
      const double lb = std::log(b), l1b = std::log1p(-b);
      // pi = (1-b, 1-a) / (2 - a - b)
      const double lpi = (first == 0 ? l1b : l1a) - std::log(2.0 - a - b);
      const double w = lpi + c00 * la + c01 * l1a + c10 * l1b + c11 * lb;
      const std::size_t idx = ia * grid_size + ib;
      lw[idx] = w;
      p0[idx] = last == 0 ? a : 1.0 - b;
      max_lw = std::max(max_lw, w);
    }
  }
  double z = 0.0, num = 0.0;
  for (std::size_t i = 0; i < lw.size(); ++i) {
    const double w = std::exp(lw[i] - max_lw);
    z += w;
    num += w * p0[i];
  }
  const double q = num / z;
  return {{q, 1.0 - q}};
}

namespace strategy {
struct Uniform {};
struct Unigram {};
struct Bigram {};
struct NGram {
  std::size_t n = 3;
};
struct BayesOracleK2 {
  std::size_t grid = 400;
};
}  // namespace strategy

using StrategyKind =
    std::variant<strategy::Uniform, strategy::Unigram, strategy::Bigram, strategy::NGram, strategy::BayesOracleK2>;

inline PredictiveDistribution strategy_predict(const StrategyKind& kind, std::span<const int> tokens, std::size_t upto,
                                               std::size_t k, std::span<const double> alpha = {}) {
  struct V {
    std::span<const int> tokens;
    std::size_t upto, k;
    std::span<const double> alpha;
    PredictiveDistribution operator()(const strategy::Uniform&) const { return PredictiveDistribution::uniform(k); }
    PredictiveDistribution operator()(const strategy::Unigram&) const {
      return unigram_predict(tokens, upto, k, alpha);
    }
    PredictiveDistribution operator()(const strategy::Bigram&) const { return bigram_predict(tokens, upto, k, alpha); }
    PredictiveDistribution operator()(const strategy::NGram& g) const {
      if (g.n < 2) throw InvalidParameter("n-gram order must be at least 2");
      return ngram_predict(tokens, upto, g.n, k, alpha);
    }
    PredictiveDistribution operator()(const strategy::BayesOracleK2& o) const {
      if (k != 2) throw InvalidParameter("Bayes oracle is defined for k = 2");
      return bayes_oracle_k2(tokens, upto, o.grid);
    }
  };
  return std::visit(V{tokens, upto, k, alpha}, kind);
}

// ---------------------------------------------------------------- held-out comparison

struct StrategyEvalConfig {
  ChainPrior prior = prior::DirichletRows{};
  std::size_t k = 2;
  std::size_t t = 100;  // context length; each episode carries t+1 tokens
  std::size_t n = 2;
  std::size_t episodes = 10000;
  std::size_t oracle_subsample = 100;
  std::size_t oracle_grid = 200;
  std::uint64_t seed = 0;
};

struct StrategyEvalReport {
  double ce_uniform = 0.0, ce_unigram = 0.0, ce_bigram = 0.0;
  std::optional<double> ce_ngram;
  std::optional<double> tv_bigram_oracle;  // k = 2 Markov only
  std::size_t episodes = 0, oracle_episodes = 0;
};

/// Mean cross-entropy of each strategy on the final token of fresh episodes
/// (episode i from stream i) and, for k = 2, the mean total variation between
/// the bigram rule and the exact posterior on the first `oracle_subsample`.
inline StrategyEvalReport strategies_eval(const StrategyEvalConfig& c) {
  if (c.episodes == 0 || c.t < std::max<std::size_t>(c.n, 2)) throw InvalidParameter("need episodes and t >= n");
  StrategyEvalReport r;
  r.episodes = c.episodes;
  std::vector<double> u(c.episodes), ug(c.episodes), bg(c.episodes), ng(c.episodes), tv;
  auto nll = [](const PredictiveDistribution& q, int y) {
    return -std::log(std::max(q[static_cast<std::size_t>(y)], kKlEpsilon));
  };
  for (std::size_t i = 0; i < c.episodes; ++i) {
    RngStream rng(c.seed, i);
    const Episode ep = c.n == 2 ? sample_episode(c.prior, c.k, c.t + 1, rng)
                                : sample_ngram_sequence(sample_ngram_table(c.n, c.k, rng), c.t + 1, kNGramBurnIn, rng);
    const int y = ep.tokens[c.t];
    u[i] = std::log(static_cast<double>(c.k));
    ug[i] = nll(unigram_predict(ep.tokens, c.t, c.k), y);
    const auto b = bigram_predict(ep.tokens, c.t, c.k);
    bg[i] = nll(b, y);
    if (c.n > 2) ng[i] = nll(ngram_predict(ep.tokens, c.t, c.n, c.k), y);
    if (c.k == 2 && c.n == 2 && i < c.oracle_subsample)
      tv.push_back(total_variation(b, bayes_oracle_k2(ep.tokens, c.t, c.oracle_grid)));
  }
  const double inv = 1.0 / static_cast<double>(c.episodes);
  r.ce_uniform = tree_sum(u) * inv;
  r.ce_unigram = tree_sum(ug) * inv;
  r.ce_bigram = tree_sum(bg) * inv;
  if (c.n > 2) r.ce_ngram = tree_sum(ng) * inv;
  if (!tv.empty()) {
    r.tv_bigram_oracle = tree_sum(tv) / static_cast<double>(tv.size());
    r.oracle_episodes = tv.size();
  }
  return r;
}

}  // namespace icmc
