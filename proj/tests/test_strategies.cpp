#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "icmc/strategies.hpp"

using namespace icmc;

namespace {
std::vector<int> random_tokens(std::size_t n, std::size_t k, RngStream& r) {
  std::vector<int> x(n);
  for (auto& v : x) v = static_cast<int>(r.uniform() * static_cast<double>(k));
  return x;
}
const std::vector<double> kOnes2{1, 1};
}  // namespace

TEST(CountTransitions, Alternating) {
  const std::vector<int> x{0, 1, 0, 1, 0};
  const auto c = count_transitions(x, 2, 5, 2);
  EXPECT_EQ(c(0, 1), 2);
  EXPECT_EQ(c(1, 0), 2);
  EXPECT_EQ(c(0, 0), 0);
  EXPECT_EQ(c(1, 1), 0);
  EXPECT_EQ(c.total(0), 2);
}

TEST(CountTransitions, SingleTokenEmpty) {
  const std::vector<int> x{1, 0, 0};
  const auto c = count_transitions(x, 2, 1, 2);
  for (long v : c.counts) EXPECT_EQ(v, 0);
}

TEST(CountTransitions, TrigramBruteForce) {
  RngStream r(4, 0);
  const auto x = random_tokens(200, 3, r);
  const auto c = count_transitions(x, 3, 200, 3);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int d = 0; d < 3; ++d) {
        long n = 0;
        for (std::size_t i = 2; i < x.size(); ++i) n += x[i - 2] == a && x[i - 1] == b && x[i] == d;
        EXPECT_EQ(c(static_cast<std::size_t>(a * 3 + b), static_cast<std::size_t>(d)), n);
      }
}

TEST(Unigram, Examples) {
  const std::vector<int> x{0, 0, 1};
  const auto e = unigram_predict(x, 0, 2, kOnes2);
  EXPECT_DOUBLE_EQ(e[0], 0.5);
  const auto p = unigram_predict(x, 3, 2, kOnes2);
  EXPECT_DOUBLE_EQ(p[0], 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(p[1], 2.0 / 5.0);
}

TEST(Unigram, ConvergesToStationary) {
  RngStream r(4, 1);
  const auto ep = sample_sequence(TransitionMatrix::from_ab(0.9, 0.5), 10000, r);
  const auto p = unigram_predict(ep.tokens, 10000, 2);
  EXPECT_NEAR(p[0], 5.0 / 6.0, 0.02);
}

TEST(Bigram, UnseenSourceIsUniform) {
  const std::vector<int> x{0, 0, 0, 1};
  const auto p = bigram_predict(x, 4, 2, kOnes2);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
}

TEST(Bigram, Substitution) {
  const std::vector<int> x{0, 1, 0, 1, 0};
  const auto p = bigram_predict(x, 5, 2, kOnes2);
  EXPECT_DOUBLE_EQ(p[0], 0.25);
  EXPECT_DOUBLE_EQ(p[1], 0.75);
}

TEST(Bigram, BruteForceK3) {
  RngStream r(4, 2);
  const auto x = random_tokens(500, 3, r);
  for (std::size_t upto : {1u, 2u, 37u, 500u}) {
    const auto p = bigram_predict(x, upto, 3);
    const int last = x[upto - 1];
    std::vector<double> c(3, 0.0);
    double n = 0;
    for (std::size_t s = 1; s < upto; ++s)
      if (x[s - 1] == last) c[static_cast<std::size_t>(x[s])] += 1, n += 1;
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(p[j], (c[j] + 1.0) / (n + 3.0));
  }
}

TEST(Bigram, NeedsContext) {
  const std::vector<int> x{0};
  EXPECT_THROW(bigram_predict(x, 0, 2), InvalidParameter);
}

TEST(NGram, OrderTwoIsBigram) {
  RngStream r(4, 3);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_tokens(30, 3, r);
    const std::size_t upto = 1 + static_cast<std::size_t>(r.uniform() * 30);
    EXPECT_EQ(ngram_predict(x, upto, 2, 3), bigram_predict(x, upto, 3));
  }
}

TEST(NGram, UnseenContextUniform) {
  const std::vector<int> x{0, 0, 0, 0, 1, 1};
  const auto p = ngram_predict(x, 6, 3, 2);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
}

TEST(NGram, RecoversGeneratingTable) {
  RngStream r(4, 4);
  const auto g = sample_ngram_table(3, 2, r);
  const auto ep = sample_ngram_sequence(g, 10000, kNGramBurnIn, r);
  const auto p = ngram_predict(ep.tokens, 10000, 3, 2);
  const auto truth = ep.next_distribution();
  EXPECT_LT(total_variation(p, truth), 0.02);
}

TEST(BayesOracle, SingleTokenContext) {
  // P(next = x1 | x1) = E[a pi_0] / E[pi_0] under a, b ~ U(0,1), by symmetry the
  // same for either token.
  const std::vector<int> zero{0}, one{1};
  const auto p0 = bayes_oracle_k2(zero, 1, 400);
  const auto p1 = bayes_oracle_k2(one, 1, 400);
  EXPECT_NEAR(p0[0], 0.5908629074, 2e-5);
  EXPECT_NEAR(p1[1], p0[0], 1e-12);
  // Averaging over the first token's roles recovers the uniform marginal.
  EXPECT_NEAR(0.5 * (p0[0] + p1[0]), 0.5, 1e-6);
}

TEST(BayesOracle, CloseToBigramAtLength100) {
  double tv = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    RngStream r(6, i);
    const auto ep = sample_episode(prior::DirichletRows{}, 2, 100, r);
    tv += std::abs(bayes_oracle_k2(ep.tokens, 100, 200)[0] - bigram_predict(ep.tokens, 100, 2)[0]);
  }
  EXPECT_LT(tv / 100, 0.02);
}

TEST(BayesOracle, RunOfZeros) {
  const std::vector<int> x(20, 0);
  EXPECT_GT(bayes_oracle_k2(x, 20, 400)[0], 0.9);
}

TEST(BayesOracle, GridConverged) {
  for (std::uint64_t i = 0; i < 100; ++i) {
    RngStream r(7, i);
    const auto ep = sample_episode(prior::DirichletRows{}, 2, 1 + i % 60, r);
    const auto a = bayes_oracle_k2(ep.tokens, ep.tokens.size(), 200);
    const auto b = bayes_oracle_k2(ep.tokens, ep.tokens.size(), 400);
    EXPECT_LT(std::abs(a[0] - b[0]), 1e-4);
  }
}

TEST(BayesOracle, Preconditions) {
  const std::vector<int> x{0, 2};
  EXPECT_THROW(bayes_oracle_k2(x, 2, 400), InvalidInput);
  EXPECT_THROW(bayes_oracle_k2(x, 1, 50), InvalidParameter);
}

TEST(StrategyPredict, Dispatch) {
  RngStream r(4, 5);
  const auto x = random_tokens(40, 2, r);
  EXPECT_EQ(strategy_predict(strategy::Uniform{}, x, 10, 2), PredictiveDistribution::uniform(2));
  EXPECT_EQ(strategy_predict(strategy::Bigram{}, x, 10, 2), bigram_predict(x, 10, 2));
  EXPECT_EQ(strategy_predict(strategy::NGram{3}, x, 10, 2), ngram_predict(x, 10, 3, 2));
  EXPECT_EQ(strategy_predict(strategy::Unigram{}, x, 10, 2), unigram_predict(x, 10, 2));
  EXPECT_EQ(strategy_predict(strategy::BayesOracleK2{200}, x, 10, 2), bayes_oracle_k2(x, 10, 200));
  EXPECT_THROW(strategy_predict(strategy::NGram{1}, x, 10, 2), InvalidParameter);
}

TEST(Strategies, ValidOnEveryPrefix) {
  for (std::uint64_t i = 0; i < 1000; ++i) {
    RngStream r(9, i);
    const auto ep = sample_episode(prior::DirichletRows{}, 3, 30, r);
    for (std::size_t upto = 1; upto <= 30; ++upto) {
      EXPECT_TRUE(unigram_predict(ep.tokens, upto, 3).valid());
      EXPECT_TRUE(bigram_predict(ep.tokens, upto, 3).valid());
      if (upto >= 2) {
        EXPECT_TRUE(ngram_predict(ep.tokens, upto, 3, 3).valid(1e-12));
      }
    }
  }
}

TEST(Strategies, PrefixConsistency) {
  RngStream r(9, 5000);
  auto x = random_tokens(50, 2, r);
  const auto u = unigram_predict(x, 25, 2), b = bigram_predict(x, 25, 2), g = ngram_predict(x, 25, 3, 2);
  const auto o = bayes_oracle_k2(x, 25, 100);
  for (std::size_t i = 25; i < 50; ++i) x[i] = 1 - x[i];
  EXPECT_EQ(unigram_predict(x, 25, 2), u);
  EXPECT_EQ(bigram_predict(x, 25, 2), b);
  EXPECT_EQ(ngram_predict(x, 25, 3, 2), g);
  EXPECT_EQ(bayes_oracle_k2(x, 25, 100), o);
}

TEST(StrategiesEval, CrossEntropyOrdering) {
  StrategyEvalConfig c;
  c.episodes = 10000;
  c.oracle_subsample = 100;
  const auto r = strategies_eval(c);
  EXPECT_LT(r.ce_bigram + 0.01, r.ce_unigram);
  EXPECT_LT(r.ce_unigram + 0.01, r.ce_uniform);
  ASSERT_TRUE(r.tv_bigram_oracle.has_value());
  EXPECT_LT(*r.tv_bigram_oracle, 0.02);
}
