#include <cmath>

#include <gtest/gtest.h>

#include "icmc/chain.hpp"
#include "icmc/minimal.hpp"
#include "support/reference.hpp"

using namespace icmc;

namespace {
std::vector<int> random_tokens(std::size_t n, std::size_t k, RngStream& r) {
  std::vector<int> x(n);
  for (auto& v : x) v = static_cast<int>(r.categorical(std::vector<double>(k, 1.0)));
  return x;
}

MinimalParams random_params(std::size_t k, std::size_t t, RngStream& r, bool integer) {
  MinimalParams P{Matrix(k, k), std::vector<double>(t)};
  auto draw = [&] { return integer ? std::floor(r.uniform(-3.0, 4.0)) : r.normal(); };
  for (auto& w : P.W.data) w = draw();
  for (auto& v : P.v) v = draw();
  return P;
}

// counts of transitions prev -> i observed up to position p, out of x_p
Matrix transition_counts(const std::vector<int>& x, std::size_t k) {
  Matrix out(x.size(), k);
  for (std::size_t p = 0; p < x.size(); ++p)
    for (std::size_t s = 1; s <= p; ++s)
      if (x[s - 1] == x[p]) out(p, static_cast<std::size_t>(x[s])) += 1.0;
  return out;
}

double max_rel_error(const MinimalParams& P, const std::vector<int>& x, const LossKind& kind, double h = 1e-5) {
  const auto g = minimal_backward(P, x, kind);
  auto loss = [&](std::span<const double> th) {
    auto Q = P;
    Q.assign(th);
    return ref::loss(ref::minimal_logits(Q, x), x, kind);
  };
  return grad_check(loss, P.flatten(), g.flatten(), h);
}
}  // namespace

TEST(MinimalForward, BigramConstructionCountsTransitions) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    RngStream r(3, s);
    const std::size_t k = 2 + s % 3;
    const auto x = random_tokens(25, k, r);
    const auto f = minimal_forward(minimal_bigram_construction(k, 25), x);
    const auto c = transition_counts(x, k);
    for (std::size_t p = 0; p < x.size(); ++p)
      for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(f(p, i), c(p, i));
  }
}

TEST(MinimalForward, UnigramConstructionCountsTokens) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    RngStream r(4, s);
    const std::size_t k = 2 + s % 3;
    const auto x = random_tokens(25, k, r);
    const auto f = minimal_forward(minimal_unigram_construction(k, 25), x);
    std::vector<double> n(k, 0.0);
    for (std::size_t p = 0; p < x.size(); ++p) {
      n[static_cast<std::size_t>(x[p])] += 1.0;
      for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(f(p, i), n[i]);
    }
  }
}

TEST(MinimalForward, HandExample) {
  // W = I, v = (0,1): tokens 0,1,0 -> at p=2 one transition 0->1 observed
  MinimalParams P{Matrix::identity(2), {0.0, 1.0, 0.0}};
  const std::vector<int> x{0, 1, 0};
  const auto f = minimal_forward(P, x);
  EXPECT_EQ(f(0, 0), 0.0);
  EXPECT_EQ(f(0, 1), 0.0);
  EXPECT_EQ(f(1, 0), 0.0);
  EXPECT_EQ(f(1, 1), 0.0);
  EXPECT_EQ(f(2, 0), 0.0);
  EXPECT_EQ(f(2, 1), 1.0);
}

TEST(MinimalForward, ZeroWGivesZeroLogits) {
  RngStream r(5, 0);
  auto P = random_params(3, 12, r, false);
  P.W = Matrix(3, 3);
  const auto f = minimal_forward(P, random_tokens(12, 3, r));
  for (double v : f.data) EXPECT_EQ(v, 0.0);
}

TEST(MinimalForward, MatchesBruteForceExactlyOnIntegerParams) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    RngStream r(6, s);
    const std::size_t k = 2 + s % 4, t = 1 + s % 20;
    const auto P = random_params(k, t, r, true);
    const auto x = random_tokens(t, k, r);
    const auto f = minimal_forward(P, x);
    const auto g = ref::minimal_logits(P, x);
    for (std::size_t p = 0; p < t; ++p)
      for (std::size_t i = 0; i < k; ++i) ASSERT_EQ(f(p, i), static_cast<double>(g[p][i])) << s;
  }
}

TEST(MinimalForward, MatchesBruteForceOnRealParams) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    RngStream r(7, s);
    const std::size_t k = 2 + s % 4, t = 1 + s % 20;
    const auto P = random_params(k, t, r, false);
    const auto x = random_tokens(t, k, r);
    const auto f = minimal_forward(P, x);
    const auto g = ref::minimal_logits(P, x);
    for (std::size_t p = 0; p < t; ++p)
      for (std::size_t i = 0; i < k; ++i)
        EXPECT_NEAR(f(p, i), static_cast<double>(g[p][i]), 1e-12 * (1.0 + std::abs(static_cast<double>(g[p][i]))));
  }
}

TEST(MinimalForward, Bilinear) {
  RngStream r(8, 0);
  const auto P = random_params(3, 15, r, false);
  const auto x = random_tokens(15, 3, r);
  const auto f = minimal_forward(P, x);
  for (double alpha : {-2.0, 0.5, 3.0})
    for (double beta : {-1.5, 0.25, 4.0}) {
      auto Q = P;
      for (auto& w : Q.W.data) w *= alpha;
      for (auto& v : Q.v) v *= beta;
      const auto g = minimal_forward(Q, x);
      for (std::size_t e = 0; e < f.data.size(); ++e)
        EXPECT_NEAR(g.data[e], alpha * beta * f.data[e], 1e-12 * (1.0 + std::abs(f.data[e])));
    }
}

TEST(MinimalForward, CausalPrefix) {
  RngStream r(9, 0);
  const auto P = random_params(3, 20, r, false);
  const auto x = random_tokens(20, 3, r);
  const auto full = minimal_forward(P, x);
  for (std::size_t n = 1; n < 20; ++n) {
    const auto part = minimal_forward(P, std::span<const int>(x).first(n));
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(part(p, i), full(p, i));
  }
}

TEST(MinimalForward, Validation) {
  MinimalParams P{Matrix::identity(2), {1.0, 1.0}};
  EXPECT_THROW(minimal_forward(P, std::vector<int>{0, 1, 0}), InvalidInput);
  EXPECT_THROW(minimal_forward(P, std::vector<int>{0, 2}), InvalidInput);
  EXPECT_THROW(minimal_forward(P, std::vector<int>{-1}), InvalidInput);
  MinimalParams bad{Matrix(2, 3), {1.0}};
  EXPECT_THROW(minimal_forward(bad, std::vector<int>{0}), InvalidParameter);
  MinimalParams tiny{Matrix(1, 1), {1.0}};
  EXPECT_THROW(minimal_forward(tiny, std::vector<int>{0}), InvalidParameter);
}

TEST(MinimalBackward, MatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    RngStream r(10, s);
    const std::size_t k = 2 + s % 2;
    auto P = random_params(k, 10, r, false);
    for (auto& w : P.W.data) w *= 0.3;
    for (auto& v : P.v) v *= 0.3;
    const auto x = random_tokens(10, k, r);
    EXPECT_LT(max_rel_error(P, x, CrossEntropy{}), 1e-7) << s;
    // hinge is piecewise linear: the wider step only shrinks rounding noise
    const double delta = 0.7;
    const auto clearance = ref::hinge_clearance(ref::minimal_logits(P, x), x, delta);
    if (clearance > 1e-2) {
      EXPECT_LT(max_rel_error(P, x, Margin{delta}, 1e-4), 1e-7) << s;
    }
  }
}

TEST(MinimalBackward, MarginLinearRegimeHandDerivative) {
  // W = 0: all hinges active with delta > 0; dL/df_i = (1/k - 1{i=y}) / (T-1)
  MinimalParams P{Matrix(2, 2), {1.0, 2.0, 3.0}};
  const std::vector<int> x{0, 1, 1};
  const auto g = minimal_backward(P, x, Margin{1.0});
  // f_{p,i} = sum_{t'<=p} 1{x_t'=i} sum_{s<=t'} v_{t'-s+1} W[x_p, x_s]
  // p=0,y=1: df_{0,0}/dW[0,0] = v1 ; p=1,y=1: x_1=1 rows W[1,.]
  //   df_{1,0}/dW[1,0] = v1, df_{1,1}/dW[1,0] = v2, df_{1,1}/dW[1,1] = v1
  const double h = 0.5 * 0.5;  // 1/k / (T-1) and -(1 - 1/k) / (T-1)
  EXPECT_NEAR(g.W(0, 0), h * 1.0, 1e-15);
  EXPECT_NEAR(g.W(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(g.W(1, 0), h * 1.0 - h * 2.0, 1e-15);
  EXPECT_NEAR(g.W(1, 1), -h * 1.0, 1e-15);
  for (double v : g.v) EXPECT_EQ(v, 0.0);
}

TEST(MinimalBackward, UnusedPositionsGetZeroGradient) {
  RngStream r(11, 0);
  const auto P = random_params(3, 30, r, false);
  const auto x = random_tokens(12, 3, r);
  const auto g = minimal_backward(P, x, CrossEntropy{});
  // offset 12 only feeds the last position, which has no target
  for (std::size_t j = 11; j < 30; ++j) EXPECT_EQ(g.v[j], 0.0);
}

TEST(MinimalBackward, WGradientScalesWithV) {
  RngStream r(12, 0);
  const auto P = random_params(3, 15, r, false);
  const auto x = random_tokens(15, 3, r);
  const Margin lin{1e6};
  const auto g1 = minimal_backward(P, x, lin);
  auto Q = P;
  for (auto& v : Q.v) v *= 2.0;
  const auto g2 = minimal_backward(Q, x, lin);
  for (std::size_t e = 0; e < g1.W.data.size(); ++e)
    EXPECT_NEAR(g2.W.data[e], 2.0 * g1.W.data[e], 1e-12 * (1.0 + std::abs(g1.W.data[e])));
}

TEST(MinimalBackward, LossOutputMatchesForward) {
  RngStream r(13, 0);
  const auto P = random_params(2, 10, r, false);
  const auto x = random_tokens(10, 2, r);
  double l = 0.0;
  minimal_backward(P, x, CrossEntropy{}, &l);
  EXPECT_DOUBLE_EQ(l, sequence_loss(minimal_forward(P, x), x, CrossEntropy{}));
}

TEST(MinimalParams, FlattenAssignRoundTrip) {
  RngStream r(14, 0);
  const auto P = random_params(3, 7, r, false);
  EXPECT_EQ(P.size(), 16u);
  auto Q = MinimalParams::constant(3, 7, 0.0, 0.0);
  Q.assign(P.flatten());
  EXPECT_EQ(Q, P);
  EXPECT_THROW(Q.assign(std::vector<double>(5)), InvalidParameter);
}

TEST(MinimalParams, Constant) {
  const auto P = MinimalParams::constant(2, 4, 0.5, 0.25);
  for (double w : P.W.data) EXPECT_EQ(w, 0.5);
  ASSERT_EQ(P.v.size(), 4u);
  for (double v : P.v) EXPECT_EQ(v, 0.25);
}
