#pragma once

// Episode priors over transition structures, stationary distributions, the
// k=2 closed-form matrix powers and sequence generation.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "icmc/numcore.hpp"

namespace icmc {

inline constexpr double kRowSumTol = 1e-12;

/// k×k row-stochastic matrix.
struct TransitionMatrix {
  Matrix P;

  TransitionMatrix() = default;
  explicit TransitionMatrix(Matrix m) : P(std::move(m)) { validate(); }

  /// [[a, 1-a], [1-b, b]].
  static TransitionMatrix from_ab(double a, double b) {
    Matrix m(2, 2);
    m(0, 0) = a;
    m(0, 1) = 1.0 - a;
    m(1, 0) = 1.0 - b;
    m(1, 1) = b;
    return TransitionMatrix(std::move(m));
  }

  std::size_t k() const { return P.rows; }
  double operator()(std::size_t i, std::size_t j) const { return P(i, j); }
  std::span<const double> row(std::size_t i) const { return P.row(i); }

  void validate() const {
    if (P.rows == 0 || P.rows != P.cols) throw InvalidParameter("transition matrix must be square and non-empty");
    for (std::size_t i = 0; i < P.rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < P.cols; ++j) {
        const double x = P(i, j);
        if (!(x >= 0.0 && x <= 1.0)) throw InvalidParameter("transition entries must lie in [0,1]");
        s += x;
      }
      if (std::abs(s - 1.0) > kRowSumTol) throw InvalidParameter("transition rows must sum to 1");
    }
  }

  bool operator==(const TransitionMatrix&) const = default;
};

// ---------------------------------------------------------------- priors

namespace prior {
struct DirichletRows {
  std::vector<double> alpha;  // empty means all-ones of length k
};
/// Interpolation between iid-like (p=0) and doubly-stochastic-like (p=1) chains.
struct InterpolatedPair {
  double p = 0.5;
};
/// a = b ~ U(0,1).
struct SymmetricAB {};
/// a = b ~ U(1/2 - eps, 1/2 + eps).
struct CurriculumSymmetric {
  double eps = 0.2;
};
/// Every row equals one Dirichlet(1) draw, so tokens are iid.
struct IidRows {};
/// [[a, 1-a], [1-a, a]] with a ~ U(0,1); k = 2 only.
struct DoublyStochastic2 {};
}  // namespace prior

using ChainPrior = std::variant<prior::DirichletRows, prior::InterpolatedPair, prior::SymmetricAB,
                                prior::CurriculumSymmetric, prior::IidRows, prior::DoublyStochastic2>;

inline std::string prior_name(const ChainPrior& p) {
  struct V {
    std::string operator()(const prior::DirichletRows&) const { return "dirichlet"; }
    std::string operator()(const prior::InterpolatedPair& q) const {
      return "interpolated:" + std::to_string(q.p);
    }
    std::string operator()(const prior::SymmetricAB&) const { return "symmetric"; }
    std::string operator()(const prior::CurriculumSymmetric& q) const {
      return "curriculum:" + std::to_string(q.eps);
    }
    std::string operator()(const prior::IidRows&) const { return "iid"; }
    std::string operator()(const prior::DoublyStochastic2&) const { return "doubly-stochastic"; }
  };
  return std::visit(V{}, p);
}

/// Parses the names produced by prior_name (optionally with a parameter after ':').
inline ChainPrior parse_prior(const std::string& s) {
  const auto colon = s.find(':');
  const std::string head = s.substr(0, colon);
  const std::optional<double> arg =
      colon == std::string::npos ? std::nullopt : std::optional<double>(std::stod(s.substr(colon + 1)));
  if (head == "dirichlet") return prior::DirichletRows{};
  if (head == "interpolated") return prior::InterpolatedPair{arg.value_or(0.5)};
  if (head == "symmetric") return prior::SymmetricAB{};
  if (head == "curriculum") return prior::CurriculumSymmetric{arg.value_or(0.2)};
  if (head == "iid") return prior::IidRows{};
  if (head == "doubly-stochastic") return prior::DoublyStochastic2{};
  throw InvalidParameter("unknown prior: " + s);
}

inline TransitionMatrix sample_transition(const ChainPrior& prior, std::size_t k, RngStream& rng) {
  if (k < 2) throw InvalidParameter("need at least two states");
  struct V {
    std::size_t k;
    RngStream& rng;

    void need_k2(const char* name) const {
      if (k != 2) throw InvalidParameter(std::string(name) + " prior requires k = 2");
    }
    TransitionMatrix operator()(const prior::DirichletRows& d) const {
      std::vector<double> alpha = d.alpha.empty() ? std::vector<double>(k, 1.0) : d.alpha;
      if (alpha.size() != k) throw InvalidParameter("dirichlet concentration length must equal k");
      Matrix m(k, k);
      for (std::size_t i = 0; i < k; ++i) {
        const auto row = sample_dirichlet(alpha, rng);
        for (std::size_t j = 0; j < k; ++j) m(i, j) = row[j];
      }
      return TransitionMatrix(std::move(m));
    }
    TransitionMatrix operator()(const prior::InterpolatedPair& q) const {
      need_k2("interpolated");
      if (!(q.p >= 0.0 && q.p <= 1.0)) throw InvalidParameter("interpolation parameter must lie in [0,1]");
      const double x = rng.uniform();
      const double mu = x + q.p * (1.0 - 2.0 * x);
      const double y = std::clamp(rng.uniform(mu - 0.2, mu + 0.2), 0.0, 1.0);
      double a = x, b = y;
      if (rng.uniform() >= 0.5) std::swap(a, b);
      // Rows [[a, 1-a], [b, 1-b]] as written for this distribution.
      Matrix m(2, 2);
      m(0, 0) = a;
      m(0, 1) = 1.0 - a;
      m(1, 0) = b;
      m(1, 1) = 1.0 - b;
      return TransitionMatrix(std::move(m));
    }
    TransitionMatrix operator()(const prior::SymmetricAB&) const {
      need_k2("symmetric");
      const double a = rng.uniform();
      return TransitionMatrix::from_ab(a, a);
    }
    TransitionMatrix operator()(const prior::CurriculumSymmetric& q) const {
      need_k2("curriculum");
      if (!(q.eps > 0.0 && q.eps < 0.5)) throw InvalidParameter("curriculum half-width must lie in (0, 1/2)");
      const double a = rng.uniform(0.5 - q.eps, 0.5 + q.eps);
      return TransitionMatrix::from_ab(a, a);
    }
    TransitionMatrix operator()(const prior::IidRows&) const {
      const auto row = sample_dirichlet(std::vector<double>(k, 1.0), rng);
      Matrix m(k, k);
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) m(i, j) = row[j];
      return TransitionMatrix(std::move(m));
    }
    TransitionMatrix operator()(const prior::DoublyStochastic2&) const {
      need_k2("doubly-stochastic");
      const double a = rng.uniform();
      return TransitionMatrix::from_ab(a, a);
    }
  };
  return std::visit(V{k, rng}, prior);
}

// ---------------------------------------------------------------- stationary

/// Unique stationary distribution. k=2 uses pi ∝ (1-b, 1-a); larger k solves
/// pi (P - I) = 0, sum pi = 1 by pivoted elimination and confirms by lazy power
/// iteration.
inline PredictiveDistribution stationary(const TransitionMatrix& T) {
  const std::size_t k = T.k();
  if (k == 2) {
    const double w0 = T(1, 0);  // 1 - b
    const double w1 = T(0, 1);  // 1 - a
    const double s = w0 + w1;
    if (!(s > 1e-14)) throw DegenerateChain("chain has no unique stationary distribution");
    return {{w0 / s, w1 / s}};
  }
  // A x = rhs with A = (P - I)^T and the last equation replaced by sum(x) = 1.
  Matrix A(k, k);
  std::vector<double> rhs(k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) A(i, j) = T(j, i) - (i == j ? 1.0 : 0.0);
  for (std::size_t j = 0; j < k; ++j) A(k - 1, j) = 1.0;
  rhs[k - 1] = 1.0;
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r)
      if (std::abs(A(r, col)) > std::abs(A(piv, col))) piv = r;
    if (std::abs(A(piv, col)) < 1e-12) throw DegenerateChain("chain has no unique stationary distribution");
    if (piv != col) {
      for (std::size_t j = 0; j < k; ++j) std::swap(A(piv, j), A(col, j));
      std::swap(rhs[piv], rhs[col]);
    }
    for (std::size_t r = 0; r < k; ++r) {
      if (r == col) continue;
      const double f = A(r, col) / A(col, col);
      if (f == 0.0) continue;
      for (std::size_t j = col; j < k; ++j) A(r, j) -= f * A(col, j);
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> pi(k);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    pi[i] = std::max(0.0, rhs[i] / A(i, i));
    s += pi[i];
  }
  for (double& x : pi) x /= s;
  // Lazy power iteration (P + I)/2 removes periodicity and polishes the solution.
  std::vector<double> next(k);
  for (int it = 0; it < 100000; ++it) {
    double delta = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += pi[i] * T(i, j);
      next[j] = 0.5 * (acc + pi[j]);
    }
    double ns = 0.0;
    for (double x : next) ns += x;
    for (std::size_t j = 0; j < k; ++j) {
      next[j] /= ns;
      delta = std::max(delta, std::abs(next[j] - pi[j]));
    }
    pi.swap(next);
    if (delta < 1e-13) return {std::move(pi)};
  }
  throw DegenerateChain("stationary distribution did not converge");
}

// ---------------------------------------------------------------- k = 2 powers

/// P^n = (beta λ^n + gamma) / (λ - 1) elementwise, λ = a + b - 1.
struct EigenDecomp2 {
  double lambda = 0.0;
  Matrix beta{2, 2};
  Matrix gamma{2, 2};

  static EigenDecomp2 of(double a, double b) {
    const double lam = a + b - 1.0;
    if (std::abs(lam - 1.0) < 1e-14) throw DegenerateChain("a = b = 1: eigendecomposition is singular");
    EigenDecomp2 e;
    e.lambda = lam;
    e.beta(0, 0) = a - 1.0;
    e.beta(0, 1) = 1.0 - a;
    e.beta(1, 0) = 1.0 - b;
    e.beta(1, 1) = b - 1.0;
    e.gamma(0, 0) = b - 1.0;
    e.gamma(0, 1) = a - 1.0;
    e.gamma(1, 0) = b - 1.0;
    e.gamma(1, 1) = a - 1.0;
    return e;
  }

  double entry(std::size_t i, std::size_t j, unsigned n) const {
    return (beta(i, j) * std::pow(lambda, static_cast<double>(n)) + gamma(i, j)) / (lambda - 1.0);
  }
};

inline Matrix power_closed_form(double a, double b, unsigned n) {
  const auto e = EigenDecomp2::of(a, b);
  Matrix out(2, 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) out(i, j) = e.entry(i, j, n);
  return out;
}

// ---------------------------------------------------------------- n-grams

/// Conditional next-token table indexed by the last n-1 tokens (base-k, the
/// oldest token most significant).
struct NGramTable {
  std::size_t n = 2;
  std::size_t k = 2;
  Matrix table;  // k^{n-1} × k

  std::size_t contexts() const { return table.rows; }
  std::span<const double> row(std::size_t ctx) const { return table.row(ctx); }
};

inline std::size_t checked_pow(std::size_t base, std::size_t exp) {
  std::size_t out = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (out > std::numeric_limits<std::size_t>::max() / base) throw InvalidParameter("k^(n-1) overflows");
    out *= base;
  }
  return out;
}

inline NGramTable sample_ngram_table(std::size_t n, std::size_t k, RngStream& rng) {
  if (n < 2 || k < 2) throw InvalidParameter("n-gram table needs n >= 2 and k >= 2");
  const std::size_t rows = checked_pow(k, n - 1);
  if (rows > (std::size_t{1} << 24)) throw InvalidParameter("k^(n-1) too large");
  NGramTable t{n, k, Matrix(rows, k)};
  const std::vector<double> ones(k, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto p = sample_dirichlet(ones, rng);
    for (std::size_t j = 0; j < k; ++j) t.table(r, j) = p[j];
  }
  return t;
}

// ---------------------------------------------------------------- episodes

struct Episode {
  std::vector<int> tokens;
  std::variant<TransitionMatrix, NGramTable> source;

  std::size_t k() const {
    return std::visit(
        [](const auto& s) -> std::size_t {
          if constexpr (std::is_same_v<std::decay_t<decltype(s)>, TransitionMatrix>)
            return s.k();
          else
            return s.k;
        },
        source);
  }

  /// True next-token distribution after the last token.
  PredictiveDistribution next_distribution() const { return next_distribution(tokens.size()); }

  /// True next-token distribution after position `upto` (1-based, tokens[0..upto-1]).
  PredictiveDistribution next_distribution(std::size_t upto) const {
    if (upto == 0 || upto > tokens.size()) throw InvalidParameter("position out of range");
    if (const auto* T = std::get_if<TransitionMatrix>(&source)) {
      const auto r = T->row(static_cast<std::size_t>(tokens[upto - 1]));
      return {std::vector<double>(r.begin(), r.end())};
    }
    const auto& g = std::get<NGramTable>(source);
    if (upto < g.n - 1) throw InvalidParameter("context shorter than n-1");
    std::size_t ctx = 0;
    for (std::size_t i = upto - (g.n - 1); i < upto; ++i) ctx = ctx * g.k + static_cast<std::size_t>(tokens[i]);
    const auto r = g.row(ctx);
    return {std::vector<double>(r.begin(), r.end())};
  }
};

inline Episode sample_sequence(const TransitionMatrix& T, std::size_t t, RngStream& rng) {
  const auto pi = stationary(T);
  Episode ep{{}, T};
  ep.tokens.reserve(t);
  if (t == 0) return ep;
  int x = static_cast<int>(rng.categorical(pi.probs));
  ep.tokens.push_back(x);
  for (std::size_t i = 1; i < t; ++i) {
    x = static_cast<int>(rng.categorical(T.row(static_cast<std::size_t>(x))));
    ep.tokens.push_back(x);
  }
  return ep;
}

inline constexpr std::size_t kNGramBurnIn = 50;

/// Uniform initial context, `burn_in` discarded steps, then t kept tokens.
inline Episode sample_ngram_sequence(const NGramTable& table, std::size_t t, std::size_t burn_in,
                                     RngStream& rng) {
  const std::size_t ctx_len = table.n - 1;
  if (t <= ctx_len) throw InvalidParameter("sequence must be longer than n-1");
  std::vector<int> window(ctx_len);
  for (auto& w : window) w = static_cast<int>(rng.uniform() * static_cast<double>(table.k)) % static_cast<int>(table.k);
  auto step = [&]() {
    std::size_t ctx = 0;
    for (int w : window) ctx = ctx * table.k + static_cast<std::size_t>(w);
    const int next = static_cast<int>(rng.categorical(table.row(ctx)));
    for (std::size_t i = 0; i + 1 < ctx_len; ++i) window[i] = window[i + 1];
    window[ctx_len - 1] = next;
    return next;
  };
  for (std::size_t i = 0; i < burn_in; ++i) step();
  Episode ep{std::vector<int>(window.begin(), window.end()), table};
  ep.tokens.reserve(t);
  while (ep.tokens.size() < t) ep.tokens.push_back(step());
  return ep;
}

/// One Markov episode from `prior`; degenerate draws are resampled.
inline Episode sample_episode(const ChainPrior& prior, std::size_t k, std::size_t t, RngStream& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto T = sample_transition(prior, k, rng);
    try {
      return sample_sequence(T, t, rng);
    } catch (const DegenerateChain&) {
      continue;
    }
  }
  throw DegenerateChain("prior keeps producing degenerate chains");
}

}  // namespace icmc
