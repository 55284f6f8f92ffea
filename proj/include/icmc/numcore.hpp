#pragma once

// Seeded counter-based randomness, dense float64 helpers, softmax/KL and a
// central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace icmc {

// ---------------------------------------------------------------- errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidParameter : Error {
  using Error::Error;
};
struct InvalidInput : Error {
  using Error::Error;
};
struct DegenerateChain : Error {
  using Error::Error;
};
struct NumericFailure : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidParameter(what);
}

// ---------------------------------------------------------------- rng

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based stream. Draw n is a pure function of (seed, stream_id, n), so
/// streams can be consumed in any order or from any thread.
class RngStream {
 public:
  using result_type = std::uint64_t;

  constexpr RngStream() = default;
  constexpr RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed),
        stream_(stream_id),
        key_(detail::mix64(detail::mix64(seed ^ 0x6A09E667F3BCC909ULL) +
                           detail::kGolden * (stream_id + 1))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() {
    return detail::mix64(key_ + detail::kGolden * ++counter_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1); safe for logarithms.
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via the Marsaglia polar method (no cached spare, so the
  /// stream position stays a simple function of draws requested).
  double normal() {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  /// Index drawn from an unnormalized nonnegative weight vector.
  std::size_t categorical(std::span<const double> weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    const double target = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (target < acc) return i;
    }
    // Rounding at the top end: return the last index with positive weight.
    for (std::size_t i = weights.size(); i-- > 0;)
      if (weights[i] > 0.0) return i;
    return weights.size() - 1;
  }

  constexpr std::uint64_t seed() const { return seed_; }
  constexpr std::uint64_t stream_id() const { return stream_; }
  constexpr std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

inline RngStream derive_stream(std::uint64_t seed, std::uint64_t stream_id) {
  return RngStream(seed, stream_id);
}

/// Marsaglia–Tsang; shape < 1 uses the U^(1/shape) boost.
inline double sample_gamma(double shape, RngStream& rng) {
  if (!(shape > 0.0) || !std::isfinite(shape)) throw InvalidParameter("gamma shape must be positive");
  if (shape < 1.0) {
    const double u = rng.uniform_open();
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

// ---------------------------------------------------------------- dense

/// Row-major float64 matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw InvalidParameter("matmul shape mismatch");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw InvalidParameter("shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

/// Pairwise (tree) summation; the association order depends only on length.
inline double tree_sum(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return tree_sum(xs.first(half)) + tree_sum(xs.subspan(half));
}

// ---------------------------------------------------------------- distributions

/// Probability vector over k outcomes.
struct PredictiveDistribution {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  bool operator==(const PredictiveDistribution&) const = default;

  bool valid(double tol = 1e-12) const {
    if (probs.empty()) return false;
    double s = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) return false;
      s += p;
    }
    return std::abs(s - 1.0) <= tol;
  }

  static PredictiveDistribution uniform(std::size_t k) {
    return {std::vector<double>(k, 1.0 / static_cast<double>(k))};
  }
};

inline PredictiveDistribution sample_dirichlet(std::span<const double> alpha, RngStream& rng) {
  if (alpha.empty()) throw InvalidParameter("dirichlet: empty concentration");
  for (double a : alpha)
    if (!(a > 0.0) || !std::isfinite(a)) throw InvalidParameter("dirichlet: concentration must be positive");
  std::vector<double> g(alpha.size());
  double total = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    g[i] = sample_gamma(alpha[i], rng);
    total += g[i];
  }
  if (!(total > 0.0)) {
    // All gammas underflowed (tiny alpha): put the mass on one coordinate.
    std::fill(g.begin(), g.end(), 0.0);
    g[rng.categorical(alpha)] = 1.0;
    return {std::move(g)};
  }
  for (double& x : g) x /= total;
  return {std::move(g)};
}

inline void softmax_inplace(std::span<double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  double s = 0.0;
  for (double& v : x) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : x) v /= s;
}

inline PredictiveDistribution softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInput("softmax: empty input");
  for (double v : logits)
    if (std::isnan(v)) throw InvalidInput("softmax: NaN input");
  std::vector<double> p(logits.begin(), logits.end());
  softmax_inplace(p);
  return {std::move(p)};
}

inline constexpr double kKlEpsilon = 1e-12;

/// KL(p || q) in nats; q is clamped below at 1e-12 inside the log.
inline double kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidParameter("kl: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kKlEpsilon)));
  }
  return std::max(s, 0.0);
}

inline double kl(const PredictiveDistribution& p, const PredictiveDistribution& q) {
  return kl(std::span<const double>(p.probs), std::span<const double>(q.probs));
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidParameter("tv: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double total_variation(const PredictiveDistribution& p, const PredictiveDistribution& q) {
  return total_variation(std::span<const double>(p.probs), std::span<const double>(q.probs));
}

// ---------------------------------------------------------------- grad check

/// Max over coordinates of |finite difference - analytic| / (|analytic| + 1e-8).
/// Differences are formed in the return type of `f`, so a long double
/// evaluator keeps its extra precision.
template <typename F>
double grad_check(F&& f, std::span<const double> theta, std::span<const double> analytic, double h = 1e-5) {
  if (theta.size() != analytic.size()) throw InvalidParameter("grad_check: size mismatch");
  if (!(h >= 1e-6 && h <= 1e-4)) throw InvalidParameter("grad_check: step must lie in [1e-6, 1e-4]");
  using R = std::decay_t<decltype(f(theta))>;
  std::vector<double> x(theta.begin(), theta.end());
  auto central = [&](std::size_t i, double step) -> R {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = x[i] - saved;  // exactly representable step
    const R fp = f(std::span<const double>(x));
    x[i] = saved - step;
    const double down = saved - x[i];
    const R fm = f(std::span<const double>(x));
    x[i] = saved;
    if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
      throw NumericFailure("grad_check: non-finite function value");
    return (fp - fm) / static_cast<R>(up + down);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const R numeric = central(i, h);
    const double err = std::abs(static_cast<double>(numeric - static_cast<R>(analytic[i])));
    worst = std::max(worst, err / (std::abs(analytic[i]) + 1e-8));
  }
  return worst;
}

}  // namespace icmc
