#pragma once

// Expected-gradient analysis of the minimal model for the margin loss in its
// linear regime (every hinge active), k = 2 closed forms for the first two
// gradient steps, prior-averaged constants, and the two-step curriculum.
//
// Conventions: a sequence carries t+1 tokens so that positions 1..t all have a
// target; L = (1/t) sum_p (1/k) sum_{i != y} (Delta + f_i - f_y).

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "icmc/chain.hpp"
#include "icmc/minimal.hpp"
#include "icmc/numcore.hpp"
#include "icmc/strategies.hpp"

namespace icmc {

namespace estimator {
struct MonteCarlo {
  std::size_t samples = 10000;
};
/// Midpoint rule with `grid` cells per axis.
struct Quadrature {
  std::size_t grid = 400;
};
/// Composite Gauss-Legendre with panels graded toward the a = b = 1 corner.
struct GaussLegendre {
  std::size_t panels = 48;
  std::size_t order = 8;
};
}  // namespace estimator

using Estimator = std::variant<estimator::MonteCarlo, estimator::Quadrature, estimator::GaussLegendre>;

struct TheoryConfig {
  double c = 0.02;
  double eta = 0.03;
  std::size_t t = 100;
  std::optional<double> Delta;  // defaults to the linear-regime bound
  Estimator estimator = estimator::MonteCarlo{10000};
  double c_prime = 0.02;
  double rho = 0.1;
  double eps = 0.2;
  std::optional<double> eta1;  // defaults to 1/t^2
  std::optional<double> eta2;  // defaults to 1/t
  double lambda_wd = 1.0;
  double w_init = 0.0;
  double v_init = 0.02;
  std::uint64_t seed = 0;

  /// Smallest margin keeping every hinge active at W = c 11^T, v = c 1.
  double linear_regime_delta() const {
    const auto tt = static_cast<double>(t);
    return c * c * tt * (tt + 1.0) / 2.0;
  }
  double margin() const { return Delta.value_or(linear_regime_delta() * (1.0 + 1e-9)); }
  double step1_lr() const { return eta1.value_or(1.0 / (static_cast<double>(t) * static_cast<double>(t))); }
  double step2_lr() const { return eta2.value_or(1.0 / static_cast<double>(t)); }

  void validate() const {
    if (!(c > 0.0)) throw InvalidParameter("c must be positive");
    if (!(eta > 0.0)) throw InvalidParameter("eta must be positive");
    if (t < 2) throw InvalidParameter("t must be at least 2");
    if (Delta && !(*Delta > 0.0)) throw InvalidParameter("Delta must be positive");
    if (!(eps > 0.0 && eps < 0.5)) throw InvalidParameter("eps must lie in (0, 1/2)");
    if (!(step1_lr() > 0.0) || !(step2_lr() > 0.0)) throw InvalidParameter("curriculum step sizes must be positive");
  }
  void validate_step2() const {
    validate();
    if (!(rho >= c_prime)) throw InvalidParameter("rho must not be below c_prime");
  }
};

// ---------------------------------------------------------------- exact per-chain gradient

/// -dL/dtheta averaged over sequences drawn from `T` (x_1 from the stationary
/// law), in the linear regime. Exact for any W and v; v entries past t do not
/// enter. Cost O(t k^3).
inline MinimalParams expected_descent(const TransitionMatrix& T, const MinimalParams& theta, std::size_t t) {
  const std::size_t k = T.k();
  if (theta.k() != k) throw InvalidParameter("parameter and chain sizes differ");
  if (theta.v.size() < t) throw InvalidParameter("position vector shorter than t");
  if (t < 1) throw InvalidParameter("t must be positive");
  const auto pi = stationary(T).probs;
  const std::size_t kk = k * k;
  auto at = [k](std::vector<double>& m, std::size_t n, std::size_t i, std::size_t j) -> double& {
    return m[(n * k + i) * k + j];
  };
  // Pn[n] = P^n, H[r] = sum_{u<=r} P^u, K[r] = sum_{q<=r} H[q], n, r in 0..t.
  std::vector<double> Pn((t + 1) * kk, 0.0), H((t + 1) * kk, 0.0), K((t + 1) * kk, 0.0);
  for (std::size_t i = 0; i < k; ++i) at(Pn, 0, i, i) = 1.0;
  for (std::size_t n = 1; n <= t; ++n)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t r = 0; r < k; ++r) {
        const double x = at(Pn, n - 1, i, r);
        for (std::size_t j = 0; j < k; ++j) at(Pn, n, i, j) += x * T(r, j);
      }
  for (std::size_t n = 0; n <= t; ++n)
    for (std::size_t e = 0; e < kk; ++e) {
      H[n * kk + e] = Pn[n * kk + e] + (n > 0 ? H[(n - 1) * kk + e] : 0.0);
      K[n * kk + e] = H[n * kk + e] + (n > 0 ? K[(n - 1) * kk + e] : 0.0);
    }
  const double inv_k = 1.0 / static_cast<double>(k);
  const double inv_t = 1.0 / static_cast<double>(t);

  MinimalParams out{Matrix(k, k), std::vector<double>(theta.v.size(), 0.0)};

  // W: sum_{t'} G_{t'}[l][i] H[t-t'][i][m], G_{t'} = sum_{n<t'} v_{n+1} P^n.
  std::vector<double> G(kk, 0.0), Q(k * kk, 0.0);
  for (std::size_t tp = 1; tp <= t; ++tp) {
    const double vn = theta.v[tp - 1];
    for (std::size_t e = 0; e < kk; ++e) G[e] += vn * Pn[(tp - 1) * kk + e];
    const double* h = &H[(t - tp) * kk];
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t i = 0; i < k; ++i) {
        const double g = G[l * k + i];
        for (std::size_t m = 0; m < k; ++m) Q[(l * k + i) * k + m] += g * h[i * k + m];
      }
  }
  for (std::size_t m = 0; m < k; ++m)
    for (std::size_t l = 0; l < k; ++l) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += (T(m, i) - inv_k) * Q[(l * k + i) * k + m];
      out.W(m, l) = inv_t * pi[l] * s;
    }

  // v_j: sum_{l,i,m} pi_l P^{j-1}[l][i] K[t-j][i][m] (P_mi - 1/k) W_ml.
  std::vector<double> R(kk);  // R[l][i] = sum_m K[i][m] (P_mi - 1/k) W_ml
  for (std::size_t j = 1; j <= t; ++j) {
    const double* kt = &K[(t - j) * kk];
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t i = 0; i < k; ++i) {
        double s = 0.0;
        for (std::size_t m = 0; m < k; ++m) s += kt[i * k + m] * (T(m, i) - inv_k) * theta.W(m, l);
        R[l * k + i] = s;
      }
    double s = 0.0;
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t i = 0; i < k; ++i) s += pi[l] * at(Pn, j - 1, l, i) * R[l * k + i];
    out.v[j - 1] = inv_t * s;
  }
  return out;
}

// ---------------------------------------------------------------- printed k = 2 forms

/// First-step geometric sums (I)-(IV) at lambda = a + b - 1.
struct Step1Sums {
  double I, II, III, IV;
};

inline Step1Sums step1_sums(double lambda, std::size_t t) {
  const double L = lambda, tt = static_cast<double>(t);
  const double Lt = std::pow(L, tt);
  Step1Sums s{};
  s.I = (L - (tt + 1.0) * Lt * L + tt * Lt * L * L) / ((1.0 - L) * (1.0 - L)) +
        L * (1.0 - Lt) / ((1.0 - L) * (1.0 - L)) + tt / (L - 1.0);
  s.II = L * L * (1.0 - Lt) / (1.0 - L) - L * tt * (tt + 3.0) / 2.0 + tt * (tt + 1.0) / 2.0;
  s.III = tt * L / (1.0 - L) - (L * L - Lt * L * L) / ((1.0 - L) * (1.0 - L)) - tt * (tt + 1.0) / 2.0;
  s.IV = tt * (tt + 1.0) * (tt + 2.0) / 6.0;
  return s;
}

inline void check_ab(double a, double b) {
  if (!(a >= 0.0 && a <= 1.0 && b >= 0.0 && b <= 1.0)) throw InvalidParameter("a, b must lie in [0, 1]");
  if (std::abs(a + b - 2.0) < 1e-12) throw DegenerateChain("a = b = 1");
}

/// Case-by-case first-step W expression at W = 11^T, v = 1; multiply by c/t
/// for the descent direction at scale c.
inline Matrix step1_W_printed(double a, double b, std::size_t t) {
  check_ab(a, b);
  const double l1 = a + b - 2.0;
  const auto s = step1_sums(a + b - 1.0, t);
  const double l13 = l1 * l1 * l1;
  Matrix w(2, 2);
  w(0, 0) = (b - 1) * (a - 0.5) / l13 *
            ((a - 1) * (a - b) / l1 * s.I + 2 * (a - 1) * (b - 1) / (l1 * l1) * s.II +
             2 * (a - 1) * (b - 1) / l1 * s.III + (b - 1) * (b - a) * s.IV);
  w(0, 1) = (a - 1) * (a - 0.5) / l13 *
            ((1 - b) * (a - b) / l1 * s.I + 2 * (a - 1) * (b - 1) / (l1 * l1) * s.II -
             2 * (b - 1) * (b - 1) / l1 * s.III + (b - 1) * (b - a) * s.IV);
  w(1, 0) = (b - 1) * (0.5 - b) / l13 *
            ((1 - a) * (a - b) / l1 * s.I - 2 * (a - 1) * (b - 1) / (l1 * l1) * s.II +
             2 * (a - 1) * (a - 1) / l1 * s.III + (a - 1) * (b - a) * s.IV);
  w(1, 1) = (a - 1) * (0.5 - b) / l13 *
            ((b - 1) * (a - b) / l1 * s.I - 2 * (a - 1) * (b - 1) / (l1 * l1) * s.II -
             2 * (a - 1) * (b - 1) / l1 * s.III + (a - 1) * (b - a) * s.IV);
  return w;
}

/// First-step v expression at W = 11^T; multiply by c/t.
inline std::vector<double> step1_v_printed(double a, double b, std::size_t t) {
  check_ab(a, b);
  const double L = a + b - 1.0, l1 = L - 1.0;
  const double lead = ((a - 1) * (a - 1) + (b - 1) * (b - 1)) / (l1 * l1) - 0.5;
  const double corr = 2.0 * L * (a - 1) * (b - 1) / (l1 * l1 * l1);
  std::vector<double> v(t);
  for (std::size_t j = 1; j <= t; ++j) {
    const double n = static_cast<double>(t - j + 1);
    v[j - 1] = n * (n + 1.0) / 2.0 * lead + corr * ((L - std::pow(L, n + 1.0)) / (1.0 - L) - n);
  }
  return v;
}

/// Second-step v contribution of the diagonal part of W (per unit rho - c');
/// multiply by 1/t. Two non-leading terms carry corrected signs/factors.
inline std::vector<double> step2_v_diag(double a, double b, std::size_t t) {
  check_ab(a, b);
  const auto e = EigenDecomp2::of(a, b);
  const double L = e.lambda, l1 = L - 1.0, tt = static_cast<double>(t);
  const auto T = TransitionMatrix::from_ab(a, b);
  const std::array<double, 2> pi{(b - 1) / l1, (a - 1) / l1};
  std::vector<double> v(t);
  v[0] = ((L - std::pow(L, tt + 1.0)) / (1.0 - L) - tt) * (a - 1) * (b - 1) * L / (l1 * l1 * l1) +
         ((b - 1) * (b - 1) * (a - 0.5) + (a - 1) * (a - 1) * (b - 0.5)) / (l1 * l1) * tt * (tt + 1.0) / 2.0;
  for (std::size_t j = 2; j <= t; ++j) {
    const double jj = static_cast<double>(j), n = tt - jj + 1.0;
    const double Lj1 = std::pow(L, jj - 1.0);
    double s = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t l = 0; l < 2; ++l) {
        const double bb = e.beta(i, l) * e.beta(l, i), bg = e.beta(i, l) * e.gamma(l, i);
        const double gb = e.gamma(i, l) * e.beta(l, i), gg = e.gamma(i, l) * e.gamma(l, i);
        s += pi[l] / (l1 * l1) * (T(l, i) - 0.5) *
             (bb / l1 * ((Lj1 * L - std::pow(L, tt + 1.0)) / (1.0 - L) - n * Lj1) +
              bg / l1 * ((L - std::pow(L, n + 1.0)) / (1.0 - L) - n) + n * (n + 1.0) / 2.0 * (gb * Lj1 + gg));
      }
    v[j - 1] = s;
  }
  return v;
}

// ---------------------------------------------------------------- outer expectations

struct Estimate {
  std::vector<double> mean;
  std::vector<double> se;  // zero for deterministic rules
  std::size_t evaluations = 0;
};

/// Draw from `prior`, rejecting k = 2 chains with |lambda - 1| < 1e-12.
inline TransitionMatrix draw_transition(const ChainPrior& prior, std::size_t k, RngStream& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto T = sample_transition(prior, k, rng);
    if (k == 2 && std::abs(T(0, 0) + T(1, 1) - 2.0) < 1e-12) continue;
    return T;
  }
  throw DegenerateChain("prior keeps producing degenerate chains");
}

namespace detail {

struct Node {
  double x, w;
};

/// n-point Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n.
inline std::vector<Node> gauss_legendre(std::size_t n) {
  std::vector<Node> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (std::size_t m = 2; m <= n; ++m) {
        const double md = static_cast<double>(m);
        const double p2 = ((2.0 * md - 1.0) * x * p1 - (md - 1.0) * p0) / md;
        p0 = p1;
        p1 = p2;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    out[i] = {x, 2.0 / ((1.0 - x * x) * dp * dp)};
  }
  return out;
}

/// Nodes on [lo, hi]; panels shrink toward hi when `graded`.
inline std::vector<Node> axis_rule(const Estimator& est, double lo, double hi, bool graded) {
  std::vector<Node> out;
  if (const auto* q = std::get_if<estimator::Quadrature>(&est)) {
    if (q->grid == 0) throw InvalidParameter("grid must be positive");
    const double h = (hi - lo) / static_cast<double>(q->grid);
    for (std::size_t i = 0; i < q->grid; ++i) out.push_back({lo + (static_cast<double>(i) + 0.5) * h, h});
    return out;
  }
  const auto& g = std::get<estimator::GaussLegendre>(est);
  if (g.panels == 0 || g.order == 0) throw InvalidParameter("Gauss-Legendre panels and order must be positive");
  const auto base = gauss_legendre(g.order);
  const auto N = static_cast<double>(g.panels);
  auto edge = [&](std::size_t i) {
    const double s = static_cast<double>(i) / N;
    return graded ? hi - (hi - lo) * std::pow(1.0 - s, 3.0) : lo + (hi - lo) * s;
  };
  for (std::size_t p = 0; p < g.panels; ++p) {
    const double x0 = edge(p), x1 = edge(p + 1);
    const double mid = 0.5 * (x0 + x1), half = 0.5 * (x1 - x0);
    for (const auto& nd : base) out.push_back({mid + half * nd.x, half * nd.w});
  }
  return out;
}

inline Estimate reduce(std::vector<std::vector<double>>& cols, std::size_t n, bool with_se) {
  Estimate e;
  e.evaluations = n;
  e.mean.resize(cols.size());
  e.se.assign(cols.size(), 0.0);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const double mean = tree_sum(cols[c]) / static_cast<double>(n);
    e.mean[c] = mean;
    if (with_se && n > 1) {
      for (double& x : cols[c]) x = (x - mean) * (x - mean);
      e.se[c] = std::sqrt(tree_sum(cols[c]) / static_cast<double>(n - 1) / static_cast<double>(n));
    }
  }
  return e;
}

}  // namespace detail

/// E_prior[f(T)] for a fixed-length vector-valued f. Quadrature rules cover
/// the k = 2 priors DirichletRows(1,1) (uniform square), SymmetricAB and
/// CurriculumSymmetric; `cutoff` trims each integration axis to
/// [lo + cutoff, hi - cutoff] (Monte Carlo rejects draws outside it).
template <class F>
Estimate expect(const ChainPrior& prior, const Estimator& est, std::uint64_t seed, F&& f, double cutoff = 0.0) {
  if (!(cutoff >= 0.0 && cutoff < 0.5)) throw InvalidParameter("cutoff must lie in [0, 1/2)");
  std::vector<std::vector<double>> cols;
  auto push = [&](const std::vector<double>& y, double w) {
    if (cols.empty()) cols.resize(y.size());
    if (y.size() != cols.size()) throw InvalidParameter("integrand changed length");
    for (std::size_t i = 0; i < y.size(); ++i) cols[i].push_back(w * y[i]);
  };
  if (const auto* mc = std::get_if<estimator::MonteCarlo>(&est)) {
    if (mc->samples == 0) throw InvalidParameter("Monte Carlo needs at least one sample");
    std::size_t k = 2;
    if (const auto* d = std::get_if<prior::DirichletRows>(&prior); d && !d->alpha.empty()) k = d->alpha.size();
    for (std::size_t s = 0; s < mc->samples; ++s) {
      RngStream rng(seed, s);
      TransitionMatrix T;
      for (;;) {
        T = draw_transition(prior, k, rng);
        if (cutoff == 0.0) break;
        bool inside = true;
        for (std::size_t i = 0; i < k; ++i)
          inside = inside && T(i, i) >= cutoff && T(i, i) <= 1.0 - cutoff;
        if (inside) break;
      }
      push(f(T), 1.0);
    }
    return detail::reduce(cols, mc->samples, true);
  }
  // Deterministic rules: weights are normalized so the result is a mean.
  double total_w = 0.0;
  std::size_t n = 0;
  auto eval = [&](double a, double b, double w) {
    push(f(TransitionMatrix::from_ab(a, b)), w);
    total_w += w;
    ++n;
  };
  if (const auto* d = std::get_if<prior::DirichletRows>(&prior)) {
    if (!d->alpha.empty() && (d->alpha.size() != 2 || d->alpha[0] != 1.0 || d->alpha[1] != 1.0))
      throw InvalidParameter("quadrature supports DirichletRows(1,1) with k = 2 only");
    const auto ax = detail::axis_rule(est, cutoff, 1.0 - cutoff, true);
    for (const auto& na : ax)
      for (const auto& nb : ax) eval(na.x, nb.x, na.w * nb.w);
  } else if (std::holds_alternative<prior::SymmetricAB>(prior) ||
             std::holds_alternative<prior::DoublyStochastic2>(prior)) {
    for (const auto& na : detail::axis_rule(est, cutoff, 1.0 - cutoff, true)) eval(na.x, na.x, na.w);
  } else if (const auto* q = std::get_if<prior::CurriculumSymmetric>(&prior)) {
    for (const auto& na : detail::axis_rule(est, 0.5 - q->eps + cutoff, 0.5 + q->eps - cutoff, false))
      eval(na.x, na.x, na.w);
  } else {
    throw InvalidParameter("no quadrature rule for prior " + prior_name(prior));
  }
  auto e = detail::reduce(cols, n, false);
  // reduce() divided by n; rescale to a weighted mean.
  for (double& m : e.mean) m *= static_cast<double>(n) / total_w;
  return e;
}

// ---------------------------------------------------------------- step results

struct StepResult {
  MinimalParams after;
  MinimalParams increment;     // after - before
  MinimalParams increment_se;  // Monte Carlo standard error of the increment
  std::size_t evaluations = 0;
};

namespace detail {
inline StepResult step_from(const MinimalParams& before, const Estimate& e, double scale, std::size_t k,
                            std::size_t t) {
  StepResult r{before, MinimalParams{Matrix(k, k), std::vector<double>(t, 0.0)},
               MinimalParams{Matrix(k, k), std::vector<double>(t, 0.0)}, e.evaluations};
  std::vector<double> inc(e.mean.size()), se(e.se.size());
  for (std::size_t i = 0; i < inc.size(); ++i) {
    inc[i] = scale * e.mean[i];
    se[i] = std::abs(scale) * e.se[i];
  }
  r.increment.assign(inc);
  r.increment_se.assign(se);
  auto flat = before.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += inc[i];
  r.after.assign(flat);
  return r;
}
}  // namespace detail

/// One gradient step from W = c 11^T, v = c 1 under a, b ~ U(0,1) using the
/// case-by-case closed forms.
inline StepResult step1_closed_form(const TheoryConfig& cfg) {
  cfg.validate();
  const std::size_t t = cfg.t;
  auto f = [t](const TransitionMatrix& T) {
    const auto w = step1_W_printed(T(0, 0), T(1, 1), t);
    auto out = w.data;
    const auto v = step1_v_printed(T(0, 0), T(1, 1), t);
    out.insert(out.end(), v.begin(), v.end());
    return out;
  };
  const auto e = expect(prior::DirichletRows{}, cfg.estimator, cfg.seed, f);
  const auto before = MinimalParams::constant(2, t, cfg.c, cfg.c);
  return detail::step_from(before, e, cfg.eta * cfg.c / static_cast<double>(t), 2, t);
}

/// Same step through the exact per-chain evaluator.
inline StepResult step1_exact(const TheoryConfig& cfg) {
  cfg.validate();
  const std::size_t t = cfg.t;
  const auto before = MinimalParams::constant(2, t, cfg.c, cfg.c);
  auto f = [&](const TransitionMatrix& T) { return expected_descent(T, before, t).flatten(); };
  const auto e = expect(prior::DirichletRows{}, cfg.estimator, cfg.seed, f);
  return detail::step_from(before, e, cfg.eta, 2, t);
}

/// Leading-order first-step W constants; the increment is c eta (t+1)(t+2)/6
/// times the constant.
struct Step1Leading {
  double diagonal, off_diagonal, ratio;
};

struct Step2Result {
  std::vector<double> v_before;   // v after step one
  std::vector<double> v_after;
  std::vector<double> diag_term;  // E[diagonal contribution] per unit (rho - c'), before the 1/t factor
  std::vector<double> diag_se;
  std::size_t argmax = 0;         // 1-based
};

/// Second v step with W = c' 11^T + (rho - c') I, starting from the step-one v.
inline Step2Result step2_closed_form(const TheoryConfig& cfg) {
  cfg.validate_step2();
  const std::size_t t = cfg.t;
  const auto s1 = step1_closed_form(cfg);
  auto f = [t](const TransitionMatrix& T) {
    auto d = step2_v_diag(T(0, 0), T(1, 1), t);
    const auto u = step1_v_printed(T(0, 0), T(1, 1), t);
    d.insert(d.end(), u.begin(), u.end());
    return d;
  };
  const auto e = expect(prior::DirichletRows{}, cfg.estimator, cfg.seed, f);
  Step2Result r;
  r.v_before = s1.after.v;
  r.v_after.resize(t);
  r.diag_term.assign(e.mean.begin(), e.mean.begin() + static_cast<std::ptrdiff_t>(t));
  r.diag_se.assign(e.se.begin(), e.se.begin() + static_cast<std::ptrdiff_t>(t));
  const double scale = cfg.eta / static_cast<double>(t);
  for (std::size_t j = 0; j < t; ++j)
    r.v_after[j] = r.v_before[j] + scale * (cfg.c_prime * e.mean[t + j] + (cfg.rho - cfg.c_prime) * e.mean[j]);
  r.argmax = static_cast<std::size_t>(std::max_element(r.v_after.begin(), r.v_after.end()) - r.v_after.begin()) + 1;
  return r;
}

struct CorollaryPoint {
  double cutoff;
  MinimalParams after;
  double printed_diagonal;  // E_a[-(a - 1/2) / (8 (a - 1))] on the trimmed interval
};

struct CorollaryResult {
  std::vector<CorollaryPoint> points;
  std::vector<double> printed_v;  // c - (c eta / 2t)(t - j + 1)
};

/// First step from W = c 11^T, v = c 1 under a = b ~ U(0,1), integrated on
/// a in [delta, 1 - delta] for each cutoff.
inline CorollaryResult corollary_ab(const TheoryConfig& cfg, std::vector<double> cutoffs = {1e-2, 1e-3, 1e-4}) {
  cfg.validate();
  const std::size_t t = cfg.t;
  const auto before = MinimalParams::constant(2, t, cfg.c, cfg.c);
  CorollaryResult r;
  for (double delta : cutoffs) {
    if (!(delta > 0.0 && delta < 0.5)) throw InvalidParameter("cutoff must lie in (0, 1/2)");
    auto f = [&](const TransitionMatrix& T) {
      auto out = expected_descent(T, before, t).flatten();
      const double a = T(0, 0);
      out.push_back(-(a - 0.5) / (8.0 * (a - 1.0)));
      return out;
    };
    const auto e = expect(prior::SymmetricAB{}, cfg.estimator, cfg.seed, f, delta);
    const double len_fraction = 1.0 - 2.0 * delta;
    std::vector<double> inc(e.mean.begin(), e.mean.end() - 1);
    auto flat = before.flatten();
    // Mean over the trimmed interval times its length: integral against U(0,1).
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += cfg.eta * len_fraction * inc[i];
    MinimalParams after = before;
    after.assign(flat);
    r.points.push_back({delta, std::move(after), len_fraction * e.mean.back()});
  }
  r.printed_v.resize(t);
  for (std::size_t j = 1; j <= t; ++j)
    r.printed_v[j - 1] = cfg.c - cfg.c * cfg.eta / (2.0 * static_cast<double>(t)) * static_cast<double>(t - j + 1);
  return r;
}

// ---------------------------------------------------------------- constants

enum class ConstantKind {
  DiagonalLeading,     // (b-1)^2 (b-a)(a-1/2) / (a+b-2)^3
  OffDiagonalLeading,  // (b-1)(a-1)(b-a)(a-1/2) / (a+b-2)^3
  VLeading,            // ((a-1)^2 + (b-1)^2) / (a+b-2)^2
  Step2First,          // ((b-1)^2 (a-1/2) + (a-1)^2 (b-1/2)) / (a+b-2)^2
  Step2SecondLambda,   // 4 (a-1)(b-1)^2 (a-1/2)(a+b-1) / (a+b-2)^3
  Step2SecondAsym,     // 2 (b-a)(b-1)^2 (a-1/2) / (a+b-2)^3
  Step2SecondTotal,    // sum of the two above
  Moment,              // (a-1)(b-1)^2 (a-1/2)(a+b-1)^{j-1} / (a+b-2)^3
  CorollaryDiagonal,   // integral over [delta, 1-delta] of -(a-1/2) / (8(a-1))
  CurriculumDiagonal,  // integral over [1/2-eps, 1/2+eps] of (a-1/2)/(a-1)
};

struct PriorExpectationId {
  ConstantKind kind = ConstantKind::DiagonalLeading;
  int j = 1;           // Moment order
  double param = 0.0;  // delta for CorollaryDiagonal, eps for CurriculumDiagonal
};

struct ConstantValue {
  std::string name;
  double value = 0.0;
  double error_estimate = 0.0;
  std::optional<double> printed;  // known closed form, when there is one
  std::string printed_formula;
};

inline std::string constant_name(const PriorExpectationId& id) {
  switch (id.kind) {
    case ConstantKind::DiagonalLeading: return "step1_W_diagonal";
    case ConstantKind::OffDiagonalLeading: return "step1_W_offdiagonal";
    case ConstantKind::VLeading: return "step1_v_quadratic";
    case ConstantKind::Step2First: return "step2_v1_diagonal";
    case ConstantKind::Step2SecondLambda: return "step2_v2_lambda_term";
    case ConstantKind::Step2SecondAsym: return "step2_v2_asymmetric_term";
    case ConstantKind::Step2SecondTotal: return "step2_v2_diagonal";
    case ConstantKind::Moment: return "moment_j" + std::to_string(id.j);
    case ConstantKind::CorollaryDiagonal: return "corollary_W_diagonal";
    case ConstantKind::CurriculumDiagonal: return "curriculum_W_diagonal";
  }
  return "unknown";
}

namespace detail {

inline double constant_integrand(const PriorExpectationId& id, double a, double b) {
  const double d = a + b - 2.0, d2 = d * d, d3 = d2 * d;
  switch (id.kind) {
    case ConstantKind::DiagonalLeading: return (b - 1) * (b - 1) * (b - a) * (a - 0.5) / d3;
    case ConstantKind::OffDiagonalLeading: return (b - 1) * (a - 1) * (b - a) * (a - 0.5) / d3;
    case ConstantKind::VLeading: return ((a - 1) * (a - 1) + (b - 1) * (b - 1)) / d2;
    case ConstantKind::Step2First: return ((b - 1) * (b - 1) * (a - 0.5) + (a - 1) * (a - 1) * (b - 0.5)) / d2;
    case ConstantKind::Step2SecondLambda: return 4 * (a - 1) * (b - 1) * (b - 1) * (a - 0.5) * (a + b - 1) / d3;
    case ConstantKind::Step2SecondAsym: return 2 * (b - a) * (b - 1) * (b - 1) * (a - 0.5) / d3;
    case ConstantKind::Step2SecondTotal:
      return (4 * (a - 1) * (a + b - 1) + 2 * (b - a)) * (b - 1) * (b - 1) * (a - 0.5) / d3;
    case ConstantKind::Moment:
      return (a - 1) * (b - 1) * (b - 1) * (a - 0.5) * std::pow(a + b - 1, id.j - 1) / d3;
    case ConstantKind::CorollaryDiagonal: return -(a - 0.5) / (8.0 * (a - 1.0));
    case ConstantKind::CurriculumDiagonal: return (a - 0.5) / (a - 1.0);
  }
  return 0.0;
}

inline bool one_dimensional(ConstantKind k) {
  return k == ConstantKind::CorollaryDiagonal || k == ConstantKind::CurriculumDiagonal;
}

inline double integrate_constant(const PriorExpectationId& id, const Estimator& est, std::uint64_t seed,
                                 double* se_out) {
  *se_out = 0.0;
  if (one_dimensional(id.kind)) {
    double lo, hi;
    bool graded;
    if (id.kind == ConstantKind::CorollaryDiagonal) {
      if (!(id.param > 0.0 && id.param < 0.5)) throw InvalidParameter("cutoff must lie in (0, 1/2)");
      lo = id.param, hi = 1.0 - id.param, graded = true;
    } else {
      if (!(id.param > 0.0 && id.param < 0.5)) throw InvalidParameter("eps must lie in (0, 1/2)");
      lo = 0.5 - id.param, hi = 0.5 + id.param, graded = false;
    }
    if (const auto* mc = std::get_if<estimator::MonteCarlo>(&est)) {
      std::vector<double> ys(mc->samples);
      RngStream rng(seed, 0);
      for (auto& y : ys) y = (hi - lo) * constant_integrand(id, rng.uniform(lo, hi), 0.0);
      std::vector<std::vector<double>> cols{ys};
      const auto e = reduce(cols, ys.size(), true);
      *se_out = e.se[0];
      return e.mean[0];
    }
    double s = 0.0;
    for (const auto& n : axis_rule(est, lo, hi, graded)) s += n.w * constant_integrand(id, n.x, 0.0);
    return s;
  }
  if (const auto* mc = std::get_if<estimator::MonteCarlo>(&est)) {
    std::vector<double> ys(mc->samples);
    RngStream rng(seed, 0);
    for (auto& y : ys) {
      const double a = rng.uniform(), b = rng.uniform();
      y = constant_integrand(id, a, b);
    }
    std::vector<std::vector<double>> cols{ys};
    const auto e = reduce(cols, ys.size(), true);
    *se_out = e.se[0];
    return e.mean[0];
  }
  const auto ax = axis_rule(est, 0.0, 1.0, true);
  std::vector<double> terms;
  terms.reserve(ax.size() * ax.size());
  for (const auto& na : ax)
    for (const auto& nb : ax) terms.push_back(na.w * nb.w * constant_integrand(id, na.x, nb.x));
  return tree_sum(terms);
}

}  // namespace detail

/// Numerical value of a prior-averaged constant. Deterministic rules report
/// the change against a half-resolution rule as the error estimate.
inline ConstantValue prior_expectation(const PriorExpectationId& id,
                                       const Estimator& est = estimator::GaussLegendre{},
                                       std::uint64_t seed = 0) {
  if (id.kind == ConstantKind::Moment && id.j < 1) throw InvalidParameter("moment order must be at least 1");
  ConstantValue out;
  out.name = constant_name(id);
  double se = 0.0;
  out.value = detail::integrate_constant(id, est, seed, &se);
  if (std::holds_alternative<estimator::MonteCarlo>(est)) {
    out.error_estimate = se;
  } else {
    Estimator coarse = est;
    if (auto* q = std::get_if<estimator::Quadrature>(&coarse)) q->grid = std::max<std::size_t>(1, q->grid / 2);
    if (auto* g = std::get_if<estimator::GaussLegendre>(&coarse)) g->panels = std::max<std::size_t>(1, g->panels / 2);
    double dummy = 0.0;
    out.error_estimate = std::abs(out.value - detail::integrate_constant(id, coarse, seed, &dummy));
  }
  if (!std::isfinite(out.value)) throw NumericFailure("quadrature produced a non-finite value for " + out.name);
  const double ln2 = std::numbers::ln2;
  switch (id.kind) {
    case ConstantKind::DiagonalLeading:
      out.printed = (8.0 * ln2 - 5.0) / 12.0;
      out.printed_formula = "(ln 256 - 5)/12";
      break;
    case ConstantKind::OffDiagonalLeading:
      out.printed = (7.0 - 10.0 * ln2) / 6.0;
      out.printed_formula = "(7 - 10 ln 2)/6";
      break;
    case ConstantKind::VLeading:
      out.printed = 2.0 - 2.0 * ln2;
      out.printed_formula = "2 - ln 4";
      break;
    case ConstantKind::Step2First:
      out.printed = (1.0 - ln2) / 3.0;
      out.printed_formula = "(1 - ln 2)/3";
      break;
    case ConstantKind::Step2SecondLambda:
      out.printed = (7.0 - 10.0 * ln2) / 2.0;
      out.printed_formula = "(7 - 10 ln 2)/2";
      break;
    case ConstantKind::Step2SecondAsym:
      out.printed = (5.0 - 8.0 * ln2) / 6.0;
      out.printed_formula = "(5 - 8 ln 2)/6";
      break;
    case ConstantKind::Step2SecondTotal:
      out.printed = (7.0 - 10.0 * ln2) / 2.0 + (5.0 - 8.0 * ln2) / 6.0;
      out.printed_formula = "(7 - 10 ln 2)/2 + (5 - 8 ln 2)/6";
      break;
    case ConstantKind::CurriculumDiagonal:
      out.printed = 2.0 * id.param + 0.5 * std::log((0.5 - id.param) / (0.5 + id.param));
      out.printed_formula = "2 eps + ln((1/2 - eps)/(1/2 + eps))/2";
      break;
    case ConstantKind::Moment:
    case ConstantKind::CorollaryDiagonal: break;
  }
  return out;
}

inline Step1Leading step1_leading(const Estimator& est = estimator::GaussLegendre{}) {
  const double d = prior_expectation({ConstantKind::DiagonalLeading}, est).value;
  const double o = prior_expectation({ConstantKind::OffDiagonalLeading}, est).value;
  return {d, o, d / o};
}

// ---------------------------------------------------------------- curriculum

/// Logit features sum_{t'<=p} 1{x_t' = i} 1{x_{t'-1} = x_p}.
inline Matrix bigram_count_features(std::span<const int> tokens, std::size_t k) {
  check_tokens(tokens, k);
  const std::size_t T = tokens.size();
  Matrix out(T, k);
  Matrix c(k, k);  // c(prev, next) running counts
  for (std::size_t p = 0; p < T; ++p) {
    if (p >= 1) c(static_cast<std::size_t>(tokens[p - 1]), static_cast<std::size_t>(tokens[p])) += 1.0;
    for (std::size_t i = 0; i < k; ++i) out(p, i) = c(static_cast<std::size_t>(tokens[p]), i);
  }
  return out;
}

struct CurriculumVerdict {
  MinimalParams after_step1;
  MinimalParams after_step2;
  std::size_t argmax_v = 0;        // 1-based
  double off_on_ratio = 0.0;       // max |off-diagonal| / min |diagonal| of W
  double cosine = 0.0;             // mean over episodes of the per-position cosine
  std::size_t episodes = 0;
  bool passed(double ratio_limit = 0.1, double cosine_floor = 0.99) const {
    return argmax_v == 2 && off_on_ratio < ratio_limit && cosine >= cosine_floor;
  }
};

/// Mean over positions (rows with non-zero features) of cos(f_p, bigram_p).
inline double per_position_cosine(const Matrix& f, const Matrix& g) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < f.rows; ++p) {
    double fg = 0.0, ff = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < f.cols; ++i) {
      fg += f(p, i) * g(p, i);
      ff += f(p, i) * f(p, i);
      gg += g(p, i) * g(p, i);
    }
    if (gg == 0.0) continue;
    acc += ff > 0.0 ? fg / std::sqrt(ff * gg) : 0.0;
    ++n;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

/// Step one on a, b ~ U(0,1) at eta1; step two on a = b ~ U[1/2 - eps, 1/2 + eps]
/// at eta2 with weight decay lambda_wd. Both use exact expected gradients.
inline CurriculumVerdict two_step_curriculum(const TheoryConfig& cfg, std::size_t eval_episodes = 100) {
  cfg.validate();
  const std::size_t t = cfg.t;
  const auto theta0 = MinimalParams::constant(2, t, cfg.w_init, cfg.v_init);
  auto direction = [&](const ChainPrior& pr, const MinimalParams& at, std::uint64_t seed) {
    auto f = [&](const TransitionMatrix& T) { return expected_descent(T, at, t).flatten(); };
    return expect(pr, cfg.estimator, seed, f).mean;
  };
  CurriculumVerdict r;
  auto flat = theta0.flatten();
  const auto d1 = direction(prior::DirichletRows{}, theta0, cfg.seed);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += cfg.step1_lr() * d1[i];
  r.after_step1 = theta0;
  r.after_step1.assign(flat);
  const auto d2 = direction(prior::CurriculumSymmetric{cfg.eps}, r.after_step1, cfg.seed + 1);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = (1.0 - cfg.lambda_wd) * flat[i] + cfg.step2_lr() * d2[i];
  r.after_step2 = theta0;
  r.after_step2.assign(flat);

  const auto& v = r.after_step2.v;
  r.argmax_v = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()) + 1;
  const auto& W = r.after_step2.W;
  r.off_on_ratio = std::max(std::abs(W(0, 1)), std::abs(W(1, 0))) / std::min(std::abs(W(0, 0)), std::abs(W(1, 1)));

  std::vector<double> cosines;
  for (std::size_t e = 0; e < eval_episodes; ++e) {
    RngStream rng(cfg.seed + 2, e);
    const auto ep = sample_episode(prior::DirichletRows{}, 2, t, rng);
    cosines.push_back(per_position_cosine(minimal_forward(r.after_step2, ep.tokens),
                                          bigram_count_features(ep.tokens, 2)));
  }
  r.episodes = eval_episodes;
  r.cosine = cosines.empty() ? 0.0 : tree_sum(cosines) / static_cast<double>(cosines.size());
  return r;
}

}  // namespace icmc
