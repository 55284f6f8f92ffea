#pragma once

// Minimal linear-attention model
//
//   f(E) = mask(E W (M E)^T) E,   M_ij = v_{i-j+1} for i >= j,
//
// i.e. f_{p,i} = sum_{t'<=p} 1{x_t' = i} sum_{s<=t'} v_{t'-s+1} W[x_p, x_s].
// Logits are linear in W and in v separately.

#include <span>
#include <vector>

#include "icmc/loss.hpp"
#include "icmc/numcore.hpp"

namespace icmc {

struct MinimalParams {
  Matrix W;               // k × k
  std::vector<double> v;  // relative-position generator, v[0] is offset 1

  std::size_t k() const { return W.rows; }

  static MinimalParams constant(std::size_t k, std::size_t t, double w, double v) {
    return {Matrix(k, k, w), std::vector<double>(t, v)};
  }

  std::size_t size() const { return W.data.size() + v.size(); }

  std::vector<double> flatten() const {
    std::vector<double> out(W.data);
    out.insert(out.end(), v.begin(), v.end());
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != size()) throw InvalidParameter("flat parameter size mismatch");
    std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(W.data.size()), W.data.begin());
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(W.data.size()), flat.end(), v.begin());
  }

  bool operator==(const MinimalParams&) const = default;
};

namespace detail {
inline void check_minimal(const MinimalParams& p, std::span<const int> tokens) {
  if (p.W.rows != p.W.cols || p.W.rows < 2) throw InvalidParameter("W must be square with k >= 2");
  if (tokens.size() > p.v.size()) throw InvalidInput("sequence longer than the position vector");
  for (int x : tokens)
    if (x < 0 || static_cast<std::size_t>(x) >= p.k()) throw InvalidInput("token out of range");
}
}  // namespace detail

/// T × k logits in O(T^2 k).
inline Matrix minimal_forward(const MinimalParams& P, std::span<const int> tokens) {
  detail::check_minimal(P, tokens);
  const std::size_t T = tokens.size(), k = P.k();
  // u[t'][m] = sum_{s<=t'} v_{t'-s+1} W[m, x_s]
  Matrix u(T, k);
  for (std::size_t tp = 0; tp < T; ++tp)
    for (std::size_t s = 0; s <= tp; ++s) {
      const double vv = P.v[tp - s];
      const auto xs = static_cast<std::size_t>(tokens[s]);
      for (std::size_t m = 0; m < k; ++m) u(tp, m) += vv * P.W(m, xs);
    }
  // C[m][i] = running sum over t' <= p with x_t' = i of u[t'][m]
  Matrix C(k, k);
  Matrix out(T, k);
  for (std::size_t p = 0; p < T; ++p) {
    const auto xp = static_cast<std::size_t>(tokens[p]);
    for (std::size_t m = 0; m < k; ++m) C(m, xp) += u(p, m);
    for (std::size_t i = 0; i < k; ++i) out(p, i) = C(xp, i);
  }
  return out;
}

/// Gradient of sequence_loss(minimal_forward(P, tokens)). Cross-entropy
/// applies softmax to the raw logits.
inline MinimalParams minimal_backward(const MinimalParams& P, std::span<const int> tokens, const LossKind& kind,
                                      double* loss_out = nullptr) {
  const Matrix logits = minimal_forward(P, tokens);
  Matrix g;
  const double loss = sequence_loss(logits, tokens, kind, &g);
  if (loss_out) *loss_out = loss;
  const std::size_t T = tokens.size(), k = P.k();
  MinimalParams grad{Matrix(k, k), std::vector<double>(P.v.size(), 0.0)};
  // dC[m][i] accumulated from the end: dC_p[x_p][i] += g[p][i]; du[t'][m] = dC_{>=t'}[m][x_t'].
  Matrix dC(k, k);
  Matrix du(T, k);
  for (std::size_t p = T; p-- > 0;) {
    const auto xp = static_cast<std::size_t>(tokens[p]);
    for (std::size_t i = 0; i < k; ++i) dC(xp, i) += g(p, i);
    for (std::size_t m = 0; m < k; ++m) du(p, m) = dC(m, xp);
  }
  for (std::size_t tp = 0; tp < T; ++tp)
    for (std::size_t s = 0; s <= tp; ++s) {
      const double vv = P.v[tp - s];
      const auto xs = static_cast<std::size_t>(tokens[s]);
      double dv = 0.0;
      for (std::size_t m = 0; m < k; ++m) {
        const double dum = du(tp, m);
        dv += dum * P.W(m, xs);
        grad.W(m, xs) += dum * vv;
      }
      grad.v[tp - s] += dv;
    }
  return grad;
}

/// v = (0, 1, 0, ...), W = I: logits count in-context transitions out of x_p.
inline MinimalParams minimal_bigram_construction(std::size_t k, std::size_t t) {
  MinimalParams p{Matrix::identity(k), std::vector<double>(t, 0.0)};
  if (t >= 2) p.v[1] = 1.0;
  return p;
}

/// v = (1, 0, ...), W = 11^T: logits count token occurrences.
inline MinimalParams minimal_unigram_construction(std::size_t k, std::size_t t) {
  MinimalParams p{Matrix(k, k, 1.0), std::vector<double>(t, 0.0)};
  if (t >= 1) p.v[0] = 1.0;
  return p;
}

}  // namespace icmc
