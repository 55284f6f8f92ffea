#pragma once

// Next-token losses shared by both architectures. Position p predicts token
// p+1; the last position has no target and is excluded.

#include <cmath>
#include <span>
#include <variant>

#include "icmc/numcore.hpp"

namespace icmc {

struct CrossEntropy {};
/// Multi-class hinge: (1/k) sum_{i != y} max(0, delta + f_i - f_y).
struct Margin {
  double delta = 1.0;
};
using LossKind = std::variant<CrossEntropy, Margin>;

inline void check_loss(const LossKind& kind) {
  if (const auto* m = std::get_if<Margin>(&kind))
    if (!(m->delta > 0.0)) throw InvalidParameter("margin must be positive");
}

/// Mean loss over positions 0..T-2 of a T×k logit matrix. When `dlogits` is
/// non-null it receives d(loss)/d(logits) (same shape, last row zero).
inline double sequence_loss(const Matrix& logits, std::span<const int> tokens, const LossKind& kind,
                            Matrix* dlogits = nullptr) {
  check_loss(kind);
  const std::size_t T = tokens.size();
  const std::size_t k = logits.cols;
  if (logits.rows != T) throw InvalidParameter("logits rows must equal sequence length");
  if (dlogits) *dlogits = Matrix(T, k);
  if (T < 2) return 0.0;
  const double scale = 1.0 / static_cast<double>(T - 1);
  double total = 0.0;
  std::vector<double> p(k);
  for (std::size_t pos = 0; pos + 1 < T; ++pos) {
    const auto y = static_cast<std::size_t>(tokens[pos + 1]);
    const auto row = logits.row(pos);
    if (std::holds_alternative<CrossEntropy>(kind)) {
      double m = row[0];
      for (double v : row) m = std::max(m, v);
      double z = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        p[i] = std::exp(row[i] - m);
        z += p[i];
      }
      total += -(row[y] - m - std::log(z));
      if (dlogits) {
        for (std::size_t i = 0; i < k; ++i) (*dlogits)(pos, i) = scale * (p[i] / z - (i == y ? 1.0 : 0.0));
      }
    } else {
      const double delta = std::get<Margin>(kind).delta;
      const double inv_k = 1.0 / static_cast<double>(k);
      for (std::size_t i = 0; i < k; ++i) {
        if (i == y) continue;
        const double h = delta + row[i] - row[y];
        if (h >= 0.0) {
          total += inv_k * h;
          if (dlogits) {
            (*dlogits)(pos, i) += scale * inv_k;
            (*dlogits)(pos, y) -= scale * inv_k;
          }
        }
      }
    }
  }
  return total * scale;
}

}  // namespace icmc
