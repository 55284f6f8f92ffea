#pragma once

// Long double reference evaluators written directly from the model
// definitions, independent of the library's forward passes. Used as
// finite-difference and forward-pass oracles.

#include <cmath>
#include <span>
#include <vector>

#include "icmc/loss.hpp"
#include "icmc/minimal.hpp"
#include "icmc/transformer.hpp"

namespace ref {

using LD = long double;
using Grid = std::vector<std::vector<LD>>;

inline Grid zeros(std::size_t r, std::size_t c) { return Grid(r, std::vector<LD>(c, 0.0L)); }

inline Grid transformer_logits(const icmc::TransformerParams& P, std::span<const int> x) {
  const auto& c = P.config;
  const std::size_t T = x.size(), d = c.d, dh = c.d_head();
  Grid h = zeros(T, d);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t u = 0; u < d; ++u) h[i][u] = P.embed(static_cast<std::size_t>(x[i]), u);
  for (const auto& L : P.layers) {
    Grid next = h;
    for (std::size_t hd = 0; hd < c.heads; ++hd) {
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<LD> score(i + 1);
        LD mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          LD s = 0.0L;
          for (std::size_t u = hd * dh; u < (hd + 1) * dh; ++u) {
            LD q = 0.0L, kv = 0.0L;
            for (std::size_t r = 0; r < d; ++r) {
              q += h[i][r] * L.wq(r, u);
              kv += h[j][r] * L.wk(r, u);
            }
            s += (q + L.pos(i - j, u)) * kv;
          }
          score[j] = s / std::sqrt(static_cast<LD>(dh));
          mx = std::max(mx, score[j]);
        }
        LD z = 0.0L;
        for (auto& s : score) z += (s = std::exp(s - mx));
        for (std::size_t u = hd * dh; u < (hd + 1) * dh; ++u)
          for (std::size_t j = 0; j <= i; ++j) {
            LD val = 0.0L;
            for (std::size_t r = 0; r < d; ++r) val += h[j][r] * L.wv(r, u);
            next[i][u] += score[j] / z * val;
          }
      }
    }
    h = std::move(next);
  }
  Grid out = zeros(T, c.k);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t m = 0; m < c.k; ++m)
      for (std::size_t u = 0; u < d; ++u) out[i][m] += h[i][u] * P.proj(u, m);
  return out;
}

/// f_{p,i} = sum_{t'<=p} 1{x_t' = i} sum_{s<=t'} v_{t'-s+1} W[x_p, x_s].
inline Grid minimal_logits(const icmc::MinimalParams& P, std::span<const int> x) {
  const std::size_t T = x.size(), k = P.k();
  Grid out = zeros(T, k);
  for (std::size_t p = 0; p < T; ++p)
    for (std::size_t tp = 0; tp <= p; ++tp)
      for (std::size_t s = 0; s <= tp; ++s)
        out[p][static_cast<std::size_t>(x[tp])] +=
            static_cast<LD>(P.v[tp - s]) * P.W(static_cast<std::size_t>(x[p]), static_cast<std::size_t>(x[s]));
  return out;
}

inline LD loss(const Grid& f, std::span<const int> x, const icmc::LossKind& kind) {
  const std::size_t T = x.size();
  if (T < 2) return 0.0L;
  LD total = 0.0L;
  for (std::size_t p = 0; p + 1 < T; ++p) {
    const auto y = static_cast<std::size_t>(x[p + 1]);
    const auto& row = f[p];
    if (std::holds_alternative<icmc::CrossEntropy>(kind)) {
      LD mx = row[0];
      for (LD v : row) mx = std::max(mx, v);
      LD z = 0.0L;
      for (LD v : row) z += std::exp(v - mx);
      total += std::log(z) - (row[y] - mx);
    } else {
      const LD delta = std::get<icmc::Margin>(kind).delta;
      for (std::size_t i = 0; i < row.size(); ++i)
        if (i != y) total += std::max(0.0L, delta + row[i] - row[y]) / static_cast<LD>(row.size());
    }
  }
  return total / static_cast<LD>(T - 1);
}

/// Smallest |Delta + f_i - f_y| over active positions; finite differences
/// are valid only when this is well above the perturbation size.
inline LD hinge_clearance(const Grid& f, std::span<const int> x, double delta) {
  LD m = INFINITY;
  for (std::size_t p = 0; p + 1 < x.size(); ++p) {
    const auto y = static_cast<std::size_t>(x[p + 1]);
    for (std::size_t i = 0; i < f[p].size(); ++i)
      if (i != y) m = std::min(m, std::abs(static_cast<LD>(delta) + f[p][i] - f[p][y]));
  }
  return m;
}

}  // namespace ref
