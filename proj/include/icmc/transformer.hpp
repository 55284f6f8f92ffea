#pragma once

// Attention-only transformer with causal masking and learned relative
// position vectors:
//
//   h^0_i = E[x_i]
//   s_ij  = (q_i + r_{i-j}) . k_j / sqrt(d_head),  j <= i
//   h^{l+1} = h^l + softmax(s) V
//   logits = h^L W_out
//
// r_o is row o of the layer's position table (offset o+1 in 1-based terms).
// No MLPs, normalization or biases.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "icmc/loss.hpp"
#include "icmc/numcore.hpp"

namespace icmc {

struct TransformerConfig {
  std::size_t layers = 2;
  std::size_t heads = 1;
  std::size_t d = 16;
  std::size_t k = 2;
  std::size_t t = 100;  // longest supported sequence
  double init_scale = 0.02;

  std::size_t d_head() const { return d / heads; }

  void validate() const {
    require(layers >= 1, "transformer needs at least one layer");
    require(heads >= 1 && d % heads == 0, "hidden width must be divisible by the head count");
    require(k >= 2, "vocabulary needs at least two tokens");
    require(t >= 1, "max sequence length must be positive");
    require(init_scale >= 0.0, "init scale must be nonnegative");
  }
};

struct AttentionLayer {
  Matrix wq, wk, wv;  // d × d, head h owns columns [h*d_head, (h+1)*d_head)
  Matrix pos;         // t × d relative position table
};

struct TransformerParams {
  TransformerConfig config;
  Matrix embed;  // k × d
  std::vector<AttentionLayer> layers;
  Matrix proj;   // d × k

  static TransformerParams zeros(const TransformerConfig& c) {
    c.validate();
    TransformerParams p;
    p.config = c;
    p.embed = Matrix(c.k, c.d);
    p.layers.resize(c.layers);
    for (auto& l : p.layers) {
      l.wq = Matrix(c.d, c.d);
      l.wk = Matrix(c.d, c.d);
      l.wv = Matrix(c.d, c.d);
      l.pos = Matrix(c.t, c.d);
    }
    p.proj = Matrix(c.d, c.k);
    return p;
  }

  /// Visits every parameter array in a fixed order together with its name.
  template <typename F>
  void for_each(F&& f) {
    f("embed", embed);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string pre = "layer" + std::to_string(i) + ".";
      f(pre + "wq", layers[i].wq);
      f(pre + "wk", layers[i].wk);
      f(pre + "wv", layers[i].wv);
      f(pre + "pos", layers[i].pos);
    }
    f("proj", proj);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<TransformerParams*>(this)->for_each(
        [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  std::size_t size() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += m.data.size(); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(size());
    for_each([&](const std::string&, const Matrix& m) { out.insert(out.end(), m.data.begin(), m.data.end()); });
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != size()) throw InvalidParameter("flat parameter size mismatch");
    std::size_t off = 0;
    for_each([&](const std::string&, Matrix& m) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                flat.begin() + static_cast<std::ptrdiff_t>(off + m.data.size()), m.data.begin());
      off += m.data.size();
    });
  }

  bool operator==(const TransformerParams& o) const { return flatten() == o.flatten(); }
};

inline TransformerParams init_params(const TransformerConfig& c, RngStream& rng) {
  auto p = TransformerParams::zeros(c);
  p.for_each([&](const std::string&, Matrix& m) {
    for (double& x : m.data) x = c.init_scale * rng.normal();
  });
  return p;
}

/// Per-sequence activations kept for the backward pass and for inspection.
struct TransformerTrace {
  std::vector<Matrix> stream;  // layers+1 residual streams, each T × d
  std::vector<Matrix> q, kk, v;  // per layer, T × d
  // per layer, per head: T × T raw scores and probabilities (upper triangle 0)
  std::vector<std::vector<Matrix>> scores, probs;
  Matrix logits;  // T × k
};

namespace detail {

inline void matmul_into(const Matrix& a, const Matrix& b, Matrix& out) {
  out = Matrix(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.data.data() + i * out.cols;
    for (std::size_t kk = 0; kk < a.cols; ++kk) {
      const double aik = a(i, kk);
      if (aik == 0.0) continue;
      const double* br = b.data.data() + kk * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += aik * br[j];
    }
  }
}

// out += a^T b
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* ar = a.data.data() + r * a.cols;
    const double* br = b.data.data() + r * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double ai = ar[i];
      if (ai == 0.0) continue;
      double* o = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += ai * br[j];
    }
  }
}

// out += a b^T
inline void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = a.data.data() + i * a.cols;
    double* o = out.data.data() + i * out.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* br = b.data.data() + j * b.cols;
      double s = 0.0;
      for (std::size_t kk = 0; kk < a.cols; ++kk) s += ar[kk] * br[kk];
      o[j] += s;
    }
  }
}

inline void check_sequence(const TransformerConfig& c, std::span<const int> tokens) {
  if (tokens.size() > c.t) throw InvalidInput("sequence longer than the position table");
  for (int x : tokens)
    if (x < 0 || static_cast<std::size_t>(x) >= c.k) throw InvalidInput("token out of range");
}

}  // namespace detail

inline TransformerTrace forward_trace(const TransformerParams& P, std::span<const int> tokens) {
  const auto& c = P.config;
  detail::check_sequence(c, tokens);
  const std::size_t T = tokens.size(), d = c.d, dh = c.d_head();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  TransformerTrace tr;
  tr.stream.resize(c.layers + 1);
  tr.q.resize(c.layers);
  tr.kk.resize(c.layers);
  tr.v.resize(c.layers);
  tr.scores.resize(c.layers);
  tr.probs.resize(c.layers);
  Matrix& h0 = tr.stream[0];
  h0 = Matrix(T, d);
  for (std::size_t i = 0; i < T; ++i) {
    const auto e = P.embed.row(static_cast<std::size_t>(tokens[i]));
    std::copy(e.begin(), e.end(), h0.row(i).begin());
  }
  for (std::size_t l = 0; l < c.layers; ++l) {
    const auto& L = P.layers[l];
    const Matrix& h = tr.stream[l];
    detail::matmul_into(h, L.wq, tr.q[l]);
    detail::matmul_into(h, L.wk, tr.kk[l]);
    detail::matmul_into(h, L.wv, tr.v[l]);
    Matrix next = h;
    tr.scores[l].assign(c.heads, Matrix(T, T));
    tr.probs[l].assign(c.heads, Matrix(T, T));
    for (std::size_t hd = 0; hd < c.heads; ++hd) {
      const std::size_t off = hd * dh;
      Matrix& S = tr.scores[l][hd];
      Matrix& A = tr.probs[l][hd];
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = tr.q[l].data.data() + i * d + off;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = tr.kk[l].data.data() + j * d + off;
          const double* r = L.pos.data.data() + (i - j) * d + off;
          double s = 0.0;
          for (std::size_t u = 0; u < dh; ++u) s += (qi[u] + r[u]) * kj[u];
          s *= inv_sqrt;
          S(i, j) = s;
          m = std::max(m, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          A(i, j) = std::exp(S(i, j) - m);
          z += A(i, j);
        }
        double* out = next.data.data() + i * d + off;
        for (std::size_t j = 0; j <= i; ++j) {
          A(i, j) /= z;
          const double a = A(i, j);
          const double* vj = tr.v[l].data.data() + j * d + off;
          for (std::size_t u = 0; u < dh; ++u) out[u] += a * vj[u];
        }
      }
    }
    tr.stream[l + 1] = std::move(next);
  }
  detail::matmul_into(tr.stream[c.layers], P.proj, tr.logits);
  return tr;
}

inline Matrix forward(const TransformerParams& P, std::span<const int> tokens) {
  return forward_trace(P, tokens).logits;
}

/// Gradient of sequence_loss(forward(P, tokens)) with respect to every parameter.
inline TransformerParams backward(const TransformerParams& P, std::span<const int> tokens, const LossKind& kind,
                                  double* loss_out = nullptr) {
  const auto& c = P.config;
  const auto tr = forward_trace(P, tokens);
  const std::size_t T = tokens.size(), d = c.d, dh = c.d_head();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dlogits;
  const double loss = sequence_loss(tr.logits, tokens, kind, &dlogits);
  if (loss_out) *loss_out = loss;

  auto g = TransformerParams::zeros(c);
  detail::matmul_tn_acc(tr.stream[c.layers], dlogits, g.proj);
  Matrix dh_cur(T, d);
  detail::matmul_nt_acc(dlogits, P.proj, dh_cur);

  std::vector<double> dA(T);
  for (std::size_t l = c.layers; l-- > 0;) {
    const auto& L = P.layers[l];
    auto& G = g.layers[l];
    const Matrix& h = tr.stream[l];
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (std::size_t hd = 0; hd < c.heads; ++hd) {
      const std::size_t off = hd * dh;
      const Matrix& A = tr.probs[l][hd];
      for (std::size_t i = 0; i < T; ++i) {
        const double* doi = dh_cur.data.data() + i * d + off;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = tr.v[l].data.data() + j * d + off;
          double s = 0.0;
          for (std::size_t u = 0; u < dh; ++u) s += doi[u] * vj[u];
          dA[j] = s;
          dot += A(i, j) * s;
          double* dvj = dv.data.data() + j * d + off;
          const double a = A(i, j);
          for (std::size_t u = 0; u < dh; ++u) dvj[u] += a * doi[u];
        }
        const double* qi = tr.q[l].data.data() + i * d + off;
        double* dqi = dq.data.data() + i * d + off;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = A(i, j) * (dA[j] - dot) * inv_sqrt;
          if (ds == 0.0) continue;
          const double* kj = tr.kk[l].data.data() + j * d + off;
          const double* r = L.pos.data.data() + (i - j) * d + off;
          double* dkj = dk.data.data() + j * d + off;
          double* dr = G.pos.data.data() + (i - j) * d + off;
          for (std::size_t u = 0; u < dh; ++u) {
            dqi[u] += ds * kj[u];
            dr[u] += ds * kj[u];
            dkj[u] += ds * (qi[u] + r[u]);
          }
        }
      }
    }
    detail::matmul_tn_acc(h, dq, G.wq);
    detail::matmul_tn_acc(h, dk, G.wk);
    detail::matmul_tn_acc(h, dv, G.wv);
    // Residual path keeps dh_cur; add the projections' input gradients.
    detail::matmul_nt_acc(dq, L.wq, dh_cur);
    detail::matmul_nt_acc(dk, L.wk, dh_cur);
    detail::matmul_nt_acc(dv, L.wv, dh_cur);
  }
  for (std::size_t i = 0; i < T; ++i) {
    auto e = g.embed.row(static_cast<std::size_t>(tokens[i]));
    const auto src = dh_cur.row(i);
    for (std::size_t u = 0; u < d; ++u) e[u] += src[u];
  }
  return g;
}

// ---------------------------------------------------------------- inspection

struct AttentionMaps {
  // [layer][head], T × T
  std::vector<std::vector<Matrix>> scores;
  std::vector<std::vector<Matrix>> probs;
};

inline AttentionMaps attention_maps(const TransformerParams& P, std::span<const int> tokens) {
  auto tr = forward_trace(P, tokens);
  return {std::move(tr.scores), std::move(tr.probs)};
}

/// Softmax over offsets 1..T of the position-only score r_o . k_i / sqrt(d_head),
/// with k_i the key of position i; averaged over positions and heads. Entry o-1
/// is the mass on offset o (offset 1 = the token itself, 2 = one back).
inline std::vector<double> effective_positional_profile(const TransformerParams& P, std::span<const int> tokens,
                                                        std::size_t layer) {
  const auto& c = P.config;
  if (layer >= c.layers) throw InvalidParameter("layer index out of range");
  const std::size_t T = tokens.size(), d = c.d, dh = c.d_head();
  std::vector<double> avg(T, 0.0);
  if (T == 0) return avg;
  const auto tr = forward_trace(P, tokens);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& L = P.layers[layer];
  std::vector<double> s(T);
  for (std::size_t hd = 0; hd < c.heads; ++hd) {
    const std::size_t off = hd * dh;
    for (std::size_t i = 0; i < T; ++i) {
      const double* ki = tr.kk[layer].data.data() + i * d + off;
      for (std::size_t o = 0; o < T; ++o) {
        const double* r = L.pos.data.data() + o * d + off;
        double acc = 0.0;
        for (std::size_t u = 0; u < dh; ++u) acc += r[u] * ki[u];
        s[o] = acc * inv_sqrt;
      }
      softmax_inplace(s);
      for (std::size_t o = 0; o < T; ++o) avg[o] += s[o];
    }
  }
  const double norm = 1.0 / static_cast<double>(T * c.heads);
  for (double& x : avg) x *= norm;
  return avg;
}

// ---------------------------------------------------------------- construction

/// Two-layer single-head induction construction on a 3k-wide stream
/// [current token | previous token | readout]. Layer 1 scores offset 2 at c
/// (others 0) and copies the token into block 1; layer 2 scores c where a
/// key's previous token equals the query token and copies that key's token
/// into block 2; the readout block is projected with gain c.
inline TransformerParams build_bigram_construction(std::size_t k, double c, std::size_t t = 256) {
  require(c > 0.0, "construction sharpness must be positive");
  TransformerConfig cfg{2, 1, 3 * k, k, t, 0.0};
  auto p = TransformerParams::zeros(cfg);
  const double s = std::sqrt(static_cast<double>(cfg.d));  // cancels the score scaling
  for (std::size_t i = 0; i < k; ++i) {
    p.embed(i, i) = 1.0;
    auto& l1 = p.layers[0];
    l1.wk(i, i) = c * s;
    l1.wv(i, k + i) = 1.0;
    auto& l2 = p.layers[1];
    l2.wq(i, i) = c * s;
    l2.wk(k + i, i) = 1.0;
    l2.wv(i, 2 * k + i) = 1.0;
    p.proj(2 * k + i, i) = c;
  }
  if (t >= 2)
    for (std::size_t u = 0; u < k; ++u) p.layers[0].pos(1, u) = 1.0;
  return p;
}

}  // namespace icmc
