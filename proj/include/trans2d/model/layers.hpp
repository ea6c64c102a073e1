#pragma once

// Building blocks of the 2D transformer. Activations are (rows, channels,
// width); attention internals carry a head axis so all heads run through the
// same contractions.

#include <cmath>
#include <array>
#include <cstdint>
#include <memory>
#include <type_traits>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "trans2d/errors.hpp"
#include "trans2d/tensor.hpp"

namespace trans2d::model {

using ad::Shape;
using ad::Tensor;

/// out[i][j] = W_j x[i][j] (+ b_j). W is (C, d_out, d_in), bias (C, d_out).
inline Tensor linear2d(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr) {
  if (x.rank() != 3 || w.rank() != 3) throw DimensionError("linear2d expects (N,C,d_in) input and (C,d_out,d_in) weights");
  if (w.dim(0) != x.dim(1)) {
    throw DimensionError("linear2d: weight stack has " + std::to_string(w.dim(0)) + " channels, input has " +
                         std::to_string(x.dim(1)));
  }
  Tensor y = ad::contract(x, w, "icx,cyx->icy");
  if (bias) y = ad::add(y, ad::expand(*bias, y.shape(), {1, 2}));
  return y;
}

/// Channel-shared variant: W is (d_out, d_in), bias (d_out).
inline Tensor linear1d(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr) {
  if (x.rank() != 3 || w.rank() != 2) throw DimensionError("linear1d expects (N,C,d_in) input and (d_out,d_in) weights");
  Tensor y = ad::contract(x, w, "icx,yx->icy");
  if (bias) y = ad::add(y, ad::expand(*bias, y.shape(), {2}));
  return y;
}

// Dispatches on the weight rank: a leading channel axis selects linear2d.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr) {
  return w.rank() == 3 ? linear2d(x, w, bias) : linear1d(x, w, bias);
}

/// Per-head projection to (N, C, h, d_h). W is (C, h, d_h, d) for Linear2D
/// or (h, d_h, d) when shared across channels.
inline Tensor project_heads(const Tensor& x, const Tensor& w) {
  if (w.rank() == 4) {
    if (w.dim(0) != x.dim(1)) throw DimensionError("projection channel count mismatch");
    return ad::contract(x, w, "icx,chyx->ichy");
  }
  return ad::contract(x, w, "icx,hyx->ichy");
}

struct AttentionTerms {
  bool full = true;
  bool item = true;
  bool channel = true;
  bool any() const { return full || item || channel; }
};

/// Weights of the three score terms. Each is a one-element tensor, or one
/// entry per head. Disabled terms may be left undefined.
struct AttentionAlphas {
  Tensor full, item, channel;
};

// allowed[i * n + z] != 0 when row i may attend to row z. Empty = no mask.
using ItemMask = std::vector<std::uint8_t>;

inline ItemMask causal_mask(std::size_t n) {
  ItemMask m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t z = 0; z <= i; ++z) m[i * n + z] = 1;
  }
  return m;
}

namespace detail {

// alpha * t where alpha has one entry or one per head (axis 0 of t).
inline Tensor weight_term(const Tensor& t, const Tensor& alpha) {
  if (alpha.size() == 1) return ad::mul_scalar(t, alpha);
  if (alpha.size() != t.dim(0)) throw DimensionError("per-head alpha count does not match heads");
  return ad::mul(t, ad::expand(alpha, t.shape(), {0}));
}

}  // namespace detail

struct AttentionOutput {
  Tensor output;  // (N, C, h, d_h)
  Tensor probs;   // (h, N, C, N, C)
};

/// Raw score terms from Q, K of shape (N, C, h, d_h):
///   full[a,i,j,z,e] = q_ij . k_ze
///   item[a,i,z]     = sum_c q_ic . k_zc
///   channel[a,i,j,e] = sum over rows z visible from i of q_zj . k_ze
struct AttentionScores {
  Tensor full;     // (h, N, C, N, C)
  Tensor item;     // (h, N, N)
  Tensor channel;  // (h, N, C, C)
};

inline AttentionScores attention_scores(const Tensor& q, const Tensor& k, const ItemMask& allowed,
                                        const AttentionTerms& terms = {}) {
  if (q.rank() != 4 || q.shape() != k.shape()) throw DimensionError("Q and K must share shape (N, C, h, d_h)");
  const std::size_t n = q.dim(0);
  if (!allowed.empty() && allowed.size() != n * n) throw DimensionError("mask must be N x N");
  AttentionScores s;
  if (terms.full) s.full = ad::contract(q, k, "ichd,zehd->hicze");
  if (terms.item) s.item = ad::contract(q, k, "ichd,zchd->hiz");
  if (terms.channel) {
    auto g = ad::contract(q, k, "zchd,zehd->hzce");
    ad::Buffer mf(n * n, 1.0);
    if (!allowed.empty()) {
      for (std::size_t i = 0; i < n * n; ++i) mf[i] = allowed[i] ? 1.0 : 0.0;
    }
    s.channel = ad::contract(Tensor({n, n}, std::move(mf)), g, "iz,hzce->hice");
  }
  return s;
}

/// Head-batched 2D attention over Q, K, V of shape (N, C, h, d_h). The
/// weighted sum of the enabled score terms is masked, scaled by 1/sqrt(d_h)
/// and normalized jointly over every (z, e) target.
inline AttentionOutput attention2d_heads(const Tensor& q, const Tensor& k, const Tensor& v,
                                         const AttentionAlphas& alphas, const ItemMask& allowed,
                                         const AttentionTerms& terms) {
  if (q.rank() != 4 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention expects Q, K, V of identical shape (N, C, h, d_h)");
  }
  if (!terms.any()) throw ConfigError("at least one attention term must be enabled");
  const std::size_t n = q.dim(0), C = q.dim(1), h = q.dim(2), dh = q.dim(3);
  const Shape full_shape{h, n, C, n, C};
  const auto raw = attention_scores(q, k, allowed, terms);

  Tensor scores;
  auto accumulate = [&](const Tensor& t) { scores = scores.defined() ? ad::add(scores, t) : t; };
  if (terms.full) accumulate(detail::weight_term(raw.full, alphas.full));
  if (terms.item) accumulate(ad::expand(detail::weight_term(raw.item, alphas.item), full_shape, {0, 1, 3}));
  if (terms.channel) {
    accumulate(ad::expand(detail::weight_term(raw.channel, alphas.channel), full_shape, {0, 1, 2, 4}));
  }
  if (!allowed.empty()) {
    std::vector<std::uint8_t> blocked(scores.size(), 0);
    std::size_t idx = 0;
    for (std::size_t a = 0; a < h; ++a) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t z = 0; z < n; ++z) {
            const std::uint8_t b = allowed[i * n + z] ? 0 : 1;
            for (std::size_t e = 0; e < C; ++e) blocked[idx++] = b;
          }
        }
      }
    }
    scores = ad::masked_fill(scores, blocked, -std::numeric_limits<double>::infinity());
  }
  scores = ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
  auto p = ad::reshape(ad::softmax_lastdim(ad::reshape(scores, {h, n, C, n * C})), full_shape);
  return {ad::contract(p, v, "hicze,zehd->ichd"), p};
}

/// Score pieces for candidate rows that attend to a shared history of nh rows
/// plus their own row. Undefined members are absent terms (or no history).
struct CandidateScores {
  Tensor af_hist;  // (h, m, C, nh, C)  q_mc . k_ze
  Tensor self;     // (h, m, C, C)      q_mc . k_me
  Tensor ai_hist;  // (h, m, nh)
  Tensor ai_self;  // (h, m)
  Tensor gsum;     // (h, C, C)         sum over history rows of q_zc . k_ze
};

namespace detail {

template <typename Ptr>
auto rows_map(Ptr ptr, std::size_t rows, std::size_t cols, std::size_t stride) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Base = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>, const Mat, Mat>;
  return Eigen::Map<Base, 0, Eigen::OuterStride<>>(ptr, static_cast<Eigen::Index>(rows),
                                                   static_cast<Eigen::Index>(cols),
                                                   Eigen::OuterStride<>(static_cast<Eigen::Index>(stride)));
}

}  // namespace detail

/// Fused attention of candidate rows over [history rows, own row]: builds the
/// weighted scores, normalizes over every (row, channel) target and mixes the
/// values. Returns (m, C, h, d_h). Matches attention2d_heads on the last row
/// of each history + candidate sequence.
inline Tensor candidate_attention(const CandidateScores& sc, const AttentionAlphas& alphas,
                                  const AttentionTerms& terms, double scale, const Tensor& v_hist,
                                  const Tensor& v_self) {
  if (!terms.any()) throw ConfigError("at least one attention term must be enabled");
  if (v_self.rank() != 4) throw DimensionError("candidate values must be (m, C, h, d_h)");
  const std::size_t m = v_self.dim(0), C = v_self.dim(1), h = v_self.dim(2), dh = v_self.dim(3);
  const std::size_t nh = v_hist.defined() ? v_hist.dim(0) : 0;
  const std::size_t n = nh + 1, row = n * C;
  auto expect = [](const Tensor& t, const Shape& shape, const char* what) {
    if (!t.defined() || t.shape() != shape) throw DimensionError(std::string("candidate_attention: bad ") + what);
  };
  if (terms.full || terms.channel) expect(sc.self, {h, m, C, C}, "self scores");
  if (terms.item) expect(sc.ai_self, {h, m}, "item self scores");
  if (nh > 0) {
    expect(v_hist, {nh, C, h, dh}, "history values");
    if (terms.full) expect(sc.af_hist, {h, m, C, nh, C}, "full scores");
    if (terms.item) expect(sc.ai_hist, {h, m, nh}, "item scores");
    if (terms.channel) expect(sc.gsum, {h, C, C}, "channel sums");
  }
  auto coeffs = [&](bool on, const Tensor& a) {
    ad::Buffer c(h, 0.0);
    if (!on) return c;
    if (!a.defined() || (a.size() != 1 && a.size() != h)) throw DimensionError("alpha must have 1 or h entries");
    for (std::size_t i = 0; i < h; ++i) c[i] = a.data()[a.size() == 1 ? 0 : i];
    return c;
  };
  const auto cf = coeffs(terms.full, alphas.full);
  const auto ci = coeffs(terms.item, alphas.item);
  const auto cc = coeffs(terms.channel, alphas.channel);

  const double* af = terms.full && nh > 0 ? sc.af_hist.data().data() : nullptr;
  const double* self = terms.full || terms.channel ? sc.self.data().data() : nullptr;
  const double* aih = terms.item && nh > 0 ? sc.ai_hist.data().data() : nullptr;
  const double* ais = terms.item ? sc.ai_self.data().data() : nullptr;
  const double* gs = terms.channel && nh > 0 ? sc.gsum.data().data() : nullptr;

  // The channel term of target (z, e) for query (a, i, c); it does not depend on z.
  auto channel_term = [&](std::size_t a, std::size_t i, std::size_t c, std::size_t e) {
    double t = self[((a * m + i) * C + c) * C + e];
    if (gs) t += gs[(a * C + c) * C + e];
    return t;
  };

  auto probs = std::make_shared<ad::Buffer>(h * m * C * row);
  for (std::size_t a = 0; a < h; ++a) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        double* out = probs->data() + ((a * m + i) * C + c) * row;
        for (std::size_t z = 0; z < n; ++z) {
          const bool own = z == nh;
          double item = 0.0;
          if (terms.item) item = own ? ais[a * m + i] : aih[(a * m + i) * nh + z];
          for (std::size_t e = 0; e < C; ++e) {
            double v = 0.0;
            if (terms.full) v += cf[a] * (own ? self[((a * m + i) * C + c) * C + e] : af[(((a * m + i) * C + c) * nh + z) * C + e]);
            if (terms.item) v += ci[a] * item;
            if (terms.channel) v += cc[a] * channel_term(a, i, c, e);
            out[z * C + e] = scale * v;
          }
        }
        Eigen::Map<Eigen::ArrayXd> r(out, static_cast<Eigen::Index>(row));
        r = (r - r.maxCoeff()).exp();
        r *= 1.0 / r.sum();
      }
    }
  }

  // o[i, c, a, :] = P_hist(a, i) V_hist(a) + P_self(a, i) V_self(a, i)
  ad::Buffer o(m * C * h * dh, 0.0);
  const std::size_t vs = h * dh;
  for (std::size_t a = 0; a < h; ++a) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* pa = probs->data() + (a * m + i) * C * row;
      auto out = detail::rows_map(o.data() + i * C * vs + a * dh, C, dh, vs);
      out.noalias() = detail::rows_map(pa + nh * C, C, C, row) *
                      detail::rows_map(v_self.data().data() + i * C * vs + a * dh, C, dh, vs);
      if (nh > 0) {
        out.noalias() += detail::rows_map(pa, C, nh * C, row) *
                         detail::rows_map(v_hist.data().data() + a * dh, nh * C, dh, vs);
      }
    }
  }
  Tensor result({m, C, h, dh}, std::move(o));

  enum Slot { kAF, kSelf, kAIH, kAIS, kGsum, kAlphaF, kAlphaI, kAlphaC, kVHist, kVSelf, kSlots };
  std::array<const Tensor*, kSlots> slots{
      af ? &sc.af_hist : nullptr,         self ? &sc.self : nullptr,
      aih ? &sc.ai_hist : nullptr,        ais ? &sc.ai_self : nullptr,
      gs ? &sc.gsum : nullptr,            terms.full ? &alphas.full : nullptr,
      terms.item ? &alphas.item : nullptr, terms.channel ? &alphas.channel : nullptr,
      nh > 0 ? &v_hist : nullptr,         &v_self};
  std::vector<Tensor> inputs;
  std::array<int, kSlots> index{};
  for (std::size_t k = 0; k < kSlots; ++k) {
    index[k] = slots[k] ? static_cast<int>(inputs.size()) : -1;
    if (slots[k]) inputs.push_back(*slots[k]);
  }
  ad::Tape* tape = ad::detail::recording_tape(std::span<const Tensor>(inputs));
  if (!tape) return result;
  std::array<std::size_t, 3> alpha_sizes{};
  for (std::size_t k = 0; k < 3; ++k) alpha_sizes[k] = slots[kAlphaF + k] ? slots[kAlphaF + k]->size() : 0;

  tape->record(result, inputs, [=, vh = v_hist, vsf = v_self, sc = sc](auto g, auto gin) {
    auto grad = [&](Slot s) -> double* {
      return index[s] >= 0 && gin[static_cast<std::size_t>(index[s])] ? gin[static_cast<std::size_t>(index[s])]->data()
                                                                       : nullptr;
    };
    double *d_af = grad(kAF), *d_self = grad(kSelf), *d_aih = grad(kAIH), *d_ais = grad(kAIS), *d_gs = grad(kGsum);
    double *d_alf = grad(kAlphaF), *d_ali = grad(kAlphaI), *d_alc = grad(kAlphaC);
    double *d_vh = grad(kVHist), *d_vs = grad(kVSelf);
    auto alpha_slot = [&](Slot s, std::size_t a) {
      return alpha_sizes[s - kAlphaF] != 1 ? a : std::size_t{0};
    };
    const double* af = terms.full && nh > 0 ? sc.af_hist.data().data() : nullptr;
    const double* self = terms.full || terms.channel ? sc.self.data().data() : nullptr;
    const double* aih = terms.item && nh > 0 ? sc.ai_hist.data().data() : nullptr;
    const double* ais = terms.item ? sc.ai_self.data().data() : nullptr;
    const double* gs = terms.channel && nh > 0 ? sc.gsum.data().data() : nullptr;

    ad::Buffer ds(C * row);  // d(scores) for one (a, i)
    for (std::size_t a = 0; a < h; ++a) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* pa = probs->data() + (a * m + i) * C * row;
        auto go = detail::rows_map(g.data() + i * C * vs + a * dh, C, dh, vs);
        auto dP = detail::rows_map(ds.data(), C, row, row);
        // dP = G V^T over history and own-row targets.
        dP.rightCols(static_cast<Eigen::Index>(C)).noalias() =
            go * detail::rows_map(vsf.data().data() + i * C * vs + a * dh, C, dh, vs).transpose();
        if (nh > 0) {
          dP.leftCols(static_cast<Eigen::Index>(nh * C)).noalias() =
              go * detail::rows_map(vh.data().data() + a * dh, nh * C, dh, vs).transpose();
        }
        if (d_vs) {
          detail::rows_map(d_vs + i * C * vs + a * dh, C, dh, vs).noalias() +=
              detail::rows_map(pa + nh * C, C, C, row).transpose() * go;
        }
        if (d_vh && nh > 0) {
          detail::rows_map(d_vh + a * dh, nh * C, dh, vs).noalias() +=
              detail::rows_map(pa, C, nh * C, row).transpose() * go;
        }
        // Softmax backward, then the scale.
        for (std::size_t c = 0; c < C; ++c) {
          const double* p = pa + c * row;
          double* d = ds.data() + c * row;
          double dot = 0.0;
          for (std::size_t t = 0; t < row; ++t) dot += p[t] * d[t];
          for (std::size_t t = 0; t < row; ++t) d[t] = scale * p[t] * (d[t] - dot);
        }
        double acc_f = 0.0, acc_i = 0.0, acc_c = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double* d = ds.data() + c * row;
          const std::size_t q = (a * m + i) * C + c;
          for (std::size_t z = 0; z < n; ++z) {
            const bool own = z == nh;
            double dz = 0.0;
            for (std::size_t e = 0; e < C; ++e) {
              const double v = d[z * C + e];
              dz += v;
              if (terms.full) {
                if (own) {
                  acc_f += v * self[q * C + e];
                  if (d_self) d_self[q * C + e] += cf[a] * v;
                } else {
                  acc_f += v * af[(q * nh + z) * C + e];
                  if (d_af) d_af[(q * nh + z) * C + e] += cf[a] * v;
                }
              }
              if (terms.channel) {
                double t = self[q * C + e];
                if (gs) t += gs[(a * C + c) * C + e];
                acc_c += v * t;
                if (d_self) d_self[q * C + e] += cc[a] * v;
                if (d_gs) d_gs[(a * C + c) * C + e] += cc[a] * v;
              }
            }
            if (terms.item) {
              const double t = own ? ais[a * m + i] : aih[(a * m + i) * nh + z];
              acc_i += dz * t;
              if (own && d_ais) d_ais[a * m + i] += ci[a] * dz;
              if (!own && d_aih) d_aih[(a * m + i) * nh + z] += ci[a] * dz;
            }
          }
        }
        if (d_alf) d_alf[alpha_slot(kAlphaF, a)] += acc_f;
        if (d_ali) d_ali[alpha_slot(kAlphaI, a)] += acc_i;
        if (d_alc) d_alc[alpha_slot(kAlphaC, a)] += acc_c;
      }
    }
  });
  return result;
}

/// Single-head form on (N, C, d_h) arrays with scalar alphas.
inline AttentionOutput scaled_dot_product_attention_2d(const Tensor& q, const Tensor& k, const Tensor& v,
                                                       const AttentionAlphas& alphas, const ItemMask& allowed,
                                                       const AttentionTerms& terms) {
  if (q.rank() != 3) throw DimensionError("expected (N, C, d_h)");
  auto heads = [](const Tensor& t) { return ad::reshape(t, {t.dim(0), t.dim(1), 1, t.dim(2)}); };
  auto r = attention2d_heads(heads(q), heads(k), heads(v), alphas, allowed, terms);
  const std::size_t n = q.dim(0), C = q.dim(1);
  return {ad::reshape(r.output, {n, C, q.dim(2)}), ad::reshape(r.probs, {n, C, n, C})};
}

}  // namespace trans2d::model
