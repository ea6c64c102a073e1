#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trans2d/data/preprocess.hpp"
#include "trans2d/data/schema.hpp"
#include "trans2d/errors.hpp"
#include "trans2d/model/layers.hpp"
#include "trans2d/rng.hpp"
#include "trans2d/tensor.hpp"

namespace trans2d::model {

enum class HeadMode { full_d, split_d };
enum class LinearMode { two_d, one_d };

// trans2d keeps the channel axis; the baselines collapse it before a standard
// transformer (mean of channel embeddings, or their concatenation).
enum class Architecture { trans2d, trans1d_avg, trans1d_concat };

inline std::string_view to_string(HeadMode m) { return m == HeadMode::full_d ? "full-d" : "split-d"; }
inline std::string_view to_string(LinearMode m) { return m == LinearMode::two_d ? "2D" : "1D"; }
inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::trans2d: return "trans2d";
    case Architecture::trans1d_avg: return "trans1d-avg";
    case Architecture::trans1d_concat: return "trans1d-concat";
  }
  return "?";
}

inline HeadMode head_mode_from(std::string_view s) {
  if (s == "full-d") return HeadMode::full_d;
  if (s == "split-d") return HeadMode::split_d;
  throw ConfigError("head_mode must be full-d or split-d, got '" + std::string(s) + "'");
}
inline LinearMode linear_mode_from(std::string_view s) {
  if (s == "2D") return LinearMode::two_d;
  if (s == "1D") return LinearMode::one_d;
  throw ConfigError("linear_mode must be 2D or 1D, got '" + std::string(s) + "'");
}
inline Architecture architecture_from(std::string_view s) {
  for (auto a : {Architecture::trans2d, Architecture::trans1d_avg, Architecture::trans1d_concat}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

struct Trans2DConfig {
  std::size_t L = 1;
  std::size_t h = 4;
  std::size_t d = 16;
  std::size_t N = 50;
  HeadMode head_mode = HeadMode::full_d;
  bool use_AF = true;
  bool use_AI = true;
  bool use_AC = true;
  LinearMode linear_mode = LinearMode::two_d;
  double dropout_p = 0.3;
  bool alpha_per_head = false;
  double ln_eps = 1e-5;
  Architecture architecture = Architecture::trans2d;

  void validate() const {
    if (L < 1) throw ConfigError("L must be at least 1");
    if (h < 1) throw ConfigError("h must be at least 1");
    if (d < 1) throw ConfigError("d must be at least 1");
    if (N < 2) throw ConfigError("N must be at least 2");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
    if (!(ln_eps >= 0.0)) throw ConfigError("ln_eps must be non-negative");
    if (architecture == Architecture::trans2d && !(use_AF || use_AI || use_AC)) {
      throw ConfigError("at least one of use_AF, use_AI, use_AC must be enabled");
    }
  }

  bool is_baseline() const { return architecture != Architecture::trans2d; }
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // dropout stream; required when training with dropout_p > 0
};

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct ParameterCounts {
  std::size_t embedding = 0;
  std::vector<std::size_t> blocks;
  std::size_t attention_projection = 0;  // one Q/K/V matrix stack of one head
  std::size_t head = 0;
  std::size_t total = 0;
};

/// Embedding tables, L attention blocks and the click head.
///
/// Parameters are stored in a fixed order: the C embedding tables, then per
/// block wq, wk, wv, wo, the enabled alphas (alpha_f, alpha_i, alpha_c),
/// ln1 gain/bias, ffn w1, b1, w2, b2, ln2 gain/bias, then head w_p, b_p.
class Trans2DModel {
 public:
  Trans2DModel(Trans2DConfig cfg, data::AttributeSchema schema, std::uint64_t seed)
      : cfg_(std::move(cfg)), schema_(std::move(schema)) {
    cfg_.validate();
    if (schema_.size() == 0) throw ConfigError("schema has no channels");
    for (std::size_t j = 0; j < schema_.size(); ++j) {
      if (schema_[j].vocab_size < 1) throw ConfigError("channel '" + schema_[j].name + "' has no vocabulary");
    }
    if (cfg_.is_baseline()) {
      // Standard transformer: A^F only, unit weight, no alpha parameters.
      cfg_.use_AF = true;
      cfg_.use_AI = false;
      cfg_.use_AC = false;
      cfg_.linear_mode = LinearMode::two_d;
    }
    const std::size_t width = model_width();
    if (cfg_.head_mode == HeadMode::split_d && width % cfg_.h != 0) {
      throw ConfigError("split-d head mode requires h to divide the model width (" + std::to_string(width) + ")");
    }
    init(seed);
  }

  const Trans2DConfig& config() const { return cfg_; }
  const data::AttributeSchema& schema() const { return schema_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  std::size_t channels() const { return schema_.size(); }
  // Channels seen by the attention blocks (1 for the baselines).
  std::size_t block_channels() const { return cfg_.is_baseline() ? 1 : schema_.size(); }
  std::size_t model_width() const {
    return cfg_.architecture == Architecture::trans1d_concat ? cfg_.d * schema_.size() : cfg_.d;
  }
  std::size_t head_dim() const {
    return cfg_.head_mode == HeadMode::full_d ? model_width() : model_width() / cfg_.h;
  }

  ParameterCounts count_parameters() const {
    ParameterCounts c;
    for (std::size_t j = 0; j < channels(); ++j) c.embedding += trainable_size(embeddings_[j]);
    for (const auto& b : blocks_) {
      std::size_t n = 0;
      for (const Tensor* t : b.all()) n += trainable_size(*t);
      c.blocks.push_back(n);
    }
    c.attention_projection = blocks_.front().wq.size() / cfg_.h;
    c.head = trainable_size(wp_) + trainable_size(bp_);
    c.total = c.embedding + c.head;
    for (auto n : c.blocks) c.total += n;
    return c;
  }

  // -------------------------------------------------------------------------
  // Reference path: one sequence, every row through every block.

  /// E[i][j] = table_j[ids[i][j]] as an (N_used, C, d) tensor.
  Tensor embed(std::span<const std::uint32_t> ids, std::size_t rows) const {
    const std::size_t C = channels();
    if (ids.size() != rows * C) throw DimensionError("id array does not match rows x channels");
    std::vector<Tensor> cols;
    cols.reserve(C);
    std::vector<std::size_t> idx(rows);
    for (std::size_t j = 0; j < C; ++j) {
      for (std::size_t i = 0; i < rows; ++i) idx[i] = ids[i * C + j];
      cols.push_back(ad::reshape(ad::gather_rows(embeddings_[j], idx, 0), {rows, 1, cfg_.d}));
    }
    return C == 1 ? cols[0] : ad::concat(cols, 1);
  }

  // Collapses the channel axis for the baselines.
  Tensor block_input(const Tensor& e) const {
    switch (cfg_.architecture) {
      case Architecture::trans2d: return e;
      case Architecture::trans1d_avg: return ad::mean_axis(e, 1, true);
      case Architecture::trans1d_concat: return ad::reshape(e, {e.dim(0), 1, e.dim(1) * e.dim(2)});
    }
    return e;
  }

  struct SequenceTrace {
    std::vector<Tensor> block_outputs;  // (N_used, C', width) after each block
    std::vector<Tensor> probs;          // (h, N_used, C', N_used, C') per block
  };

  /// Runs the blocks over a whole sequence with the item-level causal mask.
  SequenceTrace forward_sequence(const data::EventSequence& seq, const ForwardOptions& opt = {}) const {
    check_sequence(seq);
    Tensor x = block_input(embed(seq.ids, seq.rows));
    const auto mask = causal_mask(seq.rows);
    SequenceTrace trace;
    for (std::size_t b = 0; b < cfg_.L; ++b) {
      Tensor probs;
      x = block_forward(b, x, mask, opt, &probs);
      trace.block_outputs.push_back(x);
      trace.probs.push_back(probs);
    }
    return trace;
  }

  /// One attention block applied to (rows, C', width) activations.
  Tensor apply_block(std::size_t b, const Tensor& x, const ItemMask& mask, const ForwardOptions& opt = {}) const {
    if (b >= cfg_.L) throw std::out_of_range("block index out of range");
    return block_forward(b, x, mask, opt, nullptr);
  }

  /// Click probability of the candidate row, shape (1).
  Tensor predict_sequence(const data::EventSequence& seq, const ForwardOptions& opt = {}) const {
    auto trace = forward_sequence(seq, opt);
    const Tensor& out = trace.block_outputs.back();
    return predict_click(ad::slice(out, 0, seq.candidate_row(), seq.rows));
  }

  /// sigmoid(w_p . mean_j e'[j] + b_p) for each row of an (M, C', width) array.
  Tensor predict_click(const Tensor& candidate_rows) const {
    const std::size_t m = candidate_rows.dim(0);
    auto pooled = ad::mean_axis(candidate_rows, 1);  // (M, width)
    auto logits = ad::contract(pooled, wp_, "md,d->m");
    logits = ad::add(logits, ad::expand(bp_, {m}, {0}));
    return ad::sigmoid(logits);
  }

  // -------------------------------------------------------------------------
  // Snapshot path. Every candidate of a snapshot shares one history; history
  // rows never see the candidate, so their activations are computed once and
  // each candidate row attends to them plus itself. Equivalent to running
  // predict_sequence once per candidate.

  Tensor score_snapshot(const data::EncodedSnapshot& snap, const ForwardOptions& opt = {}) const {
    if (snap.channels != channels()) throw DimensionError("snapshot channel count does not match the model");
    const std::size_t nh = snap.n_history, m = snap.n_candidates;
    if (m == 0) throw DimensionError("snapshot has no candidates");
    Tensor hist;
    if (nh > 0) hist = block_input(embed(snap.history_ids, nh));
    Tensor cand = block_input(embed(snap.candidate_ids, m));
    const auto mask = nh > 0 ? causal_mask(nh) : ItemMask{};
    for (std::size_t b = 0; b < cfg_.L; ++b) {
      const bool last = b + 1 == cfg_.L;
      BlockState hs;
      if (nh > 0) hs = project(b, hist);
      cand = candidate_block(b, nh > 0 ? &hs : nullptr, cand, opt);
      if (!last && nh > 0) hist = finish_block(b, hist, attend(b, hs, mask).output, opt);
    }
    return predict_click(cand);
  }

  /// Attention of the candidate row in block `block`, averaged over heads and
  /// query channels: an (N_used, C') map over target (row, channel).
  Tensor candidate_attention_map(const data::EventSequence& seq, std::size_t block) const {
    if (block >= cfg_.L) throw std::out_of_range("block index out of range");
    ad::NoGradScope no_grad;
    auto trace = forward_sequence(seq);
    const Tensor& p = trace.probs[block];  // (h, n, C', n, C')
    const std::size_t h = p.dim(0), n = p.dim(1), C = p.dim(2);
    const std::size_t i = seq.candidate_row();
    std::vector<double> out(n * C, 0.0);
    const double w = 1.0 / static_cast<double>(h * C);
    for (std::size_t a = 0; a < h; ++a) {
      for (std::size_t j = 0; j < C; ++j) {
        const double* row = p.data().data() + (((a * n + i) * C + j) * n) * C;
        for (std::size_t t = 0; t < n * C; ++t) out[t] += w * row[t];
      }
    }
    return Tensor({n, C}, std::move(out));
  }

  // Direct access for tests and checkpoints.
  const Tensor& embedding(std::size_t j) const { return embeddings_.at(j); }

 private:
  struct BlockParams {
    Tensor wq, wk, wv, wo;
    Tensor alpha_f, alpha_i, alpha_c;
    Tensor ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;

    std::vector<const Tensor*> all() const {
      std::vector<const Tensor*> out{&wq, &wk, &wv, &wo};
      for (const Tensor* a : {&alpha_f, &alpha_i, &alpha_c}) {
        if (a->defined()) out.push_back(a);
      }
      for (const Tensor* t : {&ln1_g, &ln1_b, &w1, &b1, &w2, &b2, &ln2_g, &ln2_b}) out.push_back(t);
      return out;
    }
  };

  struct BlockState {
    Tensor x;        // block input (rows, C', width)
    Tensor q, k, v;  // (rows, C', h, d_h)
  };

  std::size_t trainable_size(const Tensor& t) const {
    for (const auto& p : params_) {
      if (p.value.id() == t.id()) return p.trainable ? t.size() : 0;
    }
    return 0;
  }

  void check_sequence(const data::EventSequence& seq) const {
    if (seq.channels != channels()) throw DimensionError("sequence channel count does not match the model");
    if (seq.rows == 0) throw DimensionError("empty sequence");
    if (seq.rows > cfg_.N) throw DimensionError("sequence longer than N");
  }

  Tensor make_param(const std::string& name, Shape shape, bool trainable = true) {
    Tensor t = Tensor::zeros(std::move(shape), trainable);
    params_.push_back({name, t, trainable});
    return t;
  }

  static void fill_uniform(Tensor& t, double bound, Rng& rng) {
    for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  }

  void init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "init"));
    const std::size_t C = block_channels(), D = model_width(), h = cfg_.h, dh = head_dim(), F = 4 * D;
    const bool two_d = cfg_.linear_mode == LinearMode::two_d;
    for (std::size_t j = 0; j < channels(); ++j) {
      Tensor t = make_param("embedding." + schema_[j].name, {schema_[j].vocab_size, cfg_.d});
      auto v = t.mutable_data();
      for (std::size_t r = 1; r < schema_[j].vocab_size; ++r) {
        for (std::size_t c = 0; c < cfg_.d; ++c) v[r * cfg_.d + c] = rng.normal(0.0, 0.02);
      }
      embeddings_.push_back(t);
    }
    auto stack = [&](Shape inner) {
      if (two_d) inner.insert(inner.begin(), C);
      return inner;
    };
    const bool alphas_trainable = !cfg_.is_baseline();
    for (std::size_t b = 0; b < cfg_.L; ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      BlockParams bp;
      bp.wq = make_param(p + "wq", stack({h, dh, D}));
      bp.wk = make_param(p + "wk", stack({h, dh, D}));
      bp.wv = make_param(p + "wv", stack({h, dh, D}));
      bp.wo = make_param(p + "wo", stack({D, h * dh}));
      for (Tensor* w : {&bp.wq, &bp.wk, &bp.wv}) fill_uniform(*w, 1.0 / std::sqrt(double(D)), rng);
      fill_uniform(bp.wo, 1.0 / std::sqrt(double(h * dh)), rng);
      const Shape alpha_shape{cfg_.alpha_per_head ? h : 1};
      if (alphas_trainable) {
        bp.alpha_f = make_param(p + "alpha_f", alpha_shape, cfg_.use_AF);
        bp.alpha_i = make_param(p + "alpha_i", alpha_shape, cfg_.use_AI);
        bp.alpha_c = make_param(p + "alpha_c", alpha_shape, cfg_.use_AC);
        for (Tensor* a : {&bp.alpha_f, &bp.alpha_i, &bp.alpha_c}) {
          for (auto& x : a->mutable_data()) x = 1.0;
        }
      } else {
        bp.alpha_f = Tensor::filled(alpha_shape, 1.0);
      }
      bp.ln1_g = make_param(p + "ln1_gain", {D});
      bp.ln1_b = make_param(p + "ln1_bias", {D});
      bp.w1 = make_param(p + "ffn_w1", stack({F, D}));
      bp.b1 = make_param(p + "ffn_b1", stack({F}));
      bp.w2 = make_param(p + "ffn_w2", stack({D, F}));
      bp.b2 = make_param(p + "ffn_b2", stack({D}));
      bp.ln2_g = make_param(p + "ln2_gain", {D});
      bp.ln2_b = make_param(p + "ln2_bias", {D});
      for (Tensor* g : {&bp.ln1_g, &bp.ln2_g}) {
        for (auto& x : g->mutable_data()) x = 1.0;
      }
      fill_uniform(bp.w1, 1.0 / std::sqrt(double(D)), rng);
      fill_uniform(bp.b1, 1.0 / std::sqrt(double(D)), rng);
      fill_uniform(bp.w2, 1.0 / std::sqrt(double(F)), rng);
      fill_uniform(bp.b2, 1.0 / std::sqrt(double(F)), rng);
      blocks_.push_back(bp);
    }
    wp_ = make_param("head.w_p", {D});
    bp_ = make_param("head.b_p", {1});
    fill_uniform(wp_, 1.0 / std::sqrt(double(D)), rng);
    fill_uniform(bp_, 1.0 / std::sqrt(double(D)), rng);
  }

  AttentionTerms terms() const { return {cfg_.use_AF, cfg_.use_AI, cfg_.use_AC}; }
  AttentionAlphas alphas(std::size_t b) const {
    const auto& bp = blocks_[b];
    return {bp.alpha_f, bp.alpha_i, bp.alpha_c};
  }

  BlockState project(std::size_t b, const Tensor& x) const {
    const auto& bp = blocks_[b];
    return {x, project_heads(x, bp.wq), project_heads(x, bp.wk), project_heads(x, bp.wv)};
  }

  AttentionOutput attend(std::size_t b, const BlockState& s, const ItemMask& mask) const {
    return attention2d_heads(s.q, s.k, s.v, alphas(b), mask, terms());
  }

  Tensor maybe_dropout(const Tensor& x, const ForwardOptions& opt) const {
    if (!opt.training || cfg_.dropout_p == 0.0) return x;
    if (opt.rng == nullptr) throw std::logic_error("training forward pass needs a dropout stream");
    return ad::dropout(x, cfg_.dropout_p, *opt.rng, true);
  }

  // Output projection, residual + LayerNorm, FFN, residual + LayerNorm.
  Tensor finish_block(std::size_t b, const Tensor& x, const Tensor& heads_out, const ForwardOptions& opt) const {
    const auto& bp = blocks_[b];
    const std::size_t rows = heads_out.dim(0), C = heads_out.dim(1);
    auto concat_heads = ad::reshape(heads_out, {rows, C, heads_out.dim(2) * heads_out.dim(3)});
    auto mha = linear(concat_heads, bp.wo);
    auto x1 = ad::layer_norm(ad::add(x, maybe_dropout(mha, opt)), bp.ln1_g, bp.ln1_b, cfg_.ln_eps);
    auto ffn = linear(ad::relu(linear(x1, bp.w1, &bp.b1)), bp.w2, &bp.b2);
    return ad::layer_norm(ad::add(x1, maybe_dropout(ffn, opt)), bp.ln2_g, bp.ln2_b, cfg_.ln_eps);
  }

  Tensor block_forward(std::size_t b, const Tensor& x, const ItemMask& mask, const ForwardOptions& opt,
                       Tensor* probs) const {
    auto s = project(b, x);
    auto att = attend(b, s, mask);
    if (probs) *probs = att.probs;
    return finish_block(b, x, att.output, opt);
  }

  // Candidate rows (m, C', width) attending to history state `hs` and to
  // their own row.
  Tensor candidate_block(std::size_t b, const BlockState* hs, const Tensor& xc, const ForwardOptions& opt) const {
    const auto& bp = blocks_[b];
    const auto t = terms();
    const auto al = alphas(b);
    auto qc = project_heads(xc, bp.wq);
    auto kc = project_heads(xc, bp.wk);
    auto vc = project_heads(xc, bp.wv);
    const std::size_t dh = qc.dim(3);
    const std::size_t nh = hs ? hs->q.dim(0) : 0;

    CandidateScores sc;
    // self[h,m,c,e] = q_mc . k_me serves both A^F and A^C on the own row.
    if (t.full || t.channel) sc.self = ad::contract(qc, kc, "mchd,mehd->hmce");
    if (t.item) sc.ai_self = ad::contract(qc, kc, "mchd,mchd->hm");
    if (nh > 0) {
      if (t.full) sc.af_hist = ad::contract(qc, hs->k, "mchd,zehd->hmcze");
      if (t.item) sc.ai_hist = ad::contract(qc, hs->k, "mchd,zchd->hmz");
      if (t.channel) sc.gsum = ad::contract(hs->q, hs->k, "zchd,zehd->hce");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out = candidate_attention(sc, al, t, scale, nh > 0 ? hs->v : Tensor{}, vc);
    return finish_block(b, xc, out, opt);
  }

  Trans2DConfig cfg_;
  data::AttributeSchema schema_;
  std::vector<Parameter> params_;
  std::vector<Tensor> embeddings_;
  std::vector<BlockParams> blocks_;
  Tensor wp_, bp_;
};

}  // namespace trans2d::model
