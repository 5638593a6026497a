#pragma once

// Post-norm Transformer encoder-decoder with learned positional embeddings.
//
// Every sublayer is a free function over explicit weight structs so the
// pieces can be exercised on their own; Transformer<Scalar> owns the weights
// and wires the stacks together.

#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nmt/mask.hpp"
#include "nmt/ops.hpp"
#include "nmt/random.hpp"
#include "nmt/tensor.hpp"
#include "nmt/token.hpp"

namespace nmt {

/// Which key width the attention scores are divided by (its square root).
enum class AttentionScale {
  kModelDim,  // sqrt(d_model)
  kHeadDim,   // sqrt(d_model / n_heads)
};

std::string to_string(AttentionScale scale);
AttentionScale attention_scale_from_string(std::string_view text);

struct ModelConfig {
  Index d_model = 512;
  Index n_heads = 8;
  Index n_encoder_layers = 3;
  Index n_decoder_layers = 3;
  Index max_seq_len = 100;
  Index expansion = 4;
  double dropout_p = 0.1;
  Index src_vocab_size = 0;
  Index tgt_vocab_size = 0;
  AttentionScale attention_scale = AttentionScale::kModelDim;
  double layer_norm_eps = 1e-5;

  Index head_dim() const { return d_model / n_heads; }
  Index ffn_dim() const { return expansion * d_model; }
  double score_scale() const {
    const auto width = attention_scale == AttentionScale::kModelDim ? d_model : head_dim();
    return 1.0 / std::sqrt(static_cast<double>(width));
  }

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Parameter count implied by a configuration.
Index parameter_count(const ModelConfig& cfg);

/// Row-major [batch, length] block of token ids.
struct TokenBatch {
  Index batch = 0;
  Index length = 0;
  IdSequence ids;

  TokenId at(Index b, Index t) const { return ids[static_cast<std::size_t>(b * length + t)]; }
  std::span<const TokenId> row(Index b) const {
    return std::span<const TokenId>(ids).subspan(static_cast<std::size_t>(b * length), static_cast<std::size_t>(length));
  }

  /// Right-pads each row to the longest one.
  static TokenBatch from_rows(const std::vector<IdSequence>& rows, TokenId pad = kPadId);
};

/// [batch, 1, 1, len]; false exactly at pad positions.
AttentionMask make_pad_mask(const TokenBatch& ids, TokenId pad_id = kPadId);
/// [1, 1, len, len]; entry (i, j) true iff j <= i.
AttentionMask make_lookahead_mask(Index len);
/// Look-ahead AND target pad mask, [batch, 1, len, len].
AttentionMask make_decoder_self_mask(const TokenBatch& tgt, TokenId pad_id = kPadId);

struct ForwardContext {
  bool training = false;
  RandomSource* rng = nullptr;  // required when training with dropout > 0
};

template <typename Scalar>
struct AttentionResult {
  Tensor<Scalar> output;   // [..., q, d_k]
  Tensor<Scalar> weights;  // [..., q, k], rows sum to 1
};

template <typename Scalar>
struct AttentionWeights {
  Tensor<Scalar> w_q, w_k, w_v, w_o;  // each [d_model, d_model]
};

template <typename Scalar>
struct FeedForwardWeights {
  Tensor<Scalar> w1, b1;  // [d_model, ffn], [ffn]
  Tensor<Scalar> w2, b2;  // [ffn, d_model], [d_model]
};

template <typename Scalar>
struct NormWeights {
  Tensor<Scalar> gain, bias;
};

template <typename Scalar>
struct EncoderLayerWeights {
  AttentionWeights<Scalar> self_attn;
  NormWeights<Scalar> norm1;
  FeedForwardWeights<Scalar> ffn;
  NormWeights<Scalar> norm2;
};

template <typename Scalar>
struct DecoderLayerWeights {
  AttentionWeights<Scalar> self_attn;
  NormWeights<Scalar> norm1;
  AttentionWeights<Scalar> cross_attn;
  NormWeights<Scalar> norm2;
  FeedForwardWeights<Scalar> ffn;
  NormWeights<Scalar> norm3;
};

template <typename Scalar>
Tensor<Scalar> scale_scores(const Tensor<Scalar>& scores, Scalar factor) {
  return factor == Scalar(1) ? scores : scale(scores, factor);
}

/// softmax(scale * Q K^T with masked entries at -inf) V over rank-4
/// [batch, heads, len, d_k] inputs.
template <typename Scalar>
AttentionResult<Scalar> scaled_dot_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                             const AttentionMask& mask, Scalar scale) {
  if (q.rank() != 4 || k.rank() != 4 || v.rank() != 4) {
    throw DimensionError("scaled_dot_attention: expected rank-4 Q/K/V, got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  if (k.dim(-2) != v.dim(-2)) {
    throw DimensionError("scaled_dot_attention: K " + shape_str(k.shape()) + " and V " + shape_str(v.shape()) +
                         " disagree on length");
  }
  auto scores = scale_scores(matmul(q, transpose_last2(k)), scale);
  auto weights = softmax_lastdim(masked_fill(scores, mask));
  return {matmul(weights, v), weights};
}

/// Same with the conventional 1/sqrt(d_k) factor taken from Q's last axis.
template <typename Scalar>
AttentionResult<Scalar> scaled_dot_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                             const AttentionMask& mask) {
  return scaled_dot_attention(q, k, v, mask, Scalar(1.0 / std::sqrt(static_cast<double>(q.dim(-1)))));
}

namespace detail {

inline void check_length(Index len, const ModelConfig& cfg) {
  if (len > cfg.max_seq_len) {
    throw InputError("sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  }
}

// [batch, len, d_model] -> [batch, heads, len, d_k]
template <typename Scalar>
Tensor<Scalar> split_heads(const Tensor<Scalar>& x, Index heads) {
  const Index b = x.dim(0), len = x.dim(1), d = x.dim(2);
  return swap_axes_1_2(reshape(x, {b, len, heads, d / heads}));
}

// [batch, heads, len, d_k] -> [batch, len, d_model]
template <typename Scalar>
Tensor<Scalar> merge_heads(const Tensor<Scalar>& x) {
  const Index b = x.dim(0), heads = x.dim(1), len = x.dim(2), dk = x.dim(3);
  return reshape(swap_axes_1_2(x), {b, len, heads * dk});
}

}  // namespace detail

/// Projects to Q/K/V, attends per head, concatenates heads and applies W_O.
/// When `weights_out` is given it receives the per-head attention weights.
template <typename Scalar>
Tensor<Scalar> multi_head_attention(const AttentionWeights<Scalar>& w, const Tensor<Scalar>& x_q,
                                    const Tensor<Scalar>& x_kv, const AttentionMask& mask, const ModelConfig& cfg,
                                    Tensor<Scalar>* weights_out = nullptr) {
  if (x_q.rank() != 3 || x_kv.rank() != 3 || x_q.dim(2) != cfg.d_model || x_kv.dim(2) != cfg.d_model ||
      x_q.dim(0) != x_kv.dim(0)) {
    throw DimensionError("multi_head_attention: inputs " + shape_str(x_q.shape()) + " and " +
                         shape_str(x_kv.shape()) + " do not match d_model " + std::to_string(cfg.d_model));
  }
  detail::check_length(x_q.dim(1), cfg);
  detail::check_length(x_kv.dim(1), cfg);
  auto q = detail::split_heads(matmul(x_q, w.w_q), cfg.n_heads);
  auto k = detail::split_heads(matmul(x_kv, w.w_k), cfg.n_heads);
  auto v = detail::split_heads(matmul(x_kv, w.w_v), cfg.n_heads);
  auto attn = scaled_dot_attention(q, k, v, mask, static_cast<Scalar>(cfg.score_scale()));
  if (weights_out) *weights_out = attn.weights;
  return matmul(detail::merge_heads(attn.output), w.w_o);
}

/// W2 relu(x W1 + b1) + b2.
template <typename Scalar>
Tensor<Scalar> feed_forward(const FeedForwardWeights<Scalar>& w, const Tensor<Scalar>& x) {
  return add_bias(matmul(relu(add_bias(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

namespace detail {

// layer_norm(x + dropout(sublayer_out))
template <typename Scalar>
Tensor<Scalar> residual_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& sublayer_out, const NormWeights<Scalar>& norm,
                             const ModelConfig& cfg, const ForwardContext& ctx) {
  auto dropped = dropout(sublayer_out, cfg.dropout_p, ctx.training, ctx.rng);
  return layer_norm(add(x, dropped), norm.gain, norm.bias, static_cast<Scalar>(cfg.layer_norm_eps));
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> encoder_layer(const EncoderLayerWeights<Scalar>& w, const Tensor<Scalar>& x,
                             const AttentionMask& pad_mask, const ModelConfig& cfg, const ForwardContext& ctx) {
  auto h = detail::residual_norm(x, multi_head_attention(w.self_attn, x, x, pad_mask, cfg), w.norm1, cfg, ctx);
  return detail::residual_norm(h, feed_forward(w.ffn, h), w.norm2, cfg, ctx);
}

template <typename Scalar>
Tensor<Scalar> decoder_layer(const DecoderLayerWeights<Scalar>& w, const Tensor<Scalar>& y,
                             const Tensor<Scalar>& enc_out, const AttentionMask& self_mask,
                             const AttentionMask& cross_mask, const ModelConfig& cfg, const ForwardContext& ctx) {
  auto h = detail::residual_norm(y, multi_head_attention(w.self_attn, y, y, self_mask, cfg), w.norm1, cfg, ctx);
  h = detail::residual_norm(h, multi_head_attention(w.cross_attn, h, enc_out, cross_mask, cfg), w.norm2, cfg, ctx);
  return detail::residual_norm(h, feed_forward(w.ffn, h), w.norm3, cfg, ctx);
}

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Tensor<Scalar> tensor;
};

template <typename Scalar>
class Transformer {
 public:
  /// Parameters allocated with layer-norm gains at 1 and everything else 0;
  /// the shape a checkpoint is loaded into.
  explicit Transformer(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    allocate();
  }

  /// Seeded initialization: linear weights U(-1/sqrt(d_in), 1/sqrt(d_in)),
  /// biases 0, embedding tables N(0, 1/sqrt(d_model)), layer norms (1, 0).
  Transformer(ModelConfig cfg, RandomSource& rng) : Transformer(std::move(cfg)) { initialize(rng); }

  Transformer(const Transformer&) = delete;
  Transformer& operator=(const Transformer&) = delete;
  Transformer(Transformer&&) noexcept = default;
  Transformer& operator=(Transformer&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  void set_dropout(double p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout must lie in [0, 1), got " + std::to_string(p));
    cfg_.dropout_p = p;
  }

  std::vector<NamedParameter<Scalar>>& parameters() { return params_; }
  const std::vector<NamedParameter<Scalar>>& parameters() const { return params_; }
  const Tensor<Scalar>& parameter(std::string_view name) const {
    for (const auto& p : params_) {
      if (p.name == name) return p.tensor;
    }
    throw IndexError("no parameter named '" + std::string(name) + "'");
  }
  Index parameter_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }
  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::vector<EncoderLayerWeights<Scalar>>& encoder_layers() { return encoder_; }
  std::vector<DecoderLayerWeights<Scalar>>& decoder_layers() { return decoder_; }
  const std::vector<EncoderLayerWeights<Scalar>>& encoder_layers() const { return encoder_; }
  const std::vector<DecoderLayerWeights<Scalar>>& decoder_layers() const { return decoder_; }

  /// Token plus positional embeddings, then dropout: [batch, len, d_model].
  Tensor<Scalar> embed_source(const TokenBatch& ids, const ForwardContext& ctx) const {
    return embed(src_embed_, src_pos_, ids, ctx);
  }
  Tensor<Scalar> embed_target(const TokenBatch& ids, const ForwardContext& ctx) const {
    return embed(tgt_embed_, tgt_pos_, ids, ctx);
  }

  /// Encoder stack output [batch, src_len, d_model].
  Tensor<Scalar> encode(const TokenBatch& src, const AttentionMask& src_mask, const ForwardContext& ctx) const {
    auto x = embed_source(src, ctx);
    for (const auto& layer : encoder_) x = encoder_layer(layer, x, src_mask, cfg_, ctx);
    return x;
  }

  /// Decoder stack plus output projection: logits [batch, tgt_len, tgt_vocab].
  Tensor<Scalar> decode(const TokenBatch& tgt_in, const Tensor<Scalar>& memory, const AttentionMask& src_mask,
                        const ForwardContext& ctx) const {
    if (memory.rank() != 3 || memory.dim(0) != tgt_in.batch) {
      throw DimensionError("decode: encoder output " + shape_str(memory.shape()) + " does not match batch " +
                           std::to_string(tgt_in.batch));
    }
    const auto self_mask = make_decoder_self_mask(tgt_in);
    auto y = embed_target(tgt_in, ctx);
    for (const auto& layer : decoder_) y = decoder_layer(layer, y, memory, self_mask, src_mask, cfg_, ctx);
    return add_bias(matmul(y, out_w_), out_b_);
  }

  /// Teacher-forced pass. `tgt_in` is the bos-prefixed, right-shifted target.
  Tensor<Scalar> forward(const TokenBatch& src, const TokenBatch& tgt_in, const ForwardContext& ctx = {}) const {
    if (src.batch != tgt_in.batch) {
      throw DimensionError("forward: source batch " + std::to_string(src.batch) + " vs target batch " +
                           std::to_string(tgt_in.batch));
    }
    const auto src_mask = make_pad_mask(src);
    return decode(tgt_in, encode(src, src_mask, ctx), src_mask, ctx);
  }

  /// Copies of every parameter buffer, in registration order.
  std::vector<std::vector<Scalar>> snapshot() const {
    std::vector<std::vector<Scalar>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
  }

  void restore(const std::vector<std::vector<Scalar>>& values) {
    if (values.size() != params_.size()) throw UsageError("restore: snapshot has wrong parameter count");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto dst = params_[i].tensor.mutable_data();
      if (values[i].size() != dst.size()) throw UsageError("restore: size mismatch for " + params_[i].name);
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

 private:
  Tensor<Scalar> embed(const Tensor<Scalar>& table, const Tensor<Scalar>& positions, const TokenBatch& ids,
                       const ForwardContext& ctx) const {
    if (ids.length < 1) throw InputError("empty sequence batch");
    detail::check_length(ids.length, cfg_);
    IdSequence pos(ids.ids.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<TokenId>(static_cast<Index>(i) % ids.length);
    auto tokens = embedding_gather(table, std::span<const TokenId>(ids.ids));
    auto places = embedding_gather(positions, std::span<const TokenId>(pos));
    auto x = reshape(add(tokens, places), {ids.batch, ids.length, cfg_.d_model});
    return dropout(x, cfg_.dropout_p, ctx.training, ctx.rng);
  }

  Tensor<Scalar> add_param(std::string name, Shape shape, Scalar fill = Scalar(0)) {
    auto t = Tensor<Scalar>::full(std::move(shape), fill, true);
    params_.push_back({std::move(name), t});
    return t;
  }

  AttentionWeights<Scalar> add_attention(const std::string& prefix) {
    const Index d = cfg_.d_model;
    return {add_param(prefix + ".w_q", {d, d}), add_param(prefix + ".w_k", {d, d}), add_param(prefix + ".w_v", {d, d}),
            add_param(prefix + ".w_o", {d, d})};
  }

  FeedForwardWeights<Scalar> add_ffn(const std::string& prefix) {
    const Index d = cfg_.d_model, f = cfg_.ffn_dim();
    return {add_param(prefix + ".w1", {d, f}), add_param(prefix + ".b1", {f}), add_param(prefix + ".w2", {f, d}),
            add_param(prefix + ".b2", {d})};
  }

  NormWeights<Scalar> add_norm(const std::string& prefix) {
    return {add_param(prefix + ".gain", {cfg_.d_model}, Scalar(1)), add_param(prefix + ".bias", {cfg_.d_model})};
  }

  void allocate() {
    const Index d = cfg_.d_model;
    src_embed_ = add_param("src_embed", {cfg_.src_vocab_size, d});
    tgt_embed_ = add_param("tgt_embed", {cfg_.tgt_vocab_size, d});
    src_pos_ = add_param("src_pos", {cfg_.max_seq_len, d});
    tgt_pos_ = add_param("tgt_pos", {cfg_.max_seq_len, d});
    for (Index i = 0; i < cfg_.n_encoder_layers; ++i) {
      const std::string p = "encoder." + std::to_string(i);
      EncoderLayerWeights<Scalar> layer;
      layer.self_attn = add_attention(p + ".self_attn");
      layer.norm1 = add_norm(p + ".norm1");
      layer.ffn = add_ffn(p + ".ffn");
      layer.norm2 = add_norm(p + ".norm2");
      encoder_.push_back(std::move(layer));
    }
    for (Index i = 0; i < cfg_.n_decoder_layers; ++i) {
      const std::string p = "decoder." + std::to_string(i);
      DecoderLayerWeights<Scalar> layer;
      layer.self_attn = add_attention(p + ".self_attn");
      layer.norm1 = add_norm(p + ".norm1");
      layer.cross_attn = add_attention(p + ".cross_attn");
      layer.norm2 = add_norm(p + ".norm2");
      layer.ffn = add_ffn(p + ".ffn");
      layer.norm3 = add_norm(p + ".norm3");
      decoder_.push_back(std::move(layer));
    }
    out_w_ = add_param("output.weight", {d, cfg_.tgt_vocab_size});
    out_b_ = add_param("output.bias", {cfg_.tgt_vocab_size});
  }

  void initialize(RandomSource& rng) {
    const double embed_std = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
    for (auto& p : params_) {
      auto values = p.tensor.mutable_data();
      const bool is_table = p.name.ends_with("_embed") || p.name.ends_with("_pos");
      const bool is_matrix = p.tensor.rank() == 2;
      if (is_table) {
        for (auto& v : values) v = static_cast<Scalar>(rng.normal(0.0, embed_std));
      } else if (is_matrix) {
        const double bound = std::sqrt(1.0 / static_cast<double>(p.tensor.dim(0)));
        for (auto& v : values) v = static_cast<Scalar>(rng.uniform(-bound, bound));
      }
      // vectors keep their allocation fill: gains 1, biases 0
    }
  }

  ModelConfig cfg_;
  std::vector<NamedParameter<Scalar>> params_;
  Tensor<Scalar> src_embed_, tgt_embed_, src_pos_, tgt_pos_;
  std::vector<EncoderLayerWeights<Scalar>> encoder_;
  std::vector<DecoderLayerWeights<Scalar>> decoder_;
  Tensor<Scalar> out_w_, out_b_;
};

}  // namespace nmt
