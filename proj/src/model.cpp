#include "nmt/model.hpp"

#include <algorithm>

namespace nmt {

std::string to_string(AttentionScale scale) {
  return scale == AttentionScale::kModelDim ? "model" : "head";
}

AttentionScale attention_scale_from_string(std::string_view text) {
  if (text == "model") return AttentionScale::kModelDim;
  if (text == "head") return AttentionScale::kHeadDim;
  throw ConfigError("attention_scale must be 'model' or 'head', got '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (d_model < 1) fail("d_model must be positive");
  if (n_heads < 1) fail("n_heads must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (n_encoder_layers < 0 || n_decoder_layers < 0) fail("layer counts must be non-negative");
  if (max_seq_len < 1) fail("max_seq_len must be positive");
  if (expansion < 1) fail("expansion must be at least 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
  if (src_vocab_size < 1 || tgt_vocab_size < 1) fail("vocabulary sizes must be set");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

Index parameter_count(const ModelConfig& cfg) {
  const Index d = cfg.d_model, f = cfg.ffn_dim();
  const Index attention = 4 * d * d;
  const Index ffn = d * f + f + f * d + d;
  const Index norm = 2 * d;
  const Index embeddings = (cfg.src_vocab_size + cfg.tgt_vocab_size + 2 * cfg.max_seq_len) * d;
  const Index encoder = cfg.n_encoder_layers * (attention + ffn + 2 * norm);
  const Index decoder = cfg.n_decoder_layers * (2 * attention + ffn + 3 * norm);
  const Index output = d * cfg.tgt_vocab_size + cfg.tgt_vocab_size;
  return embeddings + encoder + decoder + output;
}

TokenBatch TokenBatch::from_rows(const std::vector<IdSequence>& rows, TokenId pad) {
  TokenBatch out;
  out.batch = static_cast<Index>(rows.size());
  for (const auto& r : rows) out.length = std::max(out.length, static_cast<Index>(r.size()));
  out.ids.assign(static_cast<std::size_t>(out.batch * out.length), pad);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    std::copy(rows[b].begin(), rows[b].end(), out.ids.begin() + static_cast<std::ptrdiff_t>(b * out.length));
  }
  return out;
}

AttentionMask make_pad_mask(const TokenBatch& ids, TokenId pad_id) {
  std::vector<std::uint8_t> allowed(ids.ids.size());
  std::transform(ids.ids.begin(), ids.ids.end(), allowed.begin(), [pad_id](TokenId t) { return t != pad_id; });
  return AttentionMask({ids.batch, 1, 1, ids.length}, std::move(allowed));
}

AttentionMask make_lookahead_mask(Index len) {
  if (len < 1) throw UsageError("look-ahead mask needs len >= 1");
  std::vector<std::uint8_t> allowed(static_cast<std::size_t>(len * len));
  for (Index i = 0; i < len; ++i)
    for (Index j = 0; j <= i; ++j) allowed[static_cast<std::size_t>(i * len + j)] = 1;
  return AttentionMask({1, 1, len, len}, std::move(allowed));
}

AttentionMask make_decoder_self_mask(const TokenBatch& tgt, TokenId pad_id) {
  return combine_masks(make_lookahead_mask(tgt.length), make_pad_mask(tgt, pad_id));
}

}  // namespace nmt
