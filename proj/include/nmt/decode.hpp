#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nmt/training.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

enum class StopReason { kEos, kMaxLen };
std::string to_string(StopReason r);

struct TranslationResult {
  Tokens source;
  /// Specials stripped.
  Tokens output;
  /// Generated ids after <bos>, including a final <eos> when one was produced.
  IdSequence ids;
  /// Softmax probability of each chosen id.
  std::vector<double> probabilities;
  StopReason stop = StopReason::kMaxLen;
};

/// min(max_seq_len, 2 * source_length + 5).
Index default_max_decode_length(const ModelConfig& cfg, std::size_t source_length);

/// Greedy argmax decoding (lowest id wins ties), rerunning the full decoder
/// each step. Throws InputError when the encoded source exceeds max_seq_len.
TranslationResult greedy_translate(const Model& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                   const Tokens& source, std::optional<Index> max_len = std::nullopt);

/// Next-token probabilities after feeding `prefix` (starting with <bos>).
std::vector<double> next_token_distribution(const Model& model, const IdSequence& source_ids, const IdSequence& prefix);

struct TranslateOptions {
  std::optional<Index> max_len;
  std::size_t threads = 1;
};

/// Raw lines in, detokenized lines out, same order. A line that fails is
/// logged and produces an empty output line.
std::vector<std::string> translate_lines(const Model& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                         const std::vector<std::string>& lines, const TranslateOptions& options = {},
                                         const LogSink& log = log_to_stderr);

/// Tokenized sources in, tokenized outputs out.
std::vector<Tokens> translate_tokens(const Model& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                     const std::vector<Tokens>& sources, const TranslateOptions& options = {},
                                     const LogSink& log = log_to_stderr);

}  // namespace nmt
