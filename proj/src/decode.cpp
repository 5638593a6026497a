#include "nmt/decode.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "nmt/errors.hpp"

namespace nmt {

namespace {

/// Softmax of the last position's logits for batch item 0, in double.
std::vector<double> last_position_softmax(const Tensor<float>& logits) {
  const Index len = logits.dim(1), v = logits.dim(2);
  const auto row = logits.data().subspan(static_cast<std::size_t>((len - 1) * v), static_cast<std::size_t>(v));
  const double mx = *std::max_element(row.begin(), row.end());
  std::vector<double> p(row.size());
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) z += p[i] = std::exp(static_cast<double>(row[i]) - mx);
  for (auto& x : p) x /= z;
  return p;
}

TokenBatch single_row(const IdSequence& ids) { return TokenBatch{1, static_cast<Index>(ids.size()), ids}; }

IdSequence encode_source(const Model& model, const Vocabulary& src_vocab, const Tokens& source) {
  auto ids = src_vocab.encode(source, true);
  const auto limit = model.config().max_seq_len;
  if (static_cast<Index>(ids.size()) > limit) {
    throw InputError("source of " + std::to_string(source.size()) + " tokens exceeds the model limit of " +
                     std::to_string(limit - 2));
  }
  return ids;
}

}  // namespace

std::string to_string(StopReason r) { return r == StopReason::kEos ? "eos" : "max_len"; }

Index default_max_decode_length(const ModelConfig& cfg, std::size_t source_length) {
  return std::min<Index>(cfg.max_seq_len, 2 * static_cast<Index>(source_length) + 5);
}

TranslationResult greedy_translate(const Model& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                   const Tokens& source, std::optional<Index> max_len) {
  const auto& cfg = model.config();
  if (static_cast<Index>(tgt_vocab.size()) != cfg.tgt_vocab_size) {
    throw ConfigError("target vocabulary size " + std::to_string(tgt_vocab.size()) + " does not match the model's " +
                      std::to_string(cfg.tgt_vocab_size));
  }
  const Index limit = std::min(max_len.value_or(default_max_decode_length(cfg, source.size())), cfg.max_seq_len);
  if (limit < 1) throw UsageError("max decode length must be at least 1");

  NoGradGuard no_grad;
  TranslationResult result;
  result.source = source;
  const auto src = single_row(encode_source(model, src_vocab, source));
  const auto src_mask = make_pad_mask(src);
  const auto memory = model.encode(src, src_mask, {});

  IdSequence prefix{kBosId};
  while (static_cast<Index>(result.ids.size()) < limit) {
    const auto probs = last_position_softmax(model.decode(single_row(prefix), memory, src_mask, {}));
    // max_element returns the first maximum, i.e. the lowest id on ties.
    const auto best = static_cast<TokenId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    result.ids.push_back(best);
    result.probabilities.push_back(probs[static_cast<std::size_t>(best)]);
    if (best == kEosId) {
      result.stop = StopReason::kEos;
      break;
    }
    prefix.push_back(best);
  }
  result.output = tgt_vocab.decode(result.ids, true);
  return result;
}

std::vector<double> next_token_distribution(const Model& model, const IdSequence& source_ids, const IdSequence& prefix) {
  NoGradGuard no_grad;
  return last_position_softmax(model.forward(single_row(source_ids), single_row(prefix), {}));
}

std::vector<Tokens> translate_tokens(const Model& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                     const std::vector<Tokens>& sources, const TranslateOptions& options,
                                     const LogSink& log) {
  std::vector<Tokens> out(sources.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < sources.size(); i = next++) {
      try {
        out[i] = greedy_translate(model, src_vocab, tgt_vocab, sources[i], options.max_len).output;
      } catch (const Error& e) {
        std::lock_guard lock(log_mutex);
        if (log) log("line " + std::to_string(i + 1) + ": " + e.what());
      }
    }
  };
  const auto n_threads = std::max<std::size_t>(1, std::min(options.threads, sources.size()));
  if (n_threads == 1) {
    worker();
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

std::vector<std::string> translate_lines(const Model& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                         const std::vector<std::string>& lines, const TranslateOptions& options,
                                         const LogSink& log) {
  std::vector<Tokens> sources;
  sources.reserve(lines.size());
  for (const auto& l : lines) sources.push_back(preprocess_line(l));
  const auto outputs = translate_tokens(model, src_vocab, tgt_vocab, sources, options, log);
  std::vector<std::string> result;
  result.reserve(outputs.size());
  for (const auto& o : outputs) result.push_back(detokenize(o));
  return result;
}

}  // namespace nmt
