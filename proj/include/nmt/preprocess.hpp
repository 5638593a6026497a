#pragma once

// Parallel-corpus cleaning pipeline:
// normalize -> tokenize -> clean -> dedup -> split, plus corpus mixing.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nmt/token.hpp"

namespace nmt {

enum class Origin { kInDomain, kGeneralDomain };

struct SentencePair {
  Tokens source;
  Tokens target;
  Origin origin = Origin::kInDomain;

  bool operator==(const SentencePair&) const = default;
};

/// Pair counts after each pipeline stage.
struct CorpusStats {
  std::int64_t raw = 0;
  std::int64_t preprocessed = 0;
  std::int64_t cleaned = 0;
  std::int64_t unique = 0;

  bool operator==(const CorpusStats&) const = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  CorpusStats stats;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }

  /// Wraps already-processed pairs; every stage count equals their number.
  static ParallelCorpus from_pairs(std::vector<SentencePair> pairs);
};

/// Straight quotes, ASCII dashes and ellipsis, single spaces, trimmed.
std::string normalize_punctuation(std::string_view line);

/// Whitespace split, then . , ! ? ; : " ( ) [ ] peeled off word edges.
Tokens tokenize(std::string_view line);

/// Inverse of tokenize for display: reattaches detached punctuation.
std::string detokenize(const Tokens& tokens);

/// normalize_punctuation followed by tokenize.
Tokens preprocess_line(std::string_view line);

/// Builds a corpus from raw aligned lines (stats.raw / preprocessed set).
/// Throws InputError when the two sides differ in line count.
ParallelCorpus preprocess_lines(const std::vector<std::string>& source_lines,
                                const std::vector<std::string>& target_lines, Origin origin = Origin::kInDomain);

struct CleanOptions {
  std::size_t min_len = 1;
  std::size_t max_len = 80;
  double max_ratio = 9.0;
};

/// True when the pair survives `clean` under `options`.
bool passes_clean(const SentencePair& pair, const CleanOptions& options);

/// Drops empty, too short/long, and badly length-mismatched pairs.
ParallelCorpus clean(const ParallelCorpus& corpus, const CleanOptions& options = {});

/// Keeps the first occurrence of each (source, target) pair.
ParallelCorpus dedup(const ParallelCorpus& corpus);

struct SplitSpec {
  std::size_t valid_size = 1000;
  std::size_t test_size = 1000;
  std::uint64_t seed = 1;
};

struct CorpusSplits {
  ParallelCorpus train;
  ParallelCorpus valid;
  ParallelCorpus test;
};

/// Seeded shuffle, then the last test_size pairs go to test and the
/// valid_size before them to valid. Requires valid + test < |corpus|.
CorpusSplits split(const ParallelCorpus& corpus, const SplitSpec& spec);

/// Concatenation with origin tags kept; shuffled when a seed is given.
ParallelCorpus mix(const ParallelCorpus& in_domain, const ParallelCorpus& general_domain,
                   std::optional<std::uint64_t> shuffle_seed = std::nullopt);

// ---- files ----

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

/// Reads `<prefix>.src` / `<prefix>.tgt` style pairs of already tokenized
/// text (tokens separated by single spaces).
ParallelCorpus read_tokenized_corpus(const std::filesystem::path& source_path, const std::filesystem::path& target_path,
                                     Origin origin = Origin::kInDomain);
void write_tokenized_corpus(const ParallelCorpus& corpus, const std::filesystem::path& source_path,
                            const std::filesystem::path& target_path);

/// Line-oriented `key<TAB>value` stats file.
void write_stats(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::int64_t>>& rows);
std::vector<std::pair<std::string, std::int64_t>> read_stats(const std::filesystem::path& path);

}  // namespace nmt
