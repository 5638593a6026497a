#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nmt/preprocess.hpp"
#include "nmt/token.hpp"

namespace nmt {

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Word-level vocabulary. Ids 0-3 hold <pad> <bos> <eos> <unk>; corpus
/// tokens follow by descending frequency, ties broken lexicographically.
class Vocabulary {
 public:
  /// Specials only.
  Vocabulary();

  /// Throws InputError when the sentences hold no tokens at all.
  static Vocabulary build(const std::vector<Tokens>& sentences, std::int64_t min_freq = 1);

  std::size_t size() const { return id_to_token_.size(); }
  std::int64_t min_freq() const { return min_freq_; }

  bool contains(std::string_view token) const;
  /// <unk> id for unknown tokens.
  TokenId id(std::string_view token) const;
  /// Throws IndexError when out of range.
  const std::string& token(TokenId id) const;
  std::int64_t frequency(TokenId id) const;

  IdSequence encode(const Tokens& tokens, bool add_bos_eos = false) const;
  /// strip_specials drops <pad>, <bos> and <eos>; <unk> is kept.
  Tokens decode(const IdSequence& ids, bool strip_specials = true) const;

  /// `token<TAB>frequency` lines in id order.
  std::string to_string() const;
  static Vocabulary from_string(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const {
    return id_to_token_ == other.id_to_token_ && frequencies_ == other.frequencies_;
  }

 private:
  void append(std::string token, std::int64_t freq);

  std::vector<std::string> id_to_token_;
  std::vector<std::int64_t> frequencies_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::int64_t min_freq_ = 1;
};

std::vector<Tokens> source_side(const ParallelCorpus& corpus);
std::vector<Tokens> target_side(const ParallelCorpus& corpus);

}  // namespace nmt
