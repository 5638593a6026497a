#include "nmt/preprocess.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "nmt/errors.hpp"
#include "nmt/random.hpp"

namespace nmt {

namespace {

struct Replacement {
  std::string_view from;
  std::string_view to;
};

// UTF-8 sequences rewritten by normalize_punctuation.
constexpr std::array<Replacement, 18> kPunctuationTable{{
    {"\xE2\x80\x9C", "\""},   // U+201C left double quote
    {"\xE2\x80\x9D", "\""},   // U+201D right double quote
    {"\xE2\x80\x9E", "\""},   // U+201E low double quote
    {"\xE2\x80\x9F", "\""},   // U+201F reversed double quote
    {"\xC2\xAB", "\""},       // U+00AB guillemet
    {"\xC2\xBB", "\""},       // U+00BB guillemet
    {"\xE2\x80\x98", "'"},    // U+2018 left single quote
    {"\xE2\x80\x99", "'"},    // U+2019 right single quote
    {"\xE2\x80\x9A", "'"},    // U+201A low single quote
    {"\xE2\x80\x9B", "'"},    // U+201B reversed single quote
    {"\xE2\x80\x93", "-"},    // U+2013 en dash
    {"\xE2\x80\x94", "-"},    // U+2014 em dash
    {"\xE2\x80\x95", "-"},    // U+2015 horizontal bar
    {"\xE2\x80\xA6", "..."},  // U+2026 ellipsis
    {"\xC2\xA0", " "},        // U+00A0 no-break space
    {"\xE2\x80\xAF", " "},    // U+202F narrow no-break space
    {"\xE2\x80\x89", " "},    // U+2009 thin space
    {"\xE2\x80\x8B", ""},     // U+200B zero-width space
}};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

bool is_split_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '"': case '(': case ')': case '[': case ']':
      return true;
    default:
      return false;
  }
}

std::string pair_key(const SentencePair& p) {
  std::string key;
  for (const auto& t : p.source) (key += t) += '\x1f';
  key += '\x1e';
  for (const auto& t : p.target) (key += t) += '\x1f';
  return key;
}

Tokens split_whitespace(std::string_view line) {
  Tokens out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

ParallelCorpus ParallelCorpus::from_pairs(std::vector<SentencePair> pairs) {
  ParallelCorpus c;
  c.pairs = std::move(pairs);
  const auto n = static_cast<std::int64_t>(c.pairs.size());
  c.stats = {n, n, n, n};
  return c;
}

std::string normalize_punctuation(std::string_view line) {
  std::string replaced;
  replaced.reserve(line.size());
  for (std::size_t i = 0; i < line.size();) {
    bool hit = false;
    if (static_cast<unsigned char>(line[i]) >= 0x80) {
      for (const auto& r : kPunctuationTable) {
        if (line.substr(i, r.from.size()) == r.from) {
          replaced += r.to;
          i += r.from.size();
          hit = true;
          break;
        }
      }
    }
    if (!hit) replaced += line[i++];
  }
  std::string out;
  out.reserve(replaced.size());
  bool pending_space = false;
  for (char c : replaced) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

Tokens tokenize(std::string_view line) {
  Tokens out;
  for (const auto& word : split_whitespace(line)) {
    std::size_t begin = 0, end = word.size();
    while (begin < end && is_split_punct(word[begin])) out.emplace_back(1, word[begin++]);
    Tokens trailing;
    while (end > begin && is_split_punct(word[end - 1])) trailing.emplace_back(1, word[--end]);
    if (end > begin) out.push_back(word.substr(begin, end - begin));
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
  }
  return out;
}

std::string detokenize(const Tokens& tokens) {
  std::string out;
  bool glue_next = false;  // previous token was an opening bracket/quote
  bool quote_open = false;
  for (const auto& tok : tokens) {
    bool attach_left = false;
    bool opens = false;
    if (tok.size() == 1) {
      switch (tok[0]) {
        case '.': case ',': case '!': case '?': case ';': case ':': case ')': case ']':
          attach_left = true;
          break;
        case '(': case '[':
          opens = true;
          break;
        case '"':
          if (quote_open) {
            attach_left = true;
          } else {
            opens = true;
          }
          quote_open = !quote_open;
          break;
        default:
          break;
      }
    }
    if (!out.empty() && !attach_left && !glue_next) out += ' ';
    out += tok;
    glue_next = opens;
  }
  return out;
}

Tokens preprocess_line(std::string_view line) { return tokenize(normalize_punctuation(line)); }

ParallelCorpus preprocess_lines(const std::vector<std::string>& source_lines,
                                const std::vector<std::string>& target_lines, Origin origin) {
  if (source_lines.size() != target_lines.size()) {
    throw InputError("misaligned corpus: " + std::to_string(source_lines.size()) + " source lines vs " +
                     std::to_string(target_lines.size()) + " target lines");
  }
  ParallelCorpus c;
  c.pairs.reserve(source_lines.size());
  for (std::size_t i = 0; i < source_lines.size(); ++i) {
    c.pairs.push_back({preprocess_line(source_lines[i]), preprocess_line(target_lines[i]), origin});
  }
  const auto n = static_cast<std::int64_t>(c.pairs.size());
  c.stats = {n, n, n, n};
  return c;
}

bool passes_clean(const SentencePair& pair, const CleanOptions& options) {
  const std::size_t s = pair.source.size(), t = pair.target.size();
  if (s == 0 || t == 0) return false;
  if (s < options.min_len || t < options.min_len) return false;
  if (s > options.max_len || t > options.max_len) return false;
  const double ratio = static_cast<double>(std::max(s, t)) / static_cast<double>(std::min(s, t));
  return ratio <= options.max_ratio;
}

ParallelCorpus clean(const ParallelCorpus& corpus, const CleanOptions& options) {
  ParallelCorpus out;
  out.stats = corpus.stats;
  std::copy_if(corpus.pairs.begin(), corpus.pairs.end(), std::back_inserter(out.pairs),
               [&](const SentencePair& p) { return passes_clean(p, options); });
  out.stats.cleaned = static_cast<std::int64_t>(out.pairs.size());
  out.stats.unique = std::min(out.stats.unique, out.stats.cleaned);
  return out;
}

ParallelCorpus dedup(const ParallelCorpus& corpus) {
  ParallelCorpus out;
  out.stats = corpus.stats;
  std::unordered_set<std::string> seen;
  for (const auto& p : corpus.pairs) {
    if (seen.insert(pair_key(p)).second) out.pairs.push_back(p);
  }
  out.stats.unique = static_cast<std::int64_t>(out.pairs.size());
  return out;
}

CorpusSplits split(const ParallelCorpus& corpus, const SplitSpec& spec) {
  if (spec.valid_size + spec.test_size >= corpus.size()) {
    throw ConfigError("split sizes valid=" + std::to_string(spec.valid_size) + " test=" +
                      std::to_string(spec.test_size) + " leave no training data out of " +
                      std::to_string(corpus.size()) + " pairs");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomSource rng(spec.seed);
  rng.shuffle(order);

  const std::size_t n_train = corpus.size() - spec.valid_size - spec.test_size;
  std::vector<SentencePair> train, valid, test;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& p = corpus.pairs[order[i]];
    if (i < n_train) {
      train.push_back(p);
    } else if (i < n_train + spec.valid_size) {
      valid.push_back(p);
    } else {
      test.push_back(p);
    }
  }
  return {ParallelCorpus::from_pairs(std::move(train)), ParallelCorpus::from_pairs(std::move(valid)),
          ParallelCorpus::from_pairs(std::move(test))};
}

ParallelCorpus mix(const ParallelCorpus& in_domain, const ParallelCorpus& general_domain,
                   std::optional<std::uint64_t> shuffle_seed) {
  ParallelCorpus out;
  out.pairs.reserve(in_domain.size() + general_domain.size());
  out.pairs = in_domain.pairs;
  out.pairs.insert(out.pairs.end(), general_domain.pairs.begin(), general_domain.pairs.end());
  out.stats = {in_domain.stats.raw + general_domain.stats.raw,
               in_domain.stats.preprocessed + general_domain.stats.preprocessed,
               in_domain.stats.cleaned + general_domain.stats.cleaned,
               in_domain.stats.unique + general_domain.stats.unique};
  if (shuffle_seed) {
    RandomSource rng(*shuffle_seed);
    rng.shuffle(out.pairs);
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw InputError("write failed for " + path.string());
}

ParallelCorpus read_tokenized_corpus(const std::filesystem::path& source_path, const std::filesystem::path& target_path,
                                     Origin origin) {
  const auto src = read_lines(source_path);
  const auto tgt = read_lines(target_path);
  if (src.size() != tgt.size()) {
    throw InputError("misaligned corpus: " + source_path.string() + " has " + std::to_string(src.size()) +
                     " lines, " + target_path.string() + " has " + std::to_string(tgt.size()));
  }
  std::vector<SentencePair> pairs;
  pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) pairs.push_back({split_whitespace(src[i]), split_whitespace(tgt[i]), origin});
  return ParallelCorpus::from_pairs(std::move(pairs));
}

void write_tokenized_corpus(const ParallelCorpus& corpus, const std::filesystem::path& source_path,
                            const std::filesystem::path& target_path) {
  std::vector<std::string> src, tgt;
  src.reserve(corpus.size());
  tgt.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    src.push_back(join(p.source));
    tgt.push_back(join(p.target));
  }
  write_lines(source_path, src);
  write_lines(target_path, tgt);
}

void write_stats(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::int64_t>>& rows) {
  std::vector<std::string> lines;
  for (const auto& [key, value] : rows) lines.push_back(key + '\t' + std::to_string(value));
  write_lines(path, lines);
}

std::vector<std::pair<std::string, std::int64_t>> read_stats(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::int64_t>> rows;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("stats line without tab: '" + line + "'");
    try {
      rows.emplace_back(line.substr(0, tab), std::stoll(line.substr(tab + 1)));
    } catch (const std::exception&) {
      throw FormatError("stats value is not an integer: '" + line + "'");
    }
  }
  return rows;
}

}  // namespace nmt
