#include "nmt/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "nmt/errors.hpp"

namespace nmt {

namespace {

bool is_special(std::string_view t) { return t == kPadToken || t == kBosToken || t == kEosToken || t == kUnkToken; }

}  // namespace

Vocabulary::Vocabulary() {
  for (auto t : {kPadToken, kBosToken, kEosToken, kUnkToken}) append(std::string(t), 0);
}

void Vocabulary::append(std::string token, std::int64_t freq) {
  const auto id = static_cast<TokenId>(id_to_token_.size());
  if (!token_to_id_.emplace(token, id).second) throw FormatError("duplicate vocabulary entry '" + token + "'");
  id_to_token_.push_back(std::move(token));
  frequencies_.push_back(freq);
}

Vocabulary Vocabulary::build(const std::vector<Tokens>& sentences, std::int64_t min_freq) {
  std::unordered_map<std::string, std::int64_t> counts;
  std::size_t total = 0;
  for (const auto& s : sentences) {
    total += s.size();
    for (const auto& t : s) {
      if (!is_special(t)) ++counts[t];
    }
  }
  if (total == 0) throw InputError("cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, std::int64_t>> entries;
  entries.reserve(counts.size());
  for (auto& [tok, n] : counts) {
    if (n >= min_freq) entries.emplace_back(tok, n);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  Vocabulary v;
  v.min_freq_ = min_freq;
  v.token_to_id_.reserve(entries.size() + kNumSpecials);
  for (auto& [tok, n] : entries) v.append(std::move(tok), n);
  return v;
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.count(std::string(token)) > 0; }

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::int64_t Vocabulary::frequency(TokenId id) const {
  token(id);
  return frequencies_[static_cast<std::size_t>(id)];
}

IdSequence Vocabulary::encode(const Tokens& tokens, bool add_bos_eos) const {
  IdSequence ids;
  ids.reserve(tokens.size() + 2);
  if (add_bos_eos) ids.push_back(kBosId);
  for (const auto& t : tokens) ids.push_back(id(t));
  if (add_bos_eos) ids.push_back(kEosId);
  return ids;
}

Tokens Vocabulary::decode(const IdSequence& ids, bool strip_specials) const {
  Tokens out;
  out.reserve(ids.size());
  for (const auto i : ids) {
    const auto& t = token(i);
    if (strip_specials && (i == kPadId || i == kBosId || i == kEosId)) continue;
    out.push_back(t);
  }
  return out;
}

std::string Vocabulary::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    out += id_to_token_[i];
    out += '\t';
    out += std::to_string(frequencies_[i]);
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::from_string(std::string_view text) {
  Vocabulary v;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError("vocabulary line " + std::to_string(lineno) + " is not token<TAB>frequency");
    }
    std::string tok = line.substr(0, tab);
    std::int64_t freq = 0;
    try {
      freq = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw FormatError("vocabulary line " + std::to_string(lineno) + " has a non-integer frequency");
    }
    if (lineno <= kNumSpecials) {
      if (tok != v.id_to_token_[lineno - 1]) {
        throw FormatError("vocabulary line " + std::to_string(lineno) + " must be " + v.id_to_token_[lineno - 1]);
      }
      continue;
    }
    if (is_special(tok)) throw FormatError("special token '" + tok + "' outside the reserved ids");
    v.append(std::move(tok), freq);
  }
  if (lineno < kNumSpecials) throw FormatError("vocabulary is missing its special tokens");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_string();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

std::vector<Tokens> source_side(const ParallelCorpus& corpus) {
  std::vector<Tokens> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) out.push_back(p.source);
  return out;
}

std::vector<Tokens> target_side(const ParallelCorpus& corpus) {
  std::vector<Tokens> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) out.push_back(p.target);
  return out;
}

}  // namespace nmt
