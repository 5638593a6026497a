#include "nmt/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "nmt/errors.hpp"

namespace nmt {

namespace {

std::unordered_map<std::string, std::int64_t> ngram_counts(const Tokens& tokens, int n) {
  std::unordered_map<std::string, std::int64_t> counts;
  const auto len = static_cast<int>(tokens.size());
  for (int i = 0; i + n <= len; ++i) {
    std::string key;
    for (int j = i; j < i + n; ++j) (key += tokens[static_cast<std::size_t>(j)]) += '\x1f';
    ++counts[key];
  }
  return counts;
}

void check_paired(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  if (candidates.size() != references.size()) {
    throw UsageError("BLEU needs one reference per candidate: " + std::to_string(candidates.size()) +
                     " candidates vs " + std::to_string(references.size()) + " references");
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

NgramCounts clipped_precision(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references, int n) {
  if (n < 1) throw UsageError("n-gram order must be at least 1, got " + std::to_string(n));
  check_paired(candidates, references);
  NgramCounts out;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto cand = ngram_counts(candidates[s], n);
    const auto ref = ngram_counts(references[s], n);
    for (const auto& [gram, count] : cand) {
      out.total += count;
      const auto it = ref.find(gram);
      if (it != ref.end()) out.matched += std::min(count, it->second);
    }
  }
  return out;
}

double brevity_penalty(std::int64_t c, std::int64_t r) {
  if (c <= 0) return 0.0;
  if (c > r) return 1.0;
  return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

BleuReport bleu_corpus(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                       const BleuOptions& options) {
  check_paired(candidates, references);
  if (candidates.empty()) throw UsageError("BLEU of an empty corpus is undefined");
  if (options.max_order < 1) throw UsageError("max n-gram order must be at least 1");

  BleuReport rep;
  rep.max_order = options.max_order;
  rep.weights = options.weights.empty()
                    ? std::vector<double>(static_cast<std::size_t>(options.max_order), 1.0 / options.max_order)
                    : options.weights;
  if (rep.weights.size() != static_cast<std::size_t>(options.max_order)) {
    throw UsageError("expected " + std::to_string(options.max_order) + " BLEU weights, got " +
                     std::to_string(rep.weights.size()));
  }
  const double wsum = std::accumulate(rep.weights.begin(), rep.weights.end(), 0.0);
  if (std::abs(wsum - 1.0) > 1e-9 || std::any_of(rep.weights.begin(), rep.weights.end(), [](double w) { return w < 0; })) {
    throw UsageError("BLEU weights must be non-negative and sum to 1");
  }

  for (std::size_t s = 0; s < candidates.size(); ++s) {
    rep.candidate_length += static_cast<std::int64_t>(candidates[s].size());
    rep.reference_length += static_cast<std::int64_t>(references[s].size());
  }
  rep.brevity_penalty = brevity_penalty(rep.candidate_length, rep.reference_length);

  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= options.max_order; ++n) {
    auto counts = clipped_precision(candidates, references, n);
    rep.counts.push_back(counts);
    double p = 0.0;
    if (options.smooth && n >= 2) {
      p = static_cast<double>(counts.matched + 1) / static_cast<double>(counts.total + 1);
    } else if (counts.total > 0) {
      p = static_cast<double>(counts.matched) / static_cast<double>(counts.total);
    }
    rep.precisions.push_back(p);
    if (p <= 0.0) {
      zero = true;
    } else {
      log_sum += rep.weights[static_cast<std::size_t>(n - 1)] * std::log(p);
    }
  }
  rep.bleu = (zero || rep.brevity_penalty == 0.0) ? 0.0 : rep.brevity_penalty * std::exp(log_sum);
  if (rep.bleu > 1.0) rep.bleu = 1.0;  // exp(log 1) rounding
  return rep;
}

std::string format_report(const BleuReport& report) {
  std::string names, values;
  for (int n = 1; n <= report.max_order; ++n) {
    if (n > 1) {
      names += '/';
      values += " / ";
    }
    names += "p" + std::to_string(n);
    values += report.defined(n) ? fixed(report.precisions[static_cast<std::size_t>(n - 1)], 4) : "undefined";
  }
  std::string out;
  out += "BLEU = " + fixed(report.bleu * 100.0, 2) + "\n";
  out += names + " = " + values + "\n";
  out += "BP = " + fixed(report.brevity_penalty, 4) + "\n";
  out += "c/r = " + std::to_string(report.candidate_length) + "/" + std::to_string(report.reference_length) + "\n";
  return out;
}

}  // namespace nmt
