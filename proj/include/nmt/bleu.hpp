#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nmt/token.hpp"

namespace nmt {

struct NgramCounts {
  std::int64_t matched = 0;
  std::int64_t total = 0;
};

/// Corpus sums of clipped n-gram matches and candidate n-grams of order n.
/// Throws UsageError for n < 1 or unpaired lists.
NgramCounts clipped_precision(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references, int n);

/// 1 when c > r, exp(1 - r/c) when 0 < c <= r, 0 when c == 0.
double brevity_penalty(std::int64_t c, std::int64_t r);

struct BleuOptions {
  int max_order = 4;
  /// Empty means uniform 1/max_order.
  std::vector<double> weights;
  /// Add-one on orders >= 2.
  bool smooth = false;
};

struct BleuReport {
  double bleu = 0.0;
  std::vector<double> precisions;
  std::vector<NgramCounts> counts;
  double brevity_penalty = 0.0;
  std::int64_t candidate_length = 0;
  std::int64_t reference_length = 0;
  int max_order = 4;
  std::vector<double> weights;

  /// False when order n had no candidate n-grams at all.
  bool defined(int n) const { return counts.at(static_cast<std::size_t>(n - 1)).total > 0; }
};

/// Throws UsageError on an empty corpus, unpaired lists or bad weights.
BleuReport bleu_corpus(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                       const BleuOptions& options = {});

/// `BLEU = xx.xx`, `p1/p2/... = ...`, `BP = ...`, `c/r = ...` lines.
std::string format_report(const BleuReport& report);

}  // namespace nmt
