#pragma once

// Shared corpora for unit and acceptance tests.

#include <string>
#include <utility>
#include <vector>

#include "nmt/random.hpp"

namespace nmt::testing {

/// 20 aligned lines: 2 empty sides, 1 overlong source, 1 repeated pair.
/// Expected stage counts 20 / 20 / 17 / 16.
inline std::pair<std::vector<std::string>, std::vector<std::string>> pipeline_fixture() {
  std::string overlong;
  for (int i = 0; i < 81; ++i) overlong += "w" + std::to_string(i) + " ";
  std::vector<std::string> src{
      "The cat sat on the mat.",
      "“Gold” prices rose – again.",
      "",
      "Hello, world!",
      "Prices rose by 300 percent.",
      "Hello, world!",
      overlong,
      "She didn't go to the well-known market.",
      "What time is it?",
      "The committee (finally) agreed.",
      "Rain is expected tomorrow.",
      "I like tea; she likes coffee.",
      "The train leaves at nine.",
      "He said: no.",
      "Numbers [1] and [2] are cited.",
      "Good morning.",
      "The river is  wide  .",
      "We will see…",
      "Thank you very much.",
      "This line has a target.",
  };
  std::vector<std::string> tgt{
      "Die Katze sass auf der Matte.",
      "„Gold“ Preise stiegen – wieder.",
      "Leer auf der Quelle.",
      "Hallo, Welt!",
      "Die Preise stiegen um 300 Prozent.",
      "Hallo, Welt!",
      "Zu lang.",
      "Sie ging nicht zum bekannten Markt.",
      "Wie spät ist es?",
      "Der Ausschuss (endlich) stimmte zu.",
      "Morgen wird Regen erwartet.",
      "Ich mag Tee; sie mag Kaffee.",
      "Der Zug fährt um neun.",
      "Er sagte: nein.",
      "Die Nummern [1] und [2] werden zitiert.",
      "Guten Morgen.",
      "Der Fluss ist breit.",
      "Wir werden sehen…",
      "Vielen Dank.",
      "   ",
  };
  return {src, tgt};
}

/// Random lines over a tiny alphabet so that duplicates and punctuation occur.
inline std::vector<std::string> random_lines(RandomSource& rng, std::size_t n, std::size_t max_words) {
  static const std::vector<std::string> words{"a", "b", "c", "d,", "(e)", "f.", "g!", "\"h\"", "i-j", "k's", "..."};
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = rng.uniform_index(max_words + 1);
    std::string line;
    for (std::size_t w = 0; w < len; ++w) {
      if (w) line += rng.uniform() < 0.2 ? "  " : " ";
      line += words[rng.uniform_index(words.size())];
    }
    lines.push_back(line);
  }
  return lines;
}

}  // namespace nmt::testing
