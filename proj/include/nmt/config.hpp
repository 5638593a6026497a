#pragma once

// Flat `key = value` run configuration; `#` starts a comment.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nmt/model.hpp"
#include "nmt/training.hpp"

namespace nmt {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  std::filesystem::path train_src, train_tgt;
  std::filesystem::path valid_src, valid_tgt;
  /// Built from the training data when empty.
  std::filesystem::path src_vocab, tgt_vocab;
  /// General-domain corpus mixed into training when set.
  std::filesystem::path general_src, general_tgt;
  std::filesystem::path checkpoint = "model.ckpt";
  std::filesystem::path log = "train_log.csv";
  std::string run_label = "run";
  std::int64_t min_freq = 1;

  /// Model and training invariants plus path pairing.
  void validate() const;
};

/// Relative paths are resolved against `base_dir`. Unknown keys, repeated
/// keys and malformed values raise ConfigError naming the line.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text form; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& config);

/// Every accepted key, in canonical order.
std::vector<std::string> config_keys();

}  // namespace nmt
