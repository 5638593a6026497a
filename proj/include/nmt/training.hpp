#pragma once

// Teacher-forced training: batching, Adam, early stopping, loss logs and
// checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nmt/model.hpp"
#include "nmt/preprocess.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

using Model = Transformer<float>;

using LogSink = std::function<void(const std::string&)>;

/// Writes to stderr.
void log_to_stderr(const std::string& message);

struct TrainConfig {
  std::int64_t epochs = 5;
  double learning_rate = 5e-4;
  std::int64_t batch_size = 64;
  double dropout = 0.1;
  bool early_stopping = true;
  std::int64_t patience = 3;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-9;
  /// Global gradient-norm bound; 0 disables clipping.
  double clip_norm = 1.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// ---- batching ----

/// One encoded pair: source = bos s eos, decoder input = bos t, labels = t eos.
struct Example {
  IdSequence source;
  IdSequence decoder_input;
  IdSequence labels;
};

struct EncodedCorpus {
  std::vector<Example> examples;
  std::size_t skipped = 0;
};

/// Pairs whose encoded side would exceed max_seq_len are skipped and reported.
EncodedCorpus encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                            Index max_seq_len, const LogSink& warn = log_to_stderr);

struct Batch {
  TokenBatch source;
  TokenBatch decoder_input;
  /// [batch * target length], pad-filled like decoder_input.
  IdSequence labels;
  Index target_tokens = 0;
};

Batch collate(const std::vector<const Example*>& items);

/// Shuffles with `rng` when given, then cuts consecutive batches.
std::vector<Batch> make_batches(const std::vector<Example>& examples, std::int64_t batch_size,
                                RandomSource* rng = nullptr);

/// Mean cross-entropy over the batch's non-pad labels.
Tensor<float> batch_loss(const Model& model, const Batch& batch, const ForwardContext& ctx);

/// Token-weighted mean loss with dropout off and no graph.
double evaluate_loss(const Model& model, const std::vector<Batch>& batches);

// ---- optimization ----

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  bool operator==(const AdamState&) const = default;
};

class Adam {
 public:
  Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-9)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Bias-corrected update of every parameter from its gradient. Throws
  /// NumericError before touching anything when a gradient is not finite.
  void step(std::vector<NamedParameter<float>>& params);

  const AdamState& state() const { return state_; }
  void set_state(AdamState state) { state_ = std::move(state); }

 private:
  double lr_, beta1_, beta2_, eps_;
  AdamState state_;
};

/// Scales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before scaling.
double clip_grad_norm(std::vector<NamedParameter<float>>& params, double max_norm);

/// Patience counter over validation losses.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::int64_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool observe(std::int64_t epoch, double valid_loss);
  bool improved() const { return last_improved_; }
  std::int64_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::int64_t patience_;
  std::int64_t best_epoch_ = 0;
  double best_loss_ = 0.0;
  std::int64_t bad_epochs_ = 0;
  bool last_improved_ = false;
};

// ---- logs ----

struct EpochRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::string run_label;
  std::vector<EpochRecord> records;
  bool stopped_early = false;
  /// Epoch whose parameters the model holds at the end.
  std::int64_t best_epoch = 0;
};

inline constexpr std::string_view kTrainLogHeader = "epoch,train_loss,valid_loss,seconds,run_label";

/// Header line plus one row per record; losses printed round-trip exact.
std::string format_train_log(const TrainLog& log);
void write_train_log(const std::filesystem::path& path, const TrainLog& log);
/// One TrainLog per distinct run label, in order of first appearance.
std::vector<TrainLog> read_train_logs(const std::filesystem::path& path);
/// Concatenates logs under one header.
std::string merge_train_logs(const std::vector<TrainLog>& logs);

// ---- loop ----

struct TrainData {
  const ParallelCorpus* train = nullptr;
  const ParallelCorpus* valid = nullptr;
  const Vocabulary* src_vocab = nullptr;
  const Vocabulary* tgt_vocab = nullptr;
};

class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg, LogSink log = log_to_stderr);

  /// Runs up to cfg.epochs epochs. With early stopping the model ends on the
  /// best-validation parameters. On a non-finite loss or gradient the
  /// parameters from the start of the failing epoch are restored and
  /// NumericError is thrown.
  TrainLog run(const TrainData& data, const std::string& run_label = "run");

  /// One optimizer update; returns the batch loss.
  double train_step(const Batch& batch);

  Adam& optimizer() { return adam_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t epochs_done() const { return epochs_done_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  LogSink log_;
  Adam adam_;
  RandomSource shuffle_rng_;
  RandomSource dropout_rng_;
  std::int64_t epochs_done_ = 0;
};

// ---- checkpoints ----

struct Checkpoint {
  Model model;
  TrainConfig train_config;
  AdamState optimizer;
  std::uint64_t epoch = 0;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
};

/// Little-endian binary container starting with "MTRX" and a version word.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainConfig& train_config,
                     const AdamState& optimizer, std::uint64_t epoch, const Vocabulary& src_vocab,
                     const Vocabulary& tgt_vocab);

/// Throws FormatError on a malformed file and ConfigError when the stored
/// vocabularies disagree with the stored model sizes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- experiment harness ----

enum class Composition { kBase, kMixed };
std::string to_string(Composition c);

struct ExperimentArm {
  Composition composition = Composition::kBase;
  std::int64_t epochs = 5;
};

struct ExperimentRow {
  Composition composition;
  std::int64_t epochs = 0;
  std::size_t train_size = 0;
  double bleu = 0.0;  // x100
};

struct ExperimentReport {
  std::vector<ExperimentRow> rows;
  std::vector<TrainLog> logs;
  std::size_t valid_size = 0;
  std::size_t test_size = 0;

  /// `composition,epochs,train_size,bleu` CSV.
  std::string to_csv() const;
};

struct ExperimentSetup {
  ModelConfig model;
  TrainConfig train;
  std::int64_t min_freq = 1;
  std::uint64_t mix_seed = 7;
  std::size_t decode_threads = 1;
};

/// Trains one fresh model per arm on base or base + general, all scored
/// with greedy decoding against the same in-domain test set.
ExperimentReport run_experiment(const ParallelCorpus& base, const ParallelCorpus& general, const ParallelCorpus& valid,
                                const ParallelCorpus& test, const std::vector<ExperimentArm>& arms,
                                const ExperimentSetup& setup, const LogSink& log = log_to_stderr);

}  // namespace nmt
