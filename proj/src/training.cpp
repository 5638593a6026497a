#include "nmt/training.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "nmt/errors.hpp"

namespace nmt {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("bad number for " + what + ": '" + std::string(s) + "'");
  return v;
}

std::int64_t parse_int(std::string_view s, const std::string& what) {
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw FormatError("bad integer for " + what + ": '" + std::string(s) + "'");
  return v;
}

}  // namespace

void log_to_stderr(const std::string& message) { std::cerr << message << '\n'; }

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (epochs < 1) fail("epochs must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (patience < 1) fail("patience must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail("adam eps must be positive");
  if (!(clip_norm >= 0.0)) fail("clip_norm must be non-negative");
}

// ---- batching ----

EncodedCorpus encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                            Index max_seq_len, const LogSink& warn) {
  EncodedCorpus out;
  out.examples.reserve(corpus.size());
  const auto limit = static_cast<std::size_t>(std::max<Index>(max_seq_len - 2, 0));
  for (const auto& p : corpus.pairs) {
    if (p.source.size() > limit || p.target.size() > limit) {
      ++out.skipped;
      continue;
    }
    Example ex;
    ex.source = src_vocab.encode(p.source, true);
    const auto tgt = tgt_vocab.encode(p.target, false);
    ex.decoder_input.reserve(tgt.size() + 1);
    ex.decoder_input.push_back(kBosId);
    ex.decoder_input.insert(ex.decoder_input.end(), tgt.begin(), tgt.end());
    ex.labels = tgt;
    ex.labels.push_back(kEosId);
    out.examples.push_back(std::move(ex));
  }
  if (out.skipped > 0 && warn) {
    warn("warning: skipped " + std::to_string(out.skipped) + " of " + std::to_string(corpus.size()) +
         " pairs longer than " + std::to_string(limit) + " tokens");
  }
  return out;
}

Batch collate(const std::vector<const Example*>& items) {
  std::vector<IdSequence> src, dec, lab;
  for (const auto* e : items) {
    src.push_back(e->source);
    dec.push_back(e->decoder_input);
    lab.push_back(e->labels);
  }
  Batch b;
  b.source = TokenBatch::from_rows(src);
  b.decoder_input = TokenBatch::from_rows(dec);
  b.labels = TokenBatch::from_rows(lab).ids;
  for (const auto& l : lab) b.target_tokens += static_cast<Index>(l.size());
  return b;
}

std::vector<Batch> make_batches(const std::vector<Example>& examples, std::int64_t batch_size, RandomSource* rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng) rng->shuffle(order);
  std::vector<Batch> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::vector<const Example*> items;
    for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) items.push_back(&examples[order[i]]);
    batches.push_back(collate(items));
  }
  return batches;
}

Tensor<float> batch_loss(const Model& model, const Batch& batch, const ForwardContext& ctx) {
  const auto logits = model.forward(batch.source, batch.decoder_input, ctx);
  const Index rows = logits.dim(0) * logits.dim(1);
  return cross_entropy(reshape(logits, {rows, logits.dim(2)}), std::span<const TokenId>(batch.labels), kPadId);
}

double evaluate_loss(const Model& model, const std::vector<Batch>& batches) {
  NoGradGuard no_grad;
  double total = 0.0;
  Index tokens = 0;
  for (const auto& b : batches) {
    total += static_cast<double>(batch_loss(model, b, {}).item()) * static_cast<double>(b.target_tokens);
    tokens += b.target_tokens;
  }
  if (tokens == 0) throw UsageError("cannot evaluate loss without target tokens");
  return total / static_cast<double>(tokens);
}

// ---- optimization ----

void Adam::step(std::vector<NamedParameter<float>>& params) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  if (state_.m.empty()) {
    for (const auto& p : params) {
      state_.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
      state_.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
    }
  }
  if (state_.m.size() != params.size()) throw UsageError("optimizer state does not match the parameter list");

  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    if (!tensor.has_grad()) continue;
    const auto grad = tensor.grad();
    auto data = tensor.mutable_data();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad[j];
      const double mj = beta1_ * m[j] + (1.0 - beta1_) * g;
      const double vj = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      data[j] = static_cast<float>(data[j] - lr_ * (mj / c1) / (std::sqrt(vj / c2) + eps_));
    }
  }
}

double clip_grad_norm(std::vector<NamedParameter<float>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto factor = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

bool EarlyStopper::observe(std::int64_t epoch, double valid_loss) {
  if (best_epoch_ == 0 || valid_loss < best_loss_) {
    best_epoch_ = epoch;
    best_loss_ = valid_loss;
    bad_epochs_ = 0;
    last_improved_ = true;
  } else {
    ++bad_epochs_;
    last_improved_ = false;
  }
  return bad_epochs_ >= patience_;
}

// ---- logs ----

std::string format_train_log(const TrainLog& log) {
  if (log.run_label.find_first_of(",\n\r") != std::string::npos) {
    throw UsageError("run label may not contain commas or newlines: '" + log.run_label + "'");
  }
  std::string out(kTrainLogHeader);
  out += '\n';
  for (const auto& r : log.records) {
    out += std::to_string(r.epoch) + ',' + shortest(r.train_loss) + ',' + shortest(r.valid_loss) + ',' +
           shortest(r.seconds) + ',' + log.run_label + '\n';
  }
  return out;
}

void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << format_train_log(log);
}

std::vector<TrainLog> read_train_logs(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kTrainLogHeader) {
    throw FormatError(path.string() + ": expected header '" + std::string(kTrainLogHeader) + "'");
  }
  std::vector<TrainLog> logs;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(lines[i]);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 5) throw FormatError(path.string() + ": line " + std::to_string(i + 1) + " needs 5 fields");
    const auto where = path.string() + " line " + std::to_string(i + 1);
    EpochRecord r{parse_int(f[0], where), parse_double(f[1], where), parse_double(f[2], where),
                  parse_double(f[3], where)};
    auto [it, fresh] = index.emplace(f[4], logs.size());
    if (fresh) logs.push_back({f[4], {}, false, 0});
    auto& log = logs[it->second];
    if (!log.records.empty() && r.epoch <= log.records.back().epoch) {
      throw FormatError(where + ": epochs must increase within run '" + f[4] + "'");
    }
    log.records.push_back(r);
    log.best_epoch = r.epoch;
  }
  return logs;
}

std::string merge_train_logs(const std::vector<TrainLog>& logs) {
  std::string out(kTrainLogHeader);
  out += '\n';
  for (const auto& log : logs) {
    const auto text = format_train_log(log);
    out += text.substr(kTrainLogHeader.size() + 1);
  }
  return out;
}

// ---- loop ----

Trainer::Trainer(Model& model, TrainConfig cfg, LogSink log)
    : model_(model),
      cfg_(std::move(cfg)),
      log_(std::move(log)),
      adam_(cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.eps),
      shuffle_rng_(cfg_.seed),
      dropout_rng_(cfg_.seed ^ 0x9E3779B97F4A7C15ULL) {
  cfg_.validate();
  model_.set_dropout(cfg_.dropout);
}

double Trainer::train_step(const Batch& batch) {
  model_.zero_grad();
  auto loss = batch_loss(model_, batch, {true, &dropout_rng_});
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("training loss became " + shortest(value));
  loss.backward();
  if (cfg_.clip_norm > 0.0) {
    const double norm = clip_grad_norm(model_.parameters(), cfg_.clip_norm);
    if (!std::isfinite(norm)) throw NumericError("gradient norm became " + shortest(norm));
  }
  adam_.step(model_.parameters());
  return value;
}

TrainLog Trainer::run(const TrainData& data, const std::string& run_label) {
  if (!data.train || !data.valid || !data.src_vocab || !data.tgt_vocab) {
    throw UsageError("training needs train and valid corpora and both vocabularies");
  }
  const auto& mcfg = model_.config();
  if (static_cast<Index>(data.src_vocab->size()) != mcfg.src_vocab_size ||
      static_cast<Index>(data.tgt_vocab->size()) != mcfg.tgt_vocab_size) {
    throw ConfigError("vocabulary sizes " + std::to_string(data.src_vocab->size()) + "/" +
                      std::to_string(data.tgt_vocab->size()) + " do not match the model's " +
                      std::to_string(mcfg.src_vocab_size) + "/" + std::to_string(mcfg.tgt_vocab_size));
  }
  const auto train_set = encode_corpus(*data.train, *data.src_vocab, *data.tgt_vocab, mcfg.max_seq_len, log_);
  const auto valid_set = encode_corpus(*data.valid, *data.src_vocab, *data.tgt_vocab, mcfg.max_seq_len, log_);
  if (train_set.examples.empty()) throw UsageError("no training pairs fit the model's max_seq_len");
  if (valid_set.examples.empty()) throw UsageError("no validation pairs fit the model's max_seq_len");
  const auto valid_batches = make_batches(valid_set.examples, cfg_.batch_size);

  TrainLog log;
  log.run_label = run_label;
  EarlyStopper stopper(cfg_.patience);
  auto best = model_.snapshot();

  for (std::int64_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto good = model_.snapshot();
    const auto good_state = adam_.state();
    double total = 0.0;
    Index tokens = 0;
    try {
      for (const auto& batch : make_batches(train_set.examples, cfg_.batch_size, &shuffle_rng_)) {
        total += train_step(batch) * static_cast<double>(batch.target_tokens);
        tokens += batch.target_tokens;
      }
    } catch (const NumericError& e) {
      model_.restore(good);
      adam_.set_state(good_state);
      throw NumericError(std::string(e.what()) + " in epoch " + std::to_string(epoch) +
                         "; parameters restored to the end of epoch " + std::to_string(epoch - 1));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(tokens);
    rec.valid_loss = evaluate_loss(model_, valid_batches);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.valid_loss)) {
      model_.restore(good);
      adam_.set_state(good_state);
      throw NumericError("validation loss became non-finite in epoch " + std::to_string(epoch));
    }
    log.records.push_back(rec);
    ++epochs_done_;
    if (log_) {
      log_("[" + run_label + "] epoch " + std::to_string(epoch) + " train_loss " + shortest(rec.train_loss) +
           " valid_loss " + shortest(rec.valid_loss));
    }

    if (!cfg_.early_stopping) {
      log.best_epoch = epoch;
      continue;
    }
    const bool stop = stopper.observe(epoch, rec.valid_loss);
    if (stopper.improved()) best = model_.snapshot();
    if (stop) {
      log.stopped_early = epoch < cfg_.epochs;
      break;
    }
  }
  if (cfg_.early_stopping) {
    model_.restore(best);
    log.best_epoch = stopper.best_epoch();
    if (log_ && log.best_epoch != log.records.back().epoch) {
      log_("[" + run_label + "] restored parameters from epoch " + std::to_string(log.best_epoch));
    }
  }
  return log;
}

}  // namespace nmt
