#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "nmt/errors.hpp"
#include "nmt/training.hpp"
#include "support/copy_task.hpp"

using namespace nmt;

namespace {

const LogSink kQuiet = [](const std::string&) {};

struct Tiny {
  ParallelCorpus train;
  ParallelCorpus valid;
  Vocabulary src;
  Vocabulary tgt;
  ModelConfig mcfg;
};

Tiny tiny_setup() {
  Tiny t;
  t.train = testing::copy_corpus(20, 8, 6, 5);
  t.valid = testing::copy_corpus(6, 8, 6, 6);
  t.src = Vocabulary::build(source_side(t.train));
  t.tgt = Vocabulary::build(target_side(t.train));
  t.mcfg = testing::copy_model_config(static_cast<Index>(t.src.size()), static_cast<Index>(t.tgt.size()));
  t.mcfg.d_model = 16;
  t.mcfg.n_heads = 2;
  t.mcfg.n_encoder_layers = 1;
  t.mcfg.n_decoder_layers = 1;
  return t;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.dropout = 0.1;
  c.seed = 9;
  return c;
}

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("train config defaults and validation") {
  TrainConfig c;
  CHECK(c.epochs == 5);
  CHECK(c.learning_rate == 5e-4);
  CHECK(c.batch_size == 64);
  CHECK(c.dropout == 0.1);
  CHECK(c.early_stopping);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
  CHECK(c.eps == 1e-9);
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("encoding offsets decoder input and labels by one") {
  const auto corpus = ParallelCorpus::from_pairs({{{"a", "b"}, {"x", "y", "z"}, Origin::kInDomain}});
  const auto vs = Vocabulary::build(source_side(corpus));
  const auto vt = Vocabulary::build(target_side(corpus));
  const auto enc = encode_corpus(corpus, vs, vt, 10, kQuiet);
  REQUIRE(enc.examples.size() == 1);
  const auto& ex = enc.examples[0];
  CHECK(ex.source == IdSequence{kBosId, vs.id("a"), vs.id("b"), kEosId});
  CHECK(ex.decoder_input == IdSequence{kBosId, vt.id("x"), vt.id("y"), vt.id("z")});
  CHECK(ex.labels == IdSequence{vt.id("x"), vt.id("y"), vt.id("z"), kEosId});
  // label[t] follows decoder_input[0..t]
  for (std::size_t t = 0; t + 1 < ex.labels.size(); ++t) CHECK(ex.labels[t] == ex.decoder_input[t + 1]);

  std::string warning;
  const auto skipped = encode_corpus(corpus, vs, vt, 4, [&](const std::string& m) { warning = m; });
  CHECK(skipped.examples.empty());
  CHECK(skipped.skipped == 1);
  CHECK(warning.find("skipped 1") != std::string::npos);
}

TEST_CASE("batches: cardinality and padding") {
  std::vector<Example> examples;
  RandomSource rng(1);
  for (int i = 0; i < 130; ++i) {
    const auto len = 1 + rng.uniform_index(6);
    Example e;
    e.source = IdSequence(len + 2, 5);
    e.decoder_input = IdSequence(len + 1, 6);
    e.labels = IdSequence(len + 1, 7);
    examples.push_back(e);
  }
  RandomSource shuffle(2);
  const auto batches = make_batches(examples, 64, &shuffle);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].source.batch == 64);
  CHECK(batches[1].source.batch == 64);
  CHECK(batches[2].source.batch == 2);
  for (const auto& b : batches) {
    Index real = 0;
    for (Index i = 0; i < b.decoder_input.batch; ++i) {
      bool in_pad = false;
      for (Index t = 0; t < b.decoder_input.length; ++t) {
        const auto id = b.decoder_input.at(i, t);
        if (id == kPadId) in_pad = true;
        CHECK((in_pad ? id == kPadId : id == 6));
        CHECK((b.labels[static_cast<std::size_t>(i * b.decoder_input.length + t)] == kPadId) == in_pad);
        real += !in_pad;
      }
    }
    CHECK(real == b.target_tokens);
  }
}

TEST_CASE("adam: first step, zero gradient, non-finite gradient") {
  std::vector<NamedParameter<float>> params{{"p", Tensor<float>::zeros({1}, true)}};
  params[0].tensor.mutable_grad()[0] = 1.0f;
  Adam adam(5e-4);
  adam.step(params);
  CHECK(params[0].tensor.data()[0] == doctest::Approx(-5e-4).epsilon(1e-6));
  CHECK(params[0].tensor.data()[0] == -5e-4f);

  std::vector<NamedParameter<float>> still{{"q", Tensor<float>::full({3}, 2.0f, true)}};
  still[0].tensor.zero_grad();
  Adam a2(5e-4);
  a2.step(still);
  for (float v : still[0].tensor.data()) CHECK(v == 2.0f);

  still[0].tensor.mutable_grad()[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(a2.step(still), NumericError);
  for (float v : still[0].tensor.data()) CHECK(v == 2.0f);
}

TEST_CASE("gradient clipping bounds the global norm") {
  std::vector<NamedParameter<float>> params{{"a", Tensor<float>::zeros({2}, true)}, {"b", Tensor<float>::zeros({1}, true)}};
  params[0].tensor.mutable_grad()[0] = 3.0f;
  params[0].tensor.mutable_grad()[1] = 4.0f;
  params[1].tensor.mutable_grad()[0] = 12.0f;
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(13.0));
  CHECK(params[0].tensor.grad()[0] == doctest::Approx(3.0 / 13.0));
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(1.0));
  CHECK(clip_grad_norm(params, 5.0) == doctest::Approx(1.0));
  CHECK(params[1].tensor.grad()[0] == doctest::Approx(12.0 / 13.0));
}

TEST_CASE("early stopping rule") {
  EarlyStopper s(2);
  CHECK_FALSE(s.observe(1, 3.0));
  CHECK_FALSE(s.observe(2, 2.5));
  CHECK_FALSE(s.observe(3, 2.6));
  CHECK(s.observe(4, 2.7));
  CHECK(s.best_epoch() == 2);
  CHECK(s.best_loss() == 2.5);
}

TEST_CASE("doubling the pad tail leaves the loss unchanged") {
  auto t = tiny_setup();
  RandomSource init(4);
  Model model(t.mcfg, init);
  const auto enc = encode_corpus(t.train, t.src, t.tgt, t.mcfg.max_seq_len, kQuiet);
  auto batch = make_batches(enc.examples, 8).front();

  auto widen = [](const TokenBatch& b, Index extra) {
    std::vector<IdSequence> rows;
    for (Index i = 0; i < b.batch; ++i) {
      auto r = IdSequence(b.row(i).begin(), b.row(i).end());
      r.resize(r.size() + static_cast<std::size_t>(extra), kPadId);
      rows.push_back(r);
    }
    return TokenBatch::from_rows(rows);
  };
  Batch wide = batch;
  wide.source = widen(batch.source, batch.source.length);
  wide.decoder_input = widen(batch.decoder_input, batch.decoder_input.length);
  wide.labels = widen(TokenBatch{batch.decoder_input.batch, batch.decoder_input.length, batch.labels},
                      batch.decoder_input.length)
                    .ids;
  NoGradGuard ng;
  const double a = batch_loss(model, batch, {}).item();
  const double b = batch_loss(model, wide, {}).item();
  CHECK(std::abs(a - b) < 1e-6);
}

TEST_CASE("fixed seed reproduces the train log") {
  auto t = tiny_setup();
  auto run = [&] {
    RandomSource init(11);
    Model model(t.mcfg, init);
    Trainer trainer(model, tiny_train_config(), kQuiet);
    return std::make_pair(trainer.run({&t.train, &t.valid, &t.src, &t.tgt}), model.snapshot());
  };
  const auto [a, pa] = run();
  const auto [b, pb] = run();
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].train_loss == b.records[i].train_loss);
    CHECK(a.records[i].valid_loss == b.records[i].valid_loss);
  }
  CHECK(pa == pb);
  for (std::size_t i = 1; i < a.records.size(); ++i) CHECK(a.records[i].epoch > a.records[i - 1].epoch);
}

TEST_CASE("early stopping keeps the best validation parameters") {
  auto t = tiny_setup();
  // Disjoint validation vocabulary: validation loss mostly rises as training fits.
  t.valid = ParallelCorpus::from_pairs({{{"w1", "w2", "w3"}, {"w3", "w2", "w1"}, Origin::kInDomain},
                                        {{"w4", "w5"}, {"w7", "w0"}, Origin::kInDomain}});
  RandomSource init(12);
  Model model(t.mcfg, init);
  auto cfg = tiny_train_config();
  cfg.epochs = 30;
  cfg.patience = 2;
  cfg.learning_rate = 5e-3;
  Trainer trainer(model, cfg, kQuiet);
  const auto log = trainer.run({&t.train, &t.valid, &t.src, &t.tgt});
  double best = log.records.front().valid_loss;
  for (const auto& r : log.records) best = std::min(best, r.valid_loss);
  const auto enc = encode_corpus(t.valid, t.src, t.tgt, t.mcfg.max_seq_len, kQuiet);
  const double now = evaluate_loss(model, make_batches(enc.examples, cfg.batch_size));
  CHECK(now == doctest::Approx(best).epsilon(1e-9));
  CHECK(log.stopped_early);
  CHECK(log.records[static_cast<std::size_t>(log.best_epoch - 1)].valid_loss == best);
}

TEST_CASE("non-finite loss aborts the step") {
  auto t = tiny_setup();
  RandomSource init(13);
  Model model(t.mcfg, init);
  Trainer trainer(model, tiny_train_config(), kQuiet);
  for (auto& p : model.parameters()) {
    if (p.name == "output.bias") p.tensor.mutable_data()[0] = std::numeric_limits<float>::infinity();
  }
  const auto enc = encode_corpus(t.train, t.src, t.tgt, t.mcfg.max_seq_len, kQuiet);
  CHECK_THROWS_AS(trainer.train_step(make_batches(enc.examples, 4).front()), NumericError);
}

TEST_CASE("checkpoint round trip is bitwise") {
  auto t = tiny_setup();
  RandomSource init(14);
  Model model(t.mcfg, init);
  Trainer trainer(model, tiny_train_config(), kQuiet);
  trainer.run({&t.train, &t.valid, &t.src, &t.tgt});
  const auto path = temp_path("nmt_test_ckpt.bin");
  save_checkpoint(path, model, trainer.config(), trainer.optimizer().state(), 3, t.src, t.tgt);
  const auto back = load_checkpoint(path);
  CHECK(back.model.config() == model.config());
  CHECK(back.train_config == trainer.config());
  CHECK(back.optimizer == trainer.optimizer().state());
  CHECK(back.epoch == 3);
  CHECK(back.src_vocab == t.src);
  CHECK(back.tgt_vocab == t.tgt);

  const auto enc = encode_corpus(t.valid, t.src, t.tgt, t.mcfg.max_seq_len, kQuiet);
  const auto batch = make_batches(enc.examples, 8).front();
  NoGradGuard ng;
  const auto a = model.forward(batch.source, batch.decoder_input);
  const auto b = back.model.forward(batch.source, batch.decoder_input);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()));

  // corrupt, truncate, mismatch
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << data;
  };
  write("XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  write(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  save_checkpoint(path, model, trainer.config(), trainer.optimizer().state(), 3, Vocabulary(), t.tgt);
  CHECK_THROWS_AS(load_checkpoint(path), ConfigError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), InputError);
}

TEST_CASE("train log csv round trip and merge") {
  TrainLog a{"base", {}, false, 0}, b{"mixed", {}, false, 0};
  for (int e = 1; e <= 20; ++e) {
    a.records.push_back({e, 1.0 / e, 1.5 / e, 0.25});
    b.records.push_back({e, 0.9 / e, 1.1 / 3.0 / e, 0.5});
  }
  const auto path = temp_path("nmt_test_log.csv");
  write_train_log(path, a);
  const auto back = read_train_logs(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].run_label == "base");
  for (std::size_t i = 0; i < 20; ++i) CHECK(back[0].records[i].valid_loss == a.records[i].valid_loss);

  const auto merged = merge_train_logs({a, b});
  CHECK(merged.rfind("epoch,train_loss,valid_loss,seconds,run_label\n", 0) == 0);
  CHECK(std::count(merged.begin(), merged.end(), '\n') == 41);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << merged;
  }
  const auto both = read_train_logs(path);
  REQUIRE(both.size() == 2);
  CHECK(both[1].run_label == "mixed");
  CHECK(both[1].records.size() == 20);
  CHECK(both[1].records[2].valid_loss == b.records[2].valid_loss);

  TrainLog bad{"a,b", {}, false, 0};
  CHECK_THROWS_AS(format_train_log(bad), UsageError);
  std::filesystem::remove(path);
}

TEST_CASE("experiment harness mechanics") {
  auto t = tiny_setup();
  const auto general = testing::copy_corpus(12, 8, 6, 77);
  const auto test = testing::copy_corpus(5, 8, 6, 78);
  ExperimentSetup setup;
  setup.model = t.mcfg;
  setup.train = tiny_train_config();
  setup.train.batch_size = 8;
  const auto rep = run_experiment(t.train, general, t.valid, test,
                                  {{Composition::kBase, 1}, {Composition::kMixed, 1}, {Composition::kMixed, 2}}, setup,
                                  kQuiet);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].train_size == 20);
  CHECK(rep.rows[1].train_size == 32);
  CHECK(rep.rows[2].epochs == 2);
  CHECK(rep.logs.size() == 3);
  CHECK(rep.logs[2].run_label == "mixed-2");
  CHECK(rep.test_size == 5);
  for (const auto& r : rep.rows) CHECK((r.bleu >= 0.0 && r.bleu <= 100.0));
  CHECK(rep.to_csv().rfind("composition,epochs,train_size,bleu\nbase,1,20,", 0) == 0);
}
