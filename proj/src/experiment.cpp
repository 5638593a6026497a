#include <cstdio>

#include "nmt/bleu.hpp"
#include "nmt/decode.hpp"
#include "nmt/errors.hpp"
#include "nmt/training.hpp"

namespace nmt {

std::string to_string(Composition c) { return c == Composition::kBase ? "base" : "mixed"; }

std::string ExperimentReport::to_csv() const {
  std::string out = "composition,epochs,train_size,bleu\n";
  for (const auto& r : rows) {
    char bleu[32];
    std::snprintf(bleu, sizeof bleu, "%.2f", r.bleu);
    out += to_string(r.composition) + ',' + std::to_string(r.epochs) + ',' + std::to_string(r.train_size) + ',' +
           bleu + '\n';
  }
  return out;
}

ExperimentReport run_experiment(const ParallelCorpus& base, const ParallelCorpus& general, const ParallelCorpus& valid,
                                const ParallelCorpus& test, const std::vector<ExperimentArm>& arms,
                                const ExperimentSetup& setup, const LogSink& log) {
  if (arms.empty()) throw UsageError("experiment needs at least one arm");
  if (test.empty() || valid.empty()) throw UsageError("experiment needs non-empty valid and test sets");

  ExperimentReport report;
  report.valid_size = valid.size();
  report.test_size = test.size();
  const auto references = target_side(test);
  const auto sources = source_side(test);

  for (const auto& arm : arms) {
    const auto train_set = arm.composition == Composition::kBase ? base : mix(base, general, setup.mix_seed);
    const auto src_vocab = Vocabulary::build(source_side(train_set), setup.min_freq);
    const auto tgt_vocab = Vocabulary::build(target_side(train_set), setup.min_freq);

    ModelConfig mcfg = setup.model;
    mcfg.src_vocab_size = static_cast<Index>(src_vocab.size());
    mcfg.tgt_vocab_size = static_cast<Index>(tgt_vocab.size());
    TrainConfig tcfg = setup.train;
    tcfg.epochs = arm.epochs;
    RandomSource init(tcfg.seed);
    Model model(mcfg, init);

    const auto label = to_string(arm.composition) + "-" + std::to_string(arm.epochs);
    Trainer trainer(model, tcfg, log);
    auto train_log = trainer.run({&train_set, &valid, &src_vocab, &tgt_vocab}, label);

    const auto outputs = translate_tokens(model, src_vocab, tgt_vocab, sources, {std::nullopt, setup.decode_threads}, log);
    const auto bleu = bleu_corpus(outputs, references);
    report.rows.push_back({arm.composition, arm.epochs, train_set.size(), bleu.bleu * 100.0});
    report.logs.push_back(std::move(train_log));
  }
  return report;
}

}  // namespace nmt
