// nmt: preprocess -> build-vocab -> train -> translate -> evaluate -> report.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nmt/bleu.hpp"
#include "nmt/config.hpp"
#include "nmt/decode.hpp"
#include "nmt/errors.hpp"
#include "nmt/preprocess.hpp"
#include "nmt/training.hpp"
#include "nmt/vocab.hpp"

namespace fs = std::filesystem;
using namespace nmt;

namespace {

void require_input(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw InputError("input file not found: " + p.string());
}

void require_writable(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) throw UsageError("refusing to overwrite " + p.string() + " (pass --force)");
  if (p.has_parent_path() && !fs::exists(p.parent_path())) {
    throw InputError("output directory does not exist: " + p.parent_path().string());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
}

std::vector<Tokens> read_tokenized_lines(const fs::path& p) {
  std::vector<Tokens> out;
  for (const auto& line : read_lines(p)) {
    std::istringstream in(line);
    Tokens t;
    for (std::string w; in >> w;) t.push_back(w);
    out.push_back(std::move(t));
  }
  return out;
}

fs::path with_suffix(const std::string& prefix, const char* ext) { return fs::path(prefix + ext); }

// ---- preprocess ----

struct PreprocessArgs {
  std::string src, tgt, out;
  std::size_t valid = 1000, test = 1000;
  std::uint64_t seed = 1;
  CleanOptions clean;
  bool force = false;
};

int cmd_preprocess(const PreprocessArgs& a) {
  require_input(a.src);
  require_input(a.tgt);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  const std::vector<fs::path> outputs{dir / "train.src", dir / "train.tgt", dir / "valid.src",
                                      dir / "valid.tgt", dir / "test.src",  dir / "test.tgt",
                                      dir / "stats.tsv"};
  for (const auto& p : outputs) require_writable(p, a.force);

  const auto corpus = dedup(clean(preprocess_lines(read_lines(a.src), read_lines(a.tgt)), a.clean));
  const auto parts = split(corpus, {a.valid, a.test, a.seed});
  write_tokenized_corpus(parts.train, outputs[0], outputs[1]);
  write_tokenized_corpus(parts.valid, outputs[2], outputs[3]);
  write_tokenized_corpus(parts.test, outputs[4], outputs[5]);
  const std::vector<std::pair<std::string, std::int64_t>> stats{
      {"raw", corpus.stats.raw},
      {"preprocessed", corpus.stats.preprocessed},
      {"cleaned", corpus.stats.cleaned},
      {"unique", corpus.stats.unique},
      {"train", static_cast<std::int64_t>(parts.train.size())},
      {"valid", static_cast<std::int64_t>(parts.valid.size())},
      {"test", static_cast<std::int64_t>(parts.test.size())}};
  write_stats(outputs[6], stats);
  for (const auto& [k, v] : stats) std::cout << k << '\t' << v << '\n';
  return 0;
}

// ---- build-vocab ----

int cmd_build_vocab(const std::vector<std::string>& inputs, const std::string& output, std::int64_t min_freq,
                    bool force) {
  if (min_freq < 1) throw UsageError("--min-freq must be at least 1");
  for (const auto& p : inputs) require_input(p);
  require_writable(output, force);
  std::vector<Tokens> sentences;
  for (const auto& p : inputs) {
    auto part = read_tokenized_lines(p);
    sentences.insert(sentences.end(), part.begin(), part.end());
  }
  const auto vocab = Vocabulary::build(sentences, min_freq);
  vocab.save(output);
  std::cout << "vocabulary size " << vocab.size() << '\n';
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::optional<std::int64_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mix;
  std::optional<std::string> label;
  bool print_config = false;
  bool force = false;
};

int cmd_train(const TrainArgs& a) {
  auto cfg = load_config(a.config);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.label) cfg.run_label = *a.label;
  if (a.mix) {
    cfg.general_src = with_suffix(*a.mix, ".src");
    cfg.general_tgt = with_suffix(*a.mix, ".tgt");
  }
  cfg.validate();
  if (a.print_config) {
    std::cout << format_config(cfg);
    return 0;
  }
  for (const auto& p : {cfg.train_src, cfg.train_tgt, cfg.valid_src, cfg.valid_tgt}) require_input(p);
  if (!cfg.src_vocab.empty()) {
    require_input(cfg.src_vocab);
    require_input(cfg.tgt_vocab);
  }
  if (!cfg.general_src.empty()) {
    require_input(cfg.general_src);
    require_input(cfg.general_tgt);
  }
  require_writable(cfg.checkpoint, a.force);
  require_writable(cfg.log, a.force);

  auto train = read_tokenized_corpus(cfg.train_src, cfg.train_tgt, Origin::kInDomain);
  const auto valid = read_tokenized_corpus(cfg.valid_src, cfg.valid_tgt, Origin::kInDomain);
  if (!cfg.general_src.empty()) {
    train = mix(train, read_tokenized_corpus(cfg.general_src, cfg.general_tgt, Origin::kGeneralDomain),
                cfg.train.seed);
  }
  const auto src_vocab = cfg.src_vocab.empty() ? Vocabulary::build(source_side(train), cfg.min_freq)
                                               : Vocabulary::load(cfg.src_vocab);
  const auto tgt_vocab = cfg.tgt_vocab.empty() ? Vocabulary::build(target_side(train), cfg.min_freq)
                                               : Vocabulary::load(cfg.tgt_vocab);

  auto mcfg = cfg.model;
  mcfg.src_vocab_size = static_cast<Index>(src_vocab.size());
  mcfg.tgt_vocab_size = static_cast<Index>(tgt_vocab.size());
  RandomSource init(cfg.train.seed);
  Model model(mcfg, init);
  log_to_stderr("training on " + std::to_string(train.size()) + " pairs, vocabularies " +
                std::to_string(src_vocab.size()) + "/" + std::to_string(tgt_vocab.size()) + ", " +
                std::to_string(model.parameter_count()) + " parameters");

  Trainer trainer(model, cfg.train);
  const auto log = trainer.run({&train, &valid, &src_vocab, &tgt_vocab}, cfg.run_label);
  save_checkpoint(cfg.checkpoint, model, cfg.train, trainer.optimizer().state(),
                  static_cast<std::uint64_t>(log.best_epoch), src_vocab, tgt_vocab);
  write_train_log(cfg.log, log);
  return 0;
}

// ---- translate ----

int cmd_translate(const std::string& checkpoint, const std::string& input, const std::string& output,
                  std::optional<Index> max_len, std::size_t threads, bool force) {
  require_input(checkpoint);
  require_input(input);
  require_writable(output, force);
  const auto ckpt = load_checkpoint(checkpoint);
  const auto lines = read_lines(input);
  const auto out = translate_lines(ckpt.model, ckpt.src_vocab, ckpt.tgt_vocab, lines, {max_len, threads});
  write_lines(output, out);
  return 0;
}

// ---- evaluate ----

int cmd_evaluate(const std::string& candidate, const std::string& reference, int max_n, bool smooth) {
  require_input(candidate);
  require_input(reference);
  std::vector<Tokens> cands, refs;
  for (const auto& l : read_lines(candidate)) cands.push_back(preprocess_line(l));
  for (const auto& l : read_lines(reference)) refs.push_back(preprocess_line(l));
  if (cands.size() != refs.size()) {
    throw InputError("candidate has " + std::to_string(cands.size()) + " lines, reference has " +
                     std::to_string(refs.size()));
  }
  std::cout << format_report(bleu_corpus(cands, refs, {max_n, {}, smooth}));
  return 0;
}

// ---- report ----

int cmd_report(const std::vector<std::string>& logs, const std::string& output, bool force) {
  for (const auto& p : logs) require_input(p);
  if (!output.empty()) require_writable(output, force);
  std::vector<TrainLog> all;
  for (const auto& p : logs) {
    for (auto& l : read_train_logs(p)) {
      for (const auto& seen : all) {
        if (seen.run_label == l.run_label) throw InputError("run label '" + l.run_label + "' appears in two logs");
      }
      all.push_back(std::move(l));
    }
  }
  const auto merged = merge_train_logs(all);
  if (output.empty()) {
    std::cout << merged;
  } else {
    write_text(output, merged);
  }
  return 0;
}

// ---- experiment ----

struct ExperimentArgs {
  std::string config, base, general, valid, test, arms = "base:5,mixed:5", output, logs;
  std::size_t threads = 1;
  bool force = false;
};

std::vector<ExperimentArm> parse_arms(const std::string& text) {
  std::vector<ExperimentArm> arms;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw UsageError("arm '" + item + "' is not composition:epochs");
    const auto comp = item.substr(0, colon);
    ExperimentArm arm;
    if (comp == "base") {
      arm.composition = Composition::kBase;
    } else if (comp == "mixed") {
      arm.composition = Composition::kMixed;
    } else {
      throw UsageError("composition must be base or mixed, got '" + comp + "'");
    }
    try {
      arm.epochs = std::stoll(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw UsageError("bad epoch count in arm '" + item + "'");
    }
    if (arm.epochs < 1) throw UsageError("epochs must be positive in arm '" + item + "'");
    arms.push_back(arm);
  }
  if (arms.empty()) throw UsageError("no experiment arms given");
  return arms;
}

int cmd_experiment(const ExperimentArgs& a) {
  const auto arms = parse_arms(a.arms);
  const auto cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
  cfg.train.validate();
  for (const auto& prefix : {a.base, a.general, a.valid, a.test}) {
    require_input(with_suffix(prefix, ".src"));
    require_input(with_suffix(prefix, ".tgt"));
  }
  require_writable(a.output, a.force);
  if (!a.logs.empty()) require_writable(a.logs, a.force);

  auto read = [](const std::string& prefix, Origin o) {
    return read_tokenized_corpus(with_suffix(prefix, ".src"), with_suffix(prefix, ".tgt"), o);
  };
  ExperimentSetup setup;
  setup.model = cfg.model;
  setup.train = cfg.train;
  setup.min_freq = cfg.min_freq;
  setup.mix_seed = cfg.train.seed;
  setup.decode_threads = a.threads;
  const auto report = run_experiment(read(a.base, Origin::kInDomain), read(a.general, Origin::kGeneralDomain),
                                     read(a.valid, Origin::kInDomain), read(a.test, Origin::kInDomain), arms, setup);
  write_text(a.output, report.to_csv());
  if (!a.logs.empty()) write_text(a.logs, merge_train_logs(report.logs));
  std::cout << report.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer machine translation toolkit"};
  app.require_subcommand(1);
  int status = 0;

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "normalize, tokenize, clean, dedup and split a parallel corpus");
  p->add_option("--src", pre.src, "source-language text")->required();
  p->add_option("--tgt", pre.tgt, "target-language text")->required();
  p->add_option("--out", pre.out, "output directory")->required();
  p->add_option("--valid", pre.valid, "validation pairs")->capture_default_str();
  p->add_option("--test", pre.test, "test pairs")->capture_default_str();
  p->add_option("--seed", pre.seed, "split seed")->capture_default_str();
  p->add_option("--min-len", pre.clean.min_len, "minimum tokens per side")->capture_default_str();
  p->add_option("--max-len", pre.clean.max_len, "maximum tokens per side")->capture_default_str();
  p->add_option("--max-ratio", pre.clean.max_ratio, "maximum length ratio")->capture_default_str();
  p->add_flag("--force", pre.force, "overwrite outputs");
  p->callback([&] { status = cmd_preprocess(pre); });

  std::vector<std::string> vocab_inputs;
  std::string vocab_output;
  std::int64_t min_freq = 1;
  bool vocab_force = false;
  auto* v = app.add_subcommand("build-vocab", "build a token<TAB>frequency vocabulary from tokenized text");
  v->add_option("--input", vocab_inputs, "tokenized text files")->required();
  v->add_option("--output", vocab_output, "vocabulary file")->required();
  v->add_option("--min-freq", min_freq, "minimum token frequency")->capture_default_str();
  v->add_flag("--force", vocab_force, "overwrite output");
  v->callback([&] { status = cmd_build_vocab(vocab_inputs, vocab_output, min_freq, vocab_force); });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model from a key = value config");
  t->add_option("--config", tr.config, "run configuration")->required();
  t->add_option("--epochs", tr.epochs, "override epochs");
  t->add_option("--seed", tr.seed, "override seed");
  t->add_option("--mix", tr.mix, "general-domain corpus prefix (PREFIX.src / PREFIX.tgt)");
  t->add_option("--label", tr.label, "run label for the loss log");
  t->add_flag("--print-config", tr.print_config, "print the resolved configuration and exit");
  t->add_flag("--force", tr.force, "overwrite checkpoint and log");
  t->callback([&] { status = cmd_train(tr); });

  std::string ckpt, tin, tout;
  std::optional<Index> max_len;
  std::size_t threads = 1;
  bool tforce = false;
  auto* x = app.add_subcommand("translate", "greedy-decode one sentence per line");
  x->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  x->add_option("--input", tin, "source text")->required();
  x->add_option("--output", tout, "translations")->required();
  x->add_option("--max-len", max_len, "maximum output tokens");
  x->add_option("--threads", threads, "decoding threads")->capture_default_str()->check(CLI::PositiveNumber);
  x->add_flag("--force", tforce, "overwrite output");
  x->callback([&] { status = cmd_translate(ckpt, tin, tout, max_len, threads, tforce); });

  std::string cand, ref;
  int max_n = 4;
  bool smooth = false;
  auto* e = app.add_subcommand("evaluate", "corpus BLEU of a candidate file against a reference file");
  e->add_option("--candidate", cand, "system output")->required();
  e->add_option("--reference", ref, "reference translations")->required();
  e->add_option("--max-n", max_n, "maximum n-gram order")->capture_default_str()->check(CLI::PositiveNumber);
  e->add_flag("--smooth", smooth, "add-one smoothing for orders >= 2");
  e->callback([&] { status = cmd_evaluate(cand, ref, max_n, smooth); });

  std::vector<std::string> logs;
  std::string report_out;
  bool rforce = false;
  auto* r = app.add_subcommand("report", "merge training-loss CSV logs for plotting");
  r->add_option("logs", logs, "train log CSV files")->required();
  r->add_option("--output", report_out, "merged CSV (stdout when omitted)");
  r->add_flag("--force", rforce, "overwrite output");
  r->callback([&] { status = cmd_report(logs, report_out, rforce); });

  ExperimentArgs ex;
  auto* m = app.add_subcommand("experiment", "base vs mixed training arms scored on a shared test set");
  m->add_option("--config", ex.config, "model and training settings");
  m->add_option("--base", ex.base, "in-domain training prefix")->required();
  m->add_option("--general", ex.general, "general-domain prefix")->required();
  m->add_option("--valid", ex.valid, "validation prefix")->required();
  m->add_option("--test", ex.test, "test prefix")->required();
  m->add_option("--arms", ex.arms, "comma list of composition:epochs")->capture_default_str();
  m->add_option("--output", ex.output, "report CSV")->required();
  m->add_option("--logs", ex.logs, "merged train logs CSV");
  m->add_option("--threads", ex.threads, "decoding threads")->capture_default_str()->check(CLI::PositiveNumber);
  m->add_flag("--force", ex.force, "overwrite outputs");
  m->callback([&] { status = cmd_experiment(ex); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return status;
}
