#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nmt/config.hpp"
#include "nmt/errors.hpp"

using namespace nmt;

TEST_CASE("defaults mirror the reference hyperparameters") {
  const RunConfig c;
  CHECK(c.model.d_model == 512);
  CHECK(c.model.n_heads == 8);
  CHECK(c.model.n_encoder_layers == 3);
  CHECK(c.model.n_decoder_layers == 3);
  CHECK(c.model.max_seq_len == 100);
  CHECK(c.model.expansion == 4);
  CHECK(c.model.dropout_p == 0.1);
  CHECK(c.train.learning_rate == 5e-4);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.dropout == 0.1);
  CHECK(c.train.early_stopping);
  CHECK(c.model.attention_scale == AttentionScale::kModelDim);
}

TEST_CASE("parse values, comments and path resolution") {
  const auto c = parse_config(
      "# toy run\n"
      "d_model = 64   # narrow\n"
      "n_heads=4\n"
      "dropout = 0.25\n"
      "early_stopping = false\n"
      "attention_scale = head\n"
      "seed = 42\n"
      "train_src = data/train.src\n"
      "train_tgt = /abs/train.tgt\n",
      "/cfg");
  CHECK(c.model.d_model == 64);
  CHECK(c.model.n_heads == 4);
  CHECK(c.model.dropout_p == 0.25);
  CHECK(c.train.dropout == 0.25);
  CHECK_FALSE(c.train.early_stopping);
  CHECK(c.model.attention_scale == AttentionScale::kHeadDim);
  CHECK(c.train.seed == 42);
  CHECK(c.train_src == std::filesystem::path("/cfg/data/train.src"));
  CHECK(c.train_tgt == std::filesystem::path("/abs/train.tgt"));
}

TEST_CASE("rejects unknown keys and malformed values") {
  CHECK_THROWS_AS(parse_config("d_modell = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("d_model 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("d_model = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("d_model = 3\nd_model = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("early_stopping = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("attention_scale = sqrt\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs =\n"), ConfigError);
  try {
    parse_config("\n\nbogus = 1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("validate") {
  auto c = parse_config("train_src = a\ntrain_tgt = b\nvalid_src = c\nvalid_tgt = d\n");
  CHECK_NOTHROW(c.validate());
  c.general_src = "g";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.general_tgt = "h";
  CHECK_NOTHROW(c.validate());
  c.model.n_heads = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig{}.validate(), ConfigError);
}

TEST_CASE("format round trip and file loading") {
  auto c = parse_config("d_model = 32\nlearning_rate = 0.001\ntrain_src = /x/a.src\nrun_label = mixed\n");
  const auto again = parse_config(format_config(c));
  CHECK(again.model == c.model);
  CHECK(again.train == c.train);
  CHECK(again.train_src == c.train_src);
  CHECK(again.run_label == "mixed");
  CHECK(config_keys().size() == 31);

  const auto dir = std::filesystem::temp_directory_path() / "nmt_test_config";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "run.cfg");
    out << "train_src = corpus/train.src\n";
  }
  CHECK(load_config(dir / "run.cfg").train_src == dir / "corpus/train.src");
  CHECK_THROWS_AS(load_config(dir / "missing.cfg"), InputError);
  std::filesystem::remove_all(dir);
}
