#include "nmt/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "nmt/errors.hpp"

namespace nmt {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::int64_t to_int(const std::string& v) {
  std::int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::string real_str(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::filesystem::path resolve(const std::string& v, const std::filesystem::path& base) {
  std::filesystem::path p(v);
  return (p.is_relative() && !base.empty()) ? base / p : p;
}

#define NMT_INT_FIELD(name, member)                                                                     \
  Field {                                                                                               \
    name, [](RunConfig& c, const std::string& v, const std::filesystem::path&) { c.member = to_int(v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                                     \
  }
#define NMT_REAL_FIELD(name, member)                                                                     \
  Field {                                                                                                \
    name, [](RunConfig& c, const std::string& v, const std::filesystem::path&) { c.member = to_real(v); }, \
        [](const RunConfig& c) { return real_str(c.member); }                                            \
  }
#define NMT_PATH_FIELD(name, member)                                                                     \
  Field {                                                                                                \
    name, [](RunConfig& c, const std::string& v, const std::filesystem::path& base) { c.member = resolve(v, base); }, \
        [](const RunConfig& c) { return c.member.string(); }                                             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      NMT_INT_FIELD("d_model", model.d_model),
      NMT_INT_FIELD("n_heads", model.n_heads),
      NMT_INT_FIELD("n_encoder_layers", model.n_encoder_layers),
      NMT_INT_FIELD("n_decoder_layers", model.n_decoder_layers),
      NMT_INT_FIELD("max_seq_len", model.max_seq_len),
      NMT_INT_FIELD("expansion", model.expansion),
      Field{"attention_scale",
            [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
              c.model.attention_scale = attention_scale_from_string(v);
            },
            [](const RunConfig& c) { return to_string(c.model.attention_scale); }},
      NMT_REAL_FIELD("layer_norm_eps", model.layer_norm_eps),
      Field{"dropout",
            [](RunConfig& c, const std::string& v, const std::filesystem::path&) {
              c.train.dropout = c.model.dropout_p = to_real(v);
            },
            [](const RunConfig& c) { return real_str(c.train.dropout); }},
      NMT_INT_FIELD("epochs", train.epochs),
      NMT_REAL_FIELD("learning_rate", train.learning_rate),
      NMT_INT_FIELD("batch_size", train.batch_size),
      Field{"early_stopping",
            [](RunConfig& c, const std::string& v, const std::filesystem::path&) { c.train.early_stopping = to_bool(v); },
            [](const RunConfig& c) { return std::string(c.train.early_stopping ? "true" : "false"); }},
      NMT_INT_FIELD("patience", train.patience),
      Field{"seed",
            [](RunConfig& c, const std::string& v, const std::filesystem::path&) { c.train.seed = to_uint(v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      NMT_REAL_FIELD("beta1", train.beta1),
      NMT_REAL_FIELD("beta2", train.beta2),
      NMT_REAL_FIELD("eps", train.eps),
      NMT_REAL_FIELD("clip_norm", train.clip_norm),
      NMT_PATH_FIELD("train_src", train_src),
      NMT_PATH_FIELD("train_tgt", train_tgt),
      NMT_PATH_FIELD("valid_src", valid_src),
      NMT_PATH_FIELD("valid_tgt", valid_tgt),
      NMT_PATH_FIELD("src_vocab", src_vocab),
      NMT_PATH_FIELD("tgt_vocab", tgt_vocab),
      NMT_PATH_FIELD("general_src", general_src),
      NMT_PATH_FIELD("general_tgt", general_tgt),
      NMT_PATH_FIELD("checkpoint", checkpoint),
      NMT_PATH_FIELD("log", log),
      Field{"run_label", [](RunConfig& c, const std::string& v, const std::filesystem::path&) { c.run_label = v; },
            [](const RunConfig& c) { return c.run_label; }},
      NMT_INT_FIELD("min_freq", min_freq),
  };
  return table;
}

#undef NMT_INT_FIELD
#undef NMT_REAL_FIELD
#undef NMT_PATH_FIELD

void check_pair(const std::filesystem::path& a, const std::filesystem::path& b, const std::string& key_a,
                const std::string& key_b) {
  if (a.empty() != b.empty()) throw ConfigError(key_a + " and " + key_b + " must be given together");
}

}  // namespace

void RunConfig::validate() const {
  // Vocabulary sizes come from data; check the rest with placeholders.
  ModelConfig m = model;
  if (m.src_vocab_size < 1) m.src_vocab_size = kNumSpecials;
  if (m.tgt_vocab_size < 1) m.tgt_vocab_size = kNumSpecials;
  m.validate();
  train.validate();
  if (train_src.empty() || train_tgt.empty()) throw ConfigError("train_src and train_tgt are required");
  if (valid_src.empty() || valid_tgt.empty()) throw ConfigError("valid_src and valid_tgt are required");
  check_pair(src_vocab, tgt_vocab, "src_vocab", "tgt_vocab");
  check_pair(general_src, general_tgt, "general_src", "general_tgt");
  if (checkpoint.empty() || log.empty()) throw ConfigError("checkpoint and log paths must not be empty");
  if (min_freq < 1) throw ConfigError("min_freq must be at least 1");
  if (run_label.empty() || run_label.find_first_of(",\n") != std::string::npos) {
    throw ConfigError("run_label must be non-empty and free of commas");
  }
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": key '" + key + "' given twice");
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    try {
      it->set(c, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError(where + " (" + key + "): " + e.what());
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    const auto v = f.get(config);
    if (v.empty()) continue;
    out += f.key + " = " + v + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace nmt
