#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nmt/errors.hpp"
#include "nmt/training.hpp"

namespace nmt {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'R', 'X'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void count(std::size_t n) {
    if (n > UINT32_MAX) throw UsageError("checkpoint field too large");
    u32(static_cast<std::uint32_t>(n));
  }
  void bytes(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void floats(std::span<const float> data) {
    u64(data.size());
    for (float f : data) f32(f);
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes() {
    const auto n = u64();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats() {
    const auto n = u64();
    need(n * 4);
    std::vector<float> out(n);
    for (auto& f : out) f = f32();
    return out;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(origin_ + ": " + what); }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) fail("truncated checkpoint");
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

void write_model_config(Writer& w, const ModelConfig& c) {
  for (Index v : {c.d_model, c.n_heads, c.n_encoder_layers, c.n_decoder_layers, c.max_seq_len, c.expansion,
                  c.src_vocab_size, c.tgt_vocab_size}) {
    w.count(static_cast<std::size_t>(v));
  }
  w.u32(static_cast<std::uint32_t>(std::lround(c.dropout_p * 1e6)));
  w.u32(c.attention_scale == AttentionScale::kModelDim ? 0 : 1);
  w.f64(c.layer_norm_eps);
}

ModelConfig read_model_config(Reader& r) {
  ModelConfig c;
  c.d_model = r.u32();
  c.n_heads = r.u32();
  c.n_encoder_layers = r.u32();
  c.n_decoder_layers = r.u32();
  c.max_seq_len = r.u32();
  c.expansion = r.u32();
  c.src_vocab_size = r.u32();
  c.tgt_vocab_size = r.u32();
  c.dropout_p = r.u32() / 1e6;
  const auto scale = r.u32();
  if (scale > 1) r.fail("unknown attention scale code " + std::to_string(scale));
  c.attention_scale = scale == 0 ? AttentionScale::kModelDim : AttentionScale::kHeadDim;
  c.layer_norm_eps = r.f64();
  return c;
}

void write_train_config(Writer& w, const TrainConfig& c) {
  w.i64(c.epochs);
  w.f64(c.learning_rate);
  w.i64(c.batch_size);
  w.f64(c.dropout);
  w.u8(c.early_stopping ? 1 : 0);
  w.i64(c.patience);
  w.u64(c.seed);
  w.f64(c.beta1);
  w.f64(c.beta2);
  w.f64(c.eps);
  w.f64(c.clip_norm);
}

TrainConfig read_train_config(Reader& r) {
  TrainConfig c;
  c.epochs = r.i64();
  c.learning_rate = r.f64();
  c.batch_size = r.i64();
  c.dropout = r.f64();
  c.early_stopping = r.u8() != 0;
  c.patience = r.i64();
  c.seed = r.u64();
  c.beta1 = r.f64();
  c.beta2 = r.f64();
  c.eps = r.f64();
  c.clip_norm = r.f64();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainConfig& train_config,
                     const AdamState& optimizer, std::uint64_t epoch, const Vocabulary& src_vocab,
                     const Vocabulary& tgt_vocab) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kVersion);
  write_model_config(w, model.config());

  const auto& params = model.parameters();
  w.count(params.size());
  for (const auto& p : params) {
    w.count(p.name.size());
    for (char c : p.name) w.u8(static_cast<std::uint8_t>(c));
    w.count(static_cast<std::size_t>(p.tensor.rank()));
    for (Index d : p.tensor.shape()) w.count(static_cast<std::size_t>(d));
    for (float f : p.tensor.data()) w.f32(f);
  }

  w.u64(optimizer.step);
  w.count(optimizer.m.size());
  for (std::size_t i = 0; i < optimizer.m.size(); ++i) {
    w.floats(optimizer.m[i]);
    w.floats(optimizer.v[i]);
  }
  w.u64(epoch);
  write_train_config(w, train_config);
  w.bytes(src_vocab.to_string());
  w.bytes(tgt_vocab.to_string());

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp);
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw InputError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}), path.string());

  if (r.raw(4) != std::string_view(kMagic, 4)) r.fail("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  const auto cfg = read_model_config(r);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }

  Model model(cfg);
  auto& params = model.parameters();
  const auto n_params = r.u32();
  if (n_params != params.size()) {
    r.fail("expected " + std::to_string(params.size()) + " parameters, found " + std::to_string(n_params));
  }
  for (auto& p : params) {
    const auto name = r.raw(r.u32());
    if (name != p.name) r.fail("expected parameter " + p.name + ", found " + name);
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != p.tensor.shape()) {
      r.fail("parameter " + name + " has shape " + shape_str(shape) + ", expected " + shape_str(p.tensor.shape()));
    }
    for (auto& f : p.tensor.mutable_data()) f = r.f32();
  }

  AdamState state;
  state.step = r.u64();
  const auto n_state = r.u32();
  if (n_state != 0 && n_state != params.size()) r.fail("optimizer state does not match the parameter list");
  for (std::uint32_t i = 0; i < n_state; ++i) {
    state.m.push_back(r.floats());
    state.v.push_back(r.floats());
    if (state.m.back().size() != static_cast<std::size_t>(params[i].tensor.numel()) ||
        state.v.back().size() != state.m.back().size()) {
      r.fail("optimizer moments for " + params[i].name + " have the wrong size");
    }
  }
  const auto epoch = r.u64();
  const auto train_cfg = read_train_config(r);
  auto src_vocab = Vocabulary::from_string(r.bytes());
  auto tgt_vocab = Vocabulary::from_string(r.bytes());
  if (!r.at_end()) r.fail("trailing bytes after checkpoint");

  if (static_cast<Index>(src_vocab.size()) != cfg.src_vocab_size ||
      static_cast<Index>(tgt_vocab.size()) != cfg.tgt_vocab_size) {
    throw ConfigError(path.string() + ": vocabulary sizes " + std::to_string(src_vocab.size()) + "/" +
                      std::to_string(tgt_vocab.size()) + " do not match the model's " +
                      std::to_string(cfg.src_vocab_size) + "/" + std::to_string(cfg.tgt_vocab_size));
  }
  return {std::move(model), train_cfg, std::move(state), epoch, std::move(src_vocab), std::move(tgt_vocab)};
}

}  // namespace nmt
