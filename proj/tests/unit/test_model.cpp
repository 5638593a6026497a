#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "nmt/model.hpp"
#include "support/gradcheck.hpp"

using namespace nmt;
using nmt::testing::grad_check;
using nmt::testing::random_tensor;

namespace {

ModelConfig tiny_config(Index d = 8, Index heads = 2, Index layers = 1) {
  ModelConfig cfg;
  cfg.d_model = d;
  cfg.n_heads = heads;
  cfg.n_encoder_layers = layers;
  cfg.n_decoder_layers = layers;
  cfg.max_seq_len = 16;
  cfg.expansion = 2;
  cfg.dropout_p = 0.0;
  cfg.src_vocab_size = 11;
  cfg.tgt_vocab_size = 9;
  return cfg;
}

TokenBatch random_batch(RandomSource& rng, Index batch, Index len, Index vocab, bool bos_first) {
  TokenBatch out{batch, len, IdSequence(static_cast<std::size_t>(batch * len))};
  for (auto& id : out.ids) id = static_cast<TokenId>(kNumSpecials + rng.uniform_index(vocab - kNumSpecials));
  if (bos_first) {
    for (Index b = 0; b < batch; ++b) out.ids[static_cast<std::size_t>(b * len)] = kBosId;
  }
  return out;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST_CASE("model config validation and parameter count") {
  ModelConfig defaults;
  CHECK(defaults.d_model == 512);
  CHECK(defaults.n_heads == 8);
  CHECK(defaults.head_dim() == 64);
  CHECK(defaults.n_encoder_layers == 3);
  CHECK(defaults.n_decoder_layers == 3);
  CHECK(defaults.max_seq_len == 100);
  CHECK(defaults.expansion == 4);
  CHECK(defaults.dropout_p == 0.1);

  auto bad = tiny_config();
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.expansion = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  // Full-size configuration with the reference vocabulary sizes.
  ModelConfig full;
  full.src_vocab_size = 137485;
  full.tgt_vocab_size = 56225;
  CHECK(parameter_count(full) == 150176161);

  RandomSource rng(1);
  Transformer<float> model(tiny_config(), rng);
  CHECK(model.parameter_count() == parameter_count(model.config()));
  CHECK(model.parameter_count() == 1905);
}

TEST_CASE("masks") {
  auto la = make_lookahead_mask(3);
  const std::vector<std::uint8_t> lower{1, 0, 0, 1, 1, 0, 1, 1, 1};
  CHECK(la.allowed == lower);
  CHECK_THROWS_AS(make_lookahead_mask(0), UsageError);

  auto pad = make_pad_mask(TokenBatch{1, 3, {5, 5, kPadId}});
  CHECK(pad.shape == Shape{1, 1, 1, 3});
  CHECK(pad.allowed == std::vector<std::uint8_t>{1, 1, 0});
  auto none = make_pad_mask(TokenBatch{2, 2, {5, 6, 7, 8}});
  CHECK(std::all_of(none.allowed.begin(), none.allowed.end(), [](auto v) { return v == 1; }));

  auto dec = make_decoder_self_mask(TokenBatch{1, 3, {kBosId, 7, kPadId}});
  CHECK(dec.shape == Shape{1, 1, 3, 3});
  CHECK(dec.at(0, 0, 2, 1));
  CHECK_FALSE(dec.at(0, 0, 2, 2));
  CHECK_FALSE(dec.at(0, 0, 0, 1));
}

TEST_CASE("scaled_dot_attention examples") {
  AttentionMask all({1, 1, 1, 2}, {1, 1});
  SUBCASE("hand-computed 2x2") {
    Tensor<double> q({1, 1, 2, 1}, {1, 0}), k({1, 1, 2, 1}, {1, 0}), v({1, 1, 2, 1}, {10, 20});
    auto r = scaled_dot_attention(q, k, v, all);
    const double w0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    CHECK(r.weights[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(r.weights[1] == doctest::Approx(0.2689).epsilon(1e-4));
    CHECK(r.output[0] == doctest::Approx(10 * w0 + 20 * (1 - w0)).epsilon(1e-12));
    CHECK(r.output[0] == doctest::Approx(12.689).epsilon(1e-4));
    CHECK(r.output[1] == doctest::Approx(15.0));
  }
  SUBCASE("uniform scores average the unmasked values") {
    RandomSource rng(2);
    auto q = Tensor<double>::zeros({1, 1, 3, 4});
    auto k = random_tensor({1, 1, 5, 4}, rng, false);
    auto v = random_tensor({1, 1, 5, 4}, rng, false);
    AttentionMask mask({1, 1, 1, 5}, {1, 0, 1, 1, 0});
    auto r = scaled_dot_attention(q, k, v, mask);
    for (int row = 0; row < 3; ++row)
      for (int j = 0; j < 4; ++j) {
        const double mean = (v[0 * 4 + j] + v[2 * 4 + j] + v[3 * 4 + j]) / 3.0;
        CHECK(r.output[row * 4 + j] == doctest::Approx(mean).epsilon(1e-12));
      }
  }
  SUBCASE("single unmasked key returns its value row exactly") {
    RandomSource rng(3);
    auto q = random_tensor({1, 1, 2, 3}, rng, false);
    auto k = random_tensor({1, 1, 4, 3}, rng, false);
    auto v = random_tensor({1, 1, 4, 3}, rng, false);
    AttentionMask mask({1, 1, 1, 4}, {0, 0, 1, 0});
    auto r = scaled_dot_attention(q, k, v, mask);
    for (int row = 0; row < 2; ++row)
      for (int j = 0; j < 3; ++j) CHECK(r.output[row * 3 + j] == v[2 * 3 + j]);
  }
  SUBCASE("fully masked row fails fast") {
    Tensor<double> q({1, 1, 1, 1}, {1}), k({1, 1, 2, 1}, {1, 2}), v({1, 1, 2, 1}, {1, 2});
    AttentionMask none({1, 1, 1, 2}, {0, 0});
    CHECK_THROWS_AS(scaled_dot_attention(q, k, v, none), NumericError);
  }
}

TEST_CASE("attention rows are convex combinations of unmasked values") {
  RandomSource rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = random_tensor({2, 2, 3, 4}, rng, false, -3, 3);
    auto k = random_tensor({2, 2, 5, 4}, rng, false, -3, 3);
    auto v = random_tensor({2, 2, 5, 4}, rng, false, -3, 3);
    std::vector<std::uint8_t> allow(10);
    for (int b = 0; b < 2; ++b) {
      for (int j = 0; j < 5; ++j) allow[b * 5 + j] = rng.uniform() < 0.6;
      allow[b * 5 + rng.uniform_index(5)] = 1;
    }
    AttentionMask mask({2, 1, 1, 5}, allow);
    auto r = scaled_dot_attention(q, k, v, mask);
    for (int b = 0; b < 2; ++b)
      for (int h = 0; h < 2; ++h)
        for (int row = 0; row < 3; ++row) {
          double total = 0;
          for (int j = 0; j < 5; ++j) {
            const double w = r.weights[((b * 2 + h) * 3 + row) * 5 + j];
            CHECK(w >= 0.0);
            if (!allow[b * 5 + j]) CHECK(w == 0.0);
            total += w;
          }
          CHECK(std::abs(total - 1.0) <= 1e-6);
          for (int d = 0; d < 4; ++d) {
            double lo = 1e300, hi = -1e300;
            for (int j = 0; j < 5; ++j) {
              if (!allow[b * 5 + j]) continue;
              lo = std::min(lo, v[((b * 2 + h) * 5 + j) * 4 + d]);
              hi = std::max(hi, v[((b * 2 + h) * 5 + j) * 4 + d]);
            }
            const double out = r.output[((b * 2 + h) * 3 + row) * 4 + d];
            CHECK(out >= lo - 1e-12);
            CHECK(out <= hi + 1e-12);
          }
        }
  }
}

TEST_CASE("multi-head attention matches an explicit per-head computation") {
  for (Index heads : {1, 2, 8}) {
    CAPTURE(heads);
    auto cfg = tiny_config(16, heads);
    RandomSource rng(5);
    Transformer<double> model(cfg, rng);
    const auto& w = model.encoder_layers()[0].self_attn;
    auto xq = random_tensor({2, 3, 16}, rng, false);
    auto xkv = random_tensor({2, 4, 16}, rng, false);
    AttentionMask mask({2, 1, 1, 4}, {1, 1, 0, 1, 1, 0, 0, 0});
    auto fused = multi_head_attention(w, xq, xkv, mask, cfg);
    REQUIRE(fused.shape() == Shape{2, 3, 16});

    // Head h uses columns [h*dk, (h+1)*dk) of each projection.
    const Index dk = 16 / heads;
    auto cols = [&](const Tensor<double>& m, Index h) {
      std::vector<double> out;
      for (Index r = 0; r < 16; ++r)
        for (Index c = 0; c < dk; ++c) out.push_back(m[r * 16 + h * dk + c]);
      return Tensor<double>({16, dk}, out);
    };
    std::vector<double> concat(2 * 3 * 16);
    for (Index h = 0; h < heads; ++h) {
      auto q = reshape(matmul(xq, cols(w.w_q, h)), {2, 1, 3, dk});
      auto k = reshape(matmul(xkv, cols(w.w_k, h)), {2, 1, 4, dk});
      auto v = reshape(matmul(xkv, cols(w.w_v, h)), {2, 1, 4, dk});
      auto o = scaled_dot_attention(q, k, v, mask, cfg.score_scale()).output;
      for (Index b = 0; b < 2; ++b)
        for (Index t = 0; t < 3; ++t)
          for (Index c = 0; c < dk; ++c) concat[static_cast<std::size_t>((b * 3 + t) * 16 + h * dk + c)] = o[(b * 3 + t) * dk + c];
    }
    auto manual = matmul(Tensor<double>({2, 3, 16}, concat), w.w_o);
    for (Index i = 0; i < manual.numel(); ++i) CHECK(fused[i] == doctest::Approx(manual[i]).epsilon(1e-12));
  }
}

TEST_CASE("multi-head attention ignores masked-out key rows") {
  auto cfg = tiny_config(8, 2);
  RandomSource rng(6);
  Transformer<float> model(cfg, rng);
  const auto& w = model.encoder_layers()[0].self_attn;
  auto xq = random_tensor<float>({1, 3, 8}, rng, false);
  auto xkv = random_tensor<float>({1, 5, 8}, rng, false);
  AttentionMask mask({1, 1, 1, 5}, {1, 0, 1, 0, 0});
  auto base = multi_head_attention(w, xq, xkv, mask, cfg);
  // Permute rows 1, 3, 4 (all masked) cyclically.
  std::vector<float> permuted(xkv.data().begin(), xkv.data().end());
  for (int j = 0; j < 8; ++j) {
    permuted[1 * 8 + j] = xkv[4 * 8 + j];
    permuted[3 * 8 + j] = xkv[1 * 8 + j];
    permuted[4 * 8 + j] = xkv[3 * 8 + j];
  }
  auto moved = multi_head_attention(w, xq, Tensor<float>({1, 5, 8}, permuted), mask, cfg);
  CHECK(max_abs_diff(base.data(), moved.data()) <= 1e-6);

  auto too_long = random_tensor<float>({1, 17, 8}, rng, false);
  AttentionMask wide({1, 1, 1, 17}, std::vector<std::uint8_t>(17, 1));
  CHECK_THROWS_AS(multi_head_attention(w, too_long, too_long, wide, cfg), InputError);
}

TEST_CASE("encoder layer") {
  auto cfg = tiny_config(8, 2);
  RandomSource rng(7);
  Transformer<double> model(cfg, rng);
  auto& layer = model.encoder_layers()[0];
  auto x = random_tensor({2, 4, 8}, rng, false, -2, 2);
  AttentionMask pad({2, 1, 1, 4}, {1, 1, 1, 0, 1, 1, 1, 1});
  auto y = encoder_layer(layer, x, pad, cfg, {});
  CHECK(y.shape() == x.shape());

  SUBCASE("pad position does not leak into other positions") {
    std::vector<double> edited(x.data().begin(), x.data().end());
    for (int j = 0; j < 8; ++j) edited[3 * 8 + j] += 5.0;  // batch 0, pad position 3
    auto y2 = encoder_layer(layer, Tensor<double>({2, 4, 8}, edited), pad, cfg, {});
    for (Index i = 0; i < y.numel(); ++i) {
      if (i / 8 == 3) continue;
      CHECK(std::abs(y[i] - y2[i]) <= 1e-12);
    }
  }
  SUBCASE("zero output weights reduce the layer to two layer norms") {
    std::fill(layer.self_attn.w_o.mutable_data().begin(), layer.self_attn.w_o.mutable_data().end(), 0.0);
    std::fill(layer.ffn.w2.mutable_data().begin(), layer.ffn.w2.mutable_data().end(), 0.0);
    auto z = encoder_layer(layer, x, pad, cfg, {});
    const auto eps = cfg.layer_norm_eps;
    auto expect = layer_norm(layer_norm(x, layer.norm1.gain, layer.norm1.bias, eps), layer.norm2.gain,
                             layer.norm2.bias, eps);
    for (Index i = 0; i < z.numel(); ++i) CHECK(z[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("decoder layer") {
  auto cfg = tiny_config(8, 2);
  RandomSource rng(8);
  Transformer<float> model(cfg, rng);
  const auto& layer = model.decoder_layers()[0];
  auto y = random_tensor<float>({2, 5, 8}, rng, false);
  auto mem = random_tensor<float>({2, 3, 8}, rng, false);
  auto self_mask = make_lookahead_mask(5);
  AttentionMask cross({2, 1, 1, 3}, {1, 1, 1, 1, 1, 0});
  auto out = decoder_layer(layer, y, mem, self_mask, cross, cfg, {});
  CHECK(out.shape() == y.shape());

  SUBCASE("causality") {
    for (Index j = 0; j < 5; ++j) {
      std::vector<float> edited(y.data().begin(), y.data().end());
      for (Index b = 0; b < 2; ++b)
        for (Index c = 0; c < 8; ++c) edited[static_cast<std::size_t>((b * 5 + j) * 8 + c)] += 3.0f;
      auto out2 = decoder_layer(layer, Tensor<float>({2, 5, 8}, edited), mem, self_mask, cross, cfg, {});
      for (Index b = 0; b < 2; ++b)
        for (Index t = 0; t < j; ++t)
          for (Index c = 0; c < 8; ++c) {
            const Index i = (b * 5 + t) * 8 + c;
            CHECK(std::abs(out[i] - out2[i]) <= 1e-6);
          }
    }
  }
  SUBCASE("single-state memory gives every position the same cross-attention value") {
    auto one = random_tensor<float>({1, 1, 8}, rng, false);
    AttentionMask single({1, 1, 1, 1}, {1});
    auto q = random_tensor<float>({1, 4, 8}, rng, false);
    auto attended = multi_head_attention(layer.cross_attn, q, one, single, cfg);
    auto expect = matmul(matmul(one, layer.cross_attn.w_v), layer.cross_attn.w_o);
    for (Index t = 0; t < 4; ++t)
      for (Index c = 0; c < 8; ++c) CHECK(attended[t * 8 + c] == doctest::Approx(expect[c]).epsilon(1e-5));
  }
}

TEST_CASE("forward pass contracts") {
  auto cfg = tiny_config(16, 4, 2);
  RandomSource rng(9);
  Transformer<float> model(cfg, rng);
  auto src = random_batch(rng, 3, 6, cfg.src_vocab_size, false);
  auto tgt = random_batch(rng, 3, 5, cfg.tgt_vocab_size, true);
  auto logits = model.forward(src, tgt);
  CHECK(logits.shape() == Shape{3, 5, cfg.tgt_vocab_size});

  SUBCASE("identical batch items give identical logits") {
    TokenBatch s2{2, 6, {}}, t2{2, 5, {}};
    for (int r = 0; r < 2; ++r) {
      s2.ids.insert(s2.ids.end(), src.ids.begin(), src.ids.begin() + 6);
      t2.ids.insert(t2.ids.end(), tgt.ids.begin(), tgt.ids.begin() + 5);
    }
    auto l2 = model.forward(s2, t2);
    const Index row = 5 * cfg.tgt_vocab_size;
    // GEMM remainder rows may round differently, so compare at float noise.
    for (Index i = 0; i < row; ++i) CHECK(std::abs(l2[i] - l2[row + i]) <= 1e-6);
  }
  SUBCASE("causality sweep over every decoder position") {
    for (Index j = 1; j < 5; ++j) {
      auto edited = tgt;
      for (Index b = 0; b < 3; ++b) {
        auto& id = edited.ids[static_cast<std::size_t>(b * 5 + j)];
        id = static_cast<TokenId>(kNumSpecials + (id - kNumSpecials + 1) % (cfg.tgt_vocab_size - kNumSpecials));
      }
      auto l2 = model.forward(src, edited);
      double worst = 0;
      for (Index b = 0; b < 3; ++b)
        for (Index t = 0; t < j; ++t)
          for (Index v = 0; v < cfg.tgt_vocab_size; ++v) {
            const Index i = (b * 5 + t) * cfg.tgt_vocab_size + v;
            worst = std::max(worst, double(std::abs(logits[i] - l2[i])));
          }
      CHECK(worst <= 1e-6);
    }
  }
  SUBCASE("overlong input is rejected") {
    auto long_src = random_batch(rng, 1, 17, cfg.src_vocab_size, false);
    auto short_tgt = random_batch(rng, 1, 3, cfg.tgt_vocab_size, true);
    CHECK_THROWS_AS(model.forward(long_src, short_tgt), InputError);
  }
}

TEST_CASE("appending source padding leaves logits unchanged") {
  auto cfg = tiny_config(16, 4, 2);
  RandomSource rng(10);
  Transformer<float> model(cfg, rng);
  auto src = random_batch(rng, 2, 5, cfg.src_vocab_size, false);
  auto tgt = random_batch(rng, 2, 4, cfg.tgt_vocab_size, true);
  auto base = model.forward(src, tgt);
  for (Index extra = 1; extra <= 8; ++extra) {
    TokenBatch padded{2, 5 + extra, {}};
    for (Index b = 0; b < 2; ++b) {
      auto row = src.row(b);
      padded.ids.insert(padded.ids.end(), row.begin(), row.end());
      padded.ids.insert(padded.ids.end(), static_cast<std::size_t>(extra), kPadId);
    }
    CHECK(max_abs_diff(base.data(), model.forward(padded, tgt).data()) <= 1e-5);
  }
}

TEST_CASE("every parameter receives gradient") {
  auto cfg = tiny_config(8, 2, 2);
  RandomSource rng(11);
  Transformer<float> model(cfg, rng);
  auto src = random_batch(rng, 3, 5, cfg.src_vocab_size, false);
  auto tgt = random_batch(rng, 3, 4, cfg.tgt_vocab_size, true);
  auto labels = random_batch(rng, 3, 4, cfg.tgt_vocab_size, false);
  auto logits = model.forward(src, tgt);
  cross_entropy(reshape(logits, {12, cfg.tgt_vocab_size}), std::span<const TokenId>(labels.ids), kPadId).backward();
  for (const auto& p : model.parameters()) {
    CAPTURE(p.name);
    const auto g = p.tensor.grad();
    CHECK(std::any_of(g.begin(), g.end(), [](float v) { return v != 0.0f; }));
    if (p.name.ends_with("_pos")) {
      // rows past the longest sequence in the batch stay untouched
      CHECK(std::all_of(g.begin() + 5 * cfg.d_model, g.end(), [](float v) { return v == 0.0f; }));
    }
  }
}

TEST_CASE("end-to-end micro transformer passes finite differences") {
  for (auto scale : {AttentionScale::kModelDim, AttentionScale::kHeadDim}) {
    auto cfg = tiny_config(8, 2, 1);
    cfg.max_seq_len = 6;
    cfg.src_vocab_size = 7;
    cfg.tgt_vocab_size = 6;
    cfg.attention_scale = scale;
    RandomSource rng(12);
    Transformer<double> model(cfg, rng);
    TokenBatch src{2, 4, {4, 5, 6, 2, 5, 4, 2, kPadId}};
    TokenBatch tgt{2, 3, {kBosId, 4, 5, kBosId, 5, kPadId}};
    const IdSequence labels{4, 5, kEosId, 5, kEosId, kPadId};
    std::vector<Tensor<double>> leaves;
    for (auto& p : model.parameters()) leaves.push_back(p.tensor);
    auto r = grad_check(
        [&] {
          auto logits = model.forward(src, tgt);
          return cross_entropy(reshape(logits, {6, cfg.tgt_vocab_size}), std::span<const TokenId>(labels), kPadId);
        },
        leaves);
    CAPTURE(r.worst);
    CHECK(r.checked == static_cast<std::size_t>(model.parameter_count()));
    CHECK(r.max_error <= 1e-4);
  }
}

TEST_CASE("snapshot and restore round-trip parameters") {
  RandomSource rng(13);
  Transformer<float> model(tiny_config(), rng);
  auto snap = model.snapshot();
  model.parameters()[0].tensor.mutable_data()[0] += 1.0f;
  model.restore(snap);
  CHECK(model.parameters()[0].tensor[0] == snap[0][0]);
}
