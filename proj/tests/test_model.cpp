#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "stformer/errors.hpp"
#include "stformer/gradcheck.hpp"
#include "stformer/model.hpp"
#include "stformer/ops.hpp"

using namespace stf;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.T = 6;
  c.S = 4;
  c.d_model = 8;
  c.d_a = 8;
  c.d_ff = 16;
  c.heads_encoder = 2;
  c.heads_decoder = 2;
  c.blocks_encoder = 1;
  c.blocks_decoder = 1;
  c.window = WindowConfig{2, 2, {0}};
  c.rank = RankConfig{2, true};
  c.cnn.channels = {4, 6, 8, 8};
  return c;
}

std::vector<double> pheno5() { return {1.0, -0.3, 0.5, 0.2, 0.0}; }

BlockParams random_block(std::size_t d, std::size_t dff, std::size_t heads,
                         RngStream& rng, bool grad = false) {
  BlockParams p;
  p.ln1_gamma = oracle::random_tensor({d}, rng, 0.5, 1.5, grad);
  p.ln1_beta = oracle::random_tensor({d}, rng, -0.5, 0.5, grad);
  p.attn = {oracle::random_tensor({d, d}, rng, -0.5, 0.5, grad),
            oracle::random_tensor({d, d}, rng, -0.5, 0.5, grad),
            oracle::random_tensor({d, d}, rng, -0.5, 0.5, grad),
            oracle::random_tensor({d, d}, rng, -0.5, 0.5, grad), heads};
  p.ln2_gamma = oracle::random_tensor({d}, rng, 0.5, 1.5, grad);
  p.ln2_beta = oracle::random_tensor({d}, rng, -0.5, 0.5, grad);
  p.ffn_w1 = oracle::random_tensor({d, dff}, rng, -0.5, 0.5, grad);
  p.ffn_b1 = oracle::random_tensor({dff}, rng, -0.5, 0.5, grad);
  p.ffn_w2 = oracle::random_tensor({dff, d}, rng, -0.5, 0.5, grad);
  p.ffn_b2 = oracle::random_tensor({d}, rng, -0.5, 0.5, grad);
  return p;
}

double sample_std(std::span<const double> v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / v.size());
}

}  // namespace

TEST(Embedding, TemporalZeroIdentityAndOracle) {
  RngStream rng(1);
  Tensor x = oracle::random_tensor({5, 4}, rng);
  Tensor zero = temporal_embed(x, Tensor::zeros({4, 6}), Tensor::zeros({6}));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  EXPECT_EQ(temporal_embed(x, Tensor::from({4, 4}, eye), Tensor::zeros({4})).to_vector(),
            x.to_vector());
  Tensor w = oracle::random_tensor({4, 6}, rng);
  EXPECT_LT(oracle::max_abs_diff(temporal_embed(x, w, Tensor::zeros({6})).to_vector(),
                                 oracle::matmul(x.to_vector(), w.to_vector(), 5, 4, 6)),
            1e-14);
  EXPECT_THROW(temporal_embed(x, Tensor::zeros({5, 6}), Tensor::zeros({6})), DimensionError);
}

TEST(Embedding, SpatialLinearZeroIdentityAndOracle) {
  RngStream rng(2);
  Tensor x = oracle::random_tensor({5, 3}, rng);  // T=5, S=3
  Tensor zero = spatial_embed_linear(x, Tensor::zeros({5, 4}), Tensor::zeros({4}));
  EXPECT_EQ(zero.shape(), (Shape{3, 4}));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  std::vector<double> eye(25, 0.0);
  for (int i = 0; i < 5; ++i) eye[i * 6] = 1.0;
  EXPECT_EQ(spatial_embed_linear(x, Tensor::from({5, 5}, eye), Tensor::zeros({5})).to_vector(),
            transpose(x).to_vector());
  Tensor w = oracle::random_tensor({5, 4}, rng);
  // Column-wise oracle: ROI s maps x[:, s] through w.
  oracle::Vec ref(12, 0.0);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t t = 0; t < 5; ++t) ref[s * 4 + o] += x.at(t, s) * w.at(t, o);
  EXPECT_LT(oracle::max_abs_diff(spatial_embed_linear(x, w, Tensor::zeros({4})).to_vector(), ref),
            1e-14);
}

TEST(Embedding, CnnZeroSignalGivesZero) {
  ModelConfig c = tiny_config();
  c.T = 12;
  const auto spec = CnnEmbedSpec::from_config(c);
  RngStream rng(3);
  std::vector<Tensor> k, b;
  std::size_t in = 1;
  for (const auto& l : spec.layers) {
    k.push_back(oracle::random_tensor({l.out_channels, in, l.kernel_size}, rng));
    b.push_back(Tensor::zeros({l.out_channels}));
    in = l.out_channels;
  }
  Tensor y = spatial_embed_cnn(Tensor::zeros({12, 4}), spec, k, b);
  EXPECT_EQ(y.shape(), (Shape{4, 8}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Embedding, CnnDefaultShapeAtFullScale) {
  ModelConfig c;  // T=60, S=190, enhanced, d_model=256
  const auto spec = CnnEmbedSpec::from_config(c);
  ASSERT_EQ(spec.layers.size(), 4u);
  EXPECT_EQ(spec.layers[0].out_channels, 32u);
  EXPECT_EQ(spec.layers[1].out_channels, 64u);
  EXPECT_EQ(spec.layers[2].pool, CnnPool::none);
  EXPECT_EQ(spec.layers[3].pool, CnnPool::gap);
  EXPECT_EQ(spec.output_dim(), 256u);
  NoGradGuard guard;
  auto params = init_parameters(c, 0);
  std::vector<Tensor> k, b;
  for (std::size_t i = 0; i < 4; ++i) {
    k.push_back(params.at("decoder.embed.conv" + std::to_string(i) + ".w"));
    b.push_back(params.at("decoder.embed.conv" + std::to_string(i) + ".b"));
  }
  RngStream rng(4);
  Tensor y = spatial_embed_cnn(oracle::random_tensor({60, 190}, rng), spec, k, b);
  EXPECT_EQ(y.shape(), (Shape{190, 256}));
}

TEST(Embedding, CnnSingleRoiMatchesHandChain) {
  ModelConfig c = tiny_config();
  c.T = 13;
  c.S = 1;
  const auto spec = CnnEmbedSpec::from_config(c);
  RngStream rng(5);
  std::vector<Tensor> k, b;
  std::size_t in = 1;
  for (const auto& l : spec.layers) {
    k.push_back(oracle::random_tensor({l.out_channels, in, l.kernel_size}, rng));
    b.push_back(oracle::random_tensor({l.out_channels}, rng));
    in = l.out_channels;
  }
  Tensor x = oracle::random_tensor({13, 1}, rng, -2, 2);

  oracle::Vec h = x.to_vector();
  std::size_t ch = 1, len = 13;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    h = oracle::conv1d_same(h, ch, len, k[i].to_vector(), b[i].to_vector(),
                            l.out_channels, l.kernel_size);
    for (double& v : h) v = oracle::gelu(v);
    ch = l.out_channels;
    if (l.pool == CnnPool::avg) {
      const std::size_t out_len = len / 2;
      oracle::Vec p(ch * out_len);
      for (std::size_t c2 = 0; c2 < ch; ++c2)
        for (std::size_t t = 0; t < out_len; ++t)
          p[c2 * out_len + t] = 0.5 * (h[c2 * len + 2 * t] + h[c2 * len + 2 * t + 1]);
      h = p;
      len = out_len;
    } else if (l.pool == CnnPool::gap) {
      oracle::Vec p(ch, 0.0);
      for (std::size_t c2 = 0; c2 < ch; ++c2) {
        for (std::size_t t = 0; t < len; ++t) p[c2] += h[c2 * len + t];
        p[c2] /= static_cast<double>(len);
      }
      h = p;
    }
  }
  Tensor y = spatial_embed_cnn(x, spec, k, b);
  EXPECT_LT(oracle::max_abs_diff(y.to_vector(), h), 1e-10);
}

TEST(Embedding, CnnIsRoiPermutationEquivariant) {
  ModelConfig c = tiny_config();
  c.T = 10;
  c.S = 5;
  const auto spec = CnnEmbedSpec::from_config(c);
  RngStream rng(6);
  std::vector<Tensor> k, b;
  std::size_t in = 1;
  for (const auto& l : spec.layers) {
    k.push_back(oracle::random_tensor({l.out_channels, in, l.kernel_size}, rng));
    b.push_back(oracle::random_tensor({l.out_channels}, rng));
    in = l.out_channels;
  }
  Tensor x = oracle::random_tensor({10, 5}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<double> xp(50);
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t s = 0; s < 5; ++s) xp[t * 5 + s] = x.at(t, perm[s]);
  Tensor y = spatial_embed_cnn(x, spec, k, b);
  Tensor yp = spatial_embed_cnn(Tensor::from({10, 5}, xp), spec, k, b);
  for (std::size_t s = 0; s < 5; ++s)
    for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(yp.at(s, d), y.at(perm[s], d));
}

TEST(PositionalEncoding, Values) {
  Tensor pe = sinusoidal_pe(5, 6);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(pe.at(0, i), i % 2 ? 1.0 : 0.0);
  EXPECT_NEAR(pe.at(1, 0), 0.841471, 1e-6);
  EXPECT_DOUBLE_EQ(pe.at(3, 3), std::cos(3.0 / std::pow(10000.0, 2.0 / 6.0)));
  for (double v : sinusoidal_pe(50, 16).data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(sinusoidal_pe(4, 5), DimensionError);
}

TEST(Block, ZeroedProjectionsGiveExactIdentity) {
  RngStream rng(7);
  BlockParams p = random_block(8, 16, 2, rng);
  p.attn.w_o = Tensor::zeros({8, 8});
  p.ffn_w2 = Tensor::zeros({16, 8});
  p.ffn_b2 = Tensor::zeros({8});
  Tensor x = oracle::random_tensor({5, 8}, rng, -3, 3);
  RngStream drop(1);
  ForwardContext ctx{Mode::train, &drop, nullptr};
  EXPECT_EQ(transformer_block(x, p, std::monostate{}, 0.1, ctx, "b").to_vector(),
            x.to_vector());
}

TEST(Block, ShapePreservedAndGradientsCorrect) {
  RngStream rng(8);
  BlockParams p = random_block(8, 16, 2, rng, true);
  for (std::size_t len : {1u, 3u, 4u, 9u}) {
    Tensor x = oracle::random_tensor({len, 8}, rng);
    EXPECT_EQ(transformer_block(x, p, std::monostate{}, 0.0, {}, "b").shape(),
              (Shape{len, 8}));
  }
  Tensor x = oracle::random_tensor({4, 8}, rng, -1, 1, true);
  std::vector<Tensor> params{x, p.ln1_gamma, p.ln1_beta, p.attn.w_q, p.attn.w_k,
                             p.attn.w_v, p.attn.w_o, p.ln2_gamma, p.ln2_beta,
                             p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2};
  auto f = [&] {
    RngStream r(3);
    Tensor y = transformer_block(x, p, WindowStrategy{1, 1}, 0.0, {}, "b");
    return sum(mul(y, oracle::random_tensor(y.shape(), r)));
  };
  EXPECT_LT(gradient_check(f, params, 1e-5), 1e-5);
}

TEST(Block, WindowLocality) {
  RngStream rng(9);
  BlockParams p = random_block(6, 12, 2, rng);
  const std::size_t t = 12, l = 3;
  Tensor x = oracle::random_tensor({t, 6}, rng);
  Tensor base = transformer_block(x, p, WindowStrategy{l, l}, 0.0, {}, "b");
  for (std::size_t j = 0; j < t; ++j) {
    auto v = x.to_vector();
    v[j * 6 + 2] += 0.7;
    Tensor y = transformer_block(Tensor::from({t, 6}, v), p, WindowStrategy{l, l}, 0.0, {}, "b");
    for (std::size_t i = 0; i < t; ++i) {
      double diff = 0.0;
      for (std::size_t c = 0; c < 6; ++c) diff = std::max(diff, std::abs(y.at(i, c) - base.at(i, c)));
      if ((i > j ? i - j : j - i) > l) EXPECT_EQ(diff, 0.0) << i << " " << j;
      else EXPECT_GT(diff, 0.0) << i << " " << j;
    }
  }
}

TEST(Init, SigmaSolverGivesUnitTruncatedStd) {
  const double sigma = truncated_normal_sigma_for_unit_std(2.0);
  // Variance of N(0, sigma^2) restricted to [-2, 2], by Simpson quadrature.
  const int n = 20000;
  const double h = 4.0 / n;
  double mass = 0.0, second = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = -2.0 + i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double pdf = std::exp(-0.5 * x * x / (sigma * sigma));
    mass += w * pdf;
    second += w * x * x * pdf;
  }
  EXPECT_NEAR(second / mass, 1.0, 1e-10);
}

TEST(Init, TransformerWeightStatistics) {
  ModelConfig c;
  const auto params = init_parameters(c, 3);
  const auto w = params.at("encoder.block0.attn.w_q").data();
  ASSERT_EQ(w.size(), 256u * 256u);
  const double target = std::sqrt(1.0 / 256.0);
  EXPECT_NEAR(sample_std(w), target, 0.1 * target);
  for (const auto& [name, t] : params) {
    if (name.starts_with("head.")) continue;
    if (name.ends_with(".w") || name.find(".w_") != std::string::npos ||
        name.ends_with(".w1") || name.ends_with(".w2")) {
      for (double v : t.data()) ASSERT_LE(std::abs(v), 2.0 * target) << name;
    }
  }
}

TEST(Init, ClassifierBiasAndGainValues) {
  ModelConfig c = tiny_config();
  const auto params = init_parameters(c, 4);
  for (const auto& [name, t] : params) {
    if (name.ends_with(".gamma")) for (double v : t.data()) EXPECT_EQ(v, 1.0);
    if (name.ends_with(".beta") || name.ends_with(".b") || name.ends_with(".b1") ||
        name.ends_with(".b2"))
      for (double v : t.data()) EXPECT_EQ(v, 0.0);
  }
  const auto& last = params.at("head.fc2.w");
  const double limit = std::sqrt(6.0 / (10.0 + 1.0));
  for (double v : last.data()) EXPECT_LE(std::abs(v), limit);
  EXPECT_EQ(params.at("head.fc0.w").shape(), (Shape{8 + 5, 256}));
}

TEST(Init, HeNormalSpread) {
  ModelConfig c;
  const auto params = init_parameters(c, 5);
  const auto w = params.at("head.fc0.w").data();
  const double target = std::sqrt(2.0 / 261.0);
  EXPECT_NEAR(sample_std(w), target, 0.05 * target);
}

TEST(Init, Deterministic) {
  const auto a = init_parameters(tiny_config(), 11);
  const auto b = init_parameters(tiny_config(), 11);
  const auto c = init_parameters(tiny_config(), 12);
  bool any_diff = false;
  for (const auto& [name, t] : a) {
    EXPECT_EQ(t.to_vector(), b.at(name).to_vector()) << name;
    any_diff |= t.to_vector() != c.at(name).to_vector();
  }
  EXPECT_TRUE(any_diff);
}

TEST(ModelShapes, ParameterNamesPerVariant) {
  ModelConfig c;
  const auto shapes = Model::parameter_shapes(c);
  EXPECT_EQ(shapes.at("head.fc0.w"), (Shape{261, 256}));
  EXPECT_EQ(shapes.at("encoder.embed.w"), (Shape{190, 256}));
  EXPECT_TRUE(shapes.count("decoder.block1.attn.w_q"));
  c.variant = Variant::encoder_only_temporal;
  for (const auto& [name, s] : Model::parameter_shapes(c)) {
    EXPECT_FALSE(name.starts_with("decoder.")) << name;
  }
}

TEST(ModelShapes, StreamOutputShapes) {
  for (Variant v : {Variant::enc_dec_temporal_spatial, Variant::enc_dec_spatial_temporal}) {
    ModelConfig c = tiny_config();
    c.variant = v;
    c.blocks_decoder = 2;
    Model m(c, init_parameters(c, 1));
    RngStream rng(2);
    Tensor seg = oracle::random_tensor({6, 4}, rng);
    AttentionCapture cap;
    ForwardContext ctx{Mode::eval, nullptr, &cap};
    Tensor enc = m.run_encoder(m.encoder_input(seg), ctx);
    Tensor dec = m.run_decoder(m.decoder_input(seg), enc, ctx);
    const bool temporal_first = v == Variant::enc_dec_temporal_spatial;
    EXPECT_EQ(enc.shape(), (Shape{temporal_first ? 6u : 4u, 8}));
    EXPECT_EQ(dec.shape(), (Shape{temporal_first ? 4u : 6u, 8}));
    const auto& co = cap.entries().back();
    EXPECT_EQ(co.layer, "co_attention");
    EXPECT_EQ(co.weights.rows, dec.dim(0));
    EXPECT_EQ(co.weights.cols, enc.dim(0));
  }
}

TEST(ModelForward, ProbabilityAndDeterminism) {
  for (Variant v : {Variant::encoder_only_temporal, Variant::encoder_only_spatial,
                    Variant::enc_dec_temporal_spatial, Variant::enc_dec_spatial_temporal}) {
    for (SpatialEmbedding e : {SpatialEmbedding::linear, SpatialEmbedding::cnn_original,
                               SpatialEmbedding::cnn_enhanced}) {
      ModelConfig c = tiny_config();
      c.variant = v;
      c.spatial_embedding = e;
      c.cnn.channels = e == SpatialEmbedding::cnn_original ? std::vector<std::size_t>{4, 8}
                                                           : std::vector<std::size_t>{4, 6, 8, 8};
      Model m(c, init_parameters(c, 1));
      RngStream rng(3);
      Tensor seg = oracle::random_tensor({6, 4}, rng);
      const double p1 = m.forward(seg, pheno5(), {}).item();
      const double p2 = m.forward(seg, pheno5(), {}).item();
      EXPECT_GT(p1, 0.0);
      EXPECT_LT(p1, 1.0);
      EXPECT_EQ(p1, p2);
    }
  }
}

TEST(ModelForward, RejectsMismatchedInputs) {
  ModelConfig c = tiny_config();
  Model m(c, init_parameters(c, 1));
  EXPECT_THROW(m.forward(Tensor::zeros({6, 5}), pheno5(), {}), DimensionError);
  EXPECT_THROW(m.forward(Tensor::zeros({6, 4}), std::vector<double>{1.0}, {}), DimensionError);
  auto params = init_parameters(c, 1);
  params.erase("head.fc1.b");
  EXPECT_THROW(Model(c, params), DimensionError);
}

TEST(ModelForward, FullModelGradientsMatchCentralDifferences) {
  ModelConfig c = tiny_config();
  c.blocks_decoder = 2;  // one rank-masked self-attention block plus co-attention
  Model m(c, init_parameters(c, 2));
  RngStream rng(4);
  Tensor seg = oracle::random_tensor({6, 4}, rng);
  auto loss = [&] { return m.forward(seg, pheno5(), {}); };
  for (auto& [name, t] : m.params()) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss());
  // Bound per coordinate: 1e-4 relative plus 1e-10 absolute.
  const double eps = 1e-4;
  NoGradGuard guard;
  std::size_t checked = 0;
  for (auto& [name, t] : m.params()) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + eps;
      const double plus = loss().item();
      v[i] = saved - eps;
      const double minus = loss().item();
      v[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      ASSERT_LE(std::abs(numeric - analytic[i]), 1e-4 * std::abs(numeric) + 1e-10)
          << name << "[" << i << "] analytic " << analytic[i] << " numeric " << numeric;
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(Config, ValidationCatchesEveryViolation) {
  ModelConfig c;
  c.rank = RankConfig{191, true};
  c.heads_encoder = 7;
  c.window = WindowConfig{20, 20, {5}};
  const auto errors = c.validate();
  EXPECT_EQ(errors.size(), 3u);
  EXPECT_THROW(c.check(), ConfigError);

  ModelConfig small = tiny_config();
  small.T = 3;
  small.cnn.channels = {4, 6, 6, 8, 8};  // three halvings of length 3
  EXPECT_FALSE(small.validate().empty());
  small.T = 6;
  small.cnn.channels = {4, 6, 8, 8};
  EXPECT_TRUE(small.validate().empty());
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  ModelConfig c = tiny_config();
  c.variant = Variant::enc_dec_spatial_temporal;
  c.rank.reset();
  std::vector<std::string> errors;
  const auto back = model_config_from_json(model_config_to_json(c), errors);
  EXPECT_TRUE(errors.empty());
  EXPECT_EQ(back, c);

  auto j = model_config_to_json(c);
  j["d_modle"] = 3;
  j["window"]["l_bak"] = 1;
  j["heads_encoder"] = "two";
  model_config_from_json(j, errors);
  EXPECT_EQ(errors.size(), 3u);
}
