#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "oracles.hpp"
#include "stformer/attention.hpp"
#include "stformer/errors.hpp"
#include "stformer/gradcheck.hpp"
#include "stformer/ops.hpp"

using namespace stf;

namespace {

AttentionWeights random_weights(std::size_t d, std::size_t da, std::size_t heads,
                                RngStream& rng, bool requires_grad = false) {
  return {oracle::random_tensor({d, da}, rng, -1, 1, requires_grad),
          oracle::random_tensor({d, da}, rng, -1, 1, requires_grad),
          oracle::random_tensor({d, da}, rng, -1, 1, requires_grad),
          oracle::random_tensor({da, d}, rng, -1, 1, requires_grad), heads};
}

oracle::Vec oracle_mha(const Tensor& xq, const Tensor& xkv,
                       const AttentionWeights& w,
                       const std::function<bool(std::size_t, std::size_t, std::size_t)>& allowed,
                       std::vector<oracle::HeadTrace>* traces = nullptr) {
  return oracle::multi_head_attention(
      xq.to_vector(), xkv.to_vector(), xq.dim(0), xkv.dim(0), w.d_model(),
      w.w_q.to_vector(), w.w_k.to_vector(), w.w_v.to_vector(), w.w_o.to_vector(),
      w.d_attn(), w.heads, allowed, traces);
}

auto all_allowed = [](std::size_t, std::size_t, std::size_t) { return true; };

}  // namespace

TEST(Attention, MultiHeadMatchesOracle) {
  RngStream rng(20);
  for (std::size_t heads : {1u, 2u, 4u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t d = 4 + rng.uniform_index(5);
      const std::size_t da = heads * (1 + rng.uniform_index(3));
      const std::size_t lq = 1 + rng.uniform_index(6), lk = 1 + rng.uniform_index(6);
      auto w = random_weights(d, da, heads, rng);
      Tensor xq = oracle::random_tensor({lq, d}, rng);
      Tensor xkv = oracle::random_tensor({lk, d}, rng);
      Tensor y = multi_head_attention(xq, xkv, w, std::monostate{}, {});
      EXPECT_LT(oracle::max_abs_diff(y.to_vector(), oracle_mha(xq, xkv, w, all_allowed)),
                1e-10);
    }
  }
}

TEST(Attention, HeadsMustDivideWidth) {
  RngStream rng(21);
  auto w = random_weights(4, 6, 4, rng);
  EXPECT_THROW(multi_head_attention(Tensor::zeros({2, 4}), Tensor::zeros({2, 4}), w,
                                    std::monostate{}, {}),
               DimensionError);
}

TEST(WindowMask, BandFormula) {
  const auto m = build_window_mask(7, 2, 1);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      const bool in_band = j + 2 >= i && j <= i + 1;
      EXPECT_EQ(m.allowed(i, j), in_band) << i << "," << j;
      EXPECT_TRUE(m.values[i * 7 + j] == 0.0 ||
                  m.values[i * 7 + j] == -std::numeric_limits<double>::infinity());
    }
  EXPECT_EQ(m.allowed_in_row(0), 2u);
  EXPECT_EQ(m.allowed_in_row(3), 4u);
}

TEST(WindowMask, MatchesOracleWithMask) {
  RngStream rng(22);
  auto w = random_weights(6, 4, 2, rng);
  Tensor x = oracle::random_tensor({9, 6}, rng);
  Tensor y = self_attention_temporal(x, w, WindowStrategy{2, 3}, {});
  auto allowed = [](std::size_t, std::size_t i, std::size_t j) {
    return j + 2 >= i && j <= i + 3;
  };
  EXPECT_LT(oracle::max_abs_diff(y.to_vector(), oracle_mha(x, x, w, allowed)), 1e-10);
}

TEST(WindowMask, OutOfWindowKeysHaveNoInfluence) {
  RngStream rng(23);
  auto w = random_weights(5, 4, 2, rng);
  const std::size_t t = 10, l = 2;
  for (int trial = 0; trial < 30; ++trial) {
    Tensor x = oracle::random_tensor({t, 5}, rng);
    Tensor base = self_attention_temporal(x, w, WindowStrategy{l, l}, {});
    const std::size_t j = rng.uniform_index(t);
    auto v = x.to_vector();
    for (std::size_t c = 0; c < 5; ++c) v[j * 5 + c] += rng.uniform(0.5, 1.0);
    Tensor pert = self_attention_temporal(Tensor::from({t, 5}, v), w,
                                          WindowStrategy{l, l}, {});
    for (std::size_t i = 0; i < t; ++i) {
      double diff = 0.0;
      for (std::size_t c = 0; c < 5; ++c)
        diff = std::max(diff, std::abs(base.at(i, c) - pert.at(i, c)));
      const bool in_window = (i > j ? i - j : j - i) <= l;
      if (in_window) EXPECT_GT(diff, 1e-9) << "i=" << i << " j=" << j;
      else EXPECT_EQ(diff, 0.0) << "i=" << i << " j=" << j;
    }
  }
}

TEST(RankMask, ExactlyKSurvivorsWithLowIndexTies) {
  ScoreMatrix s{2, 5, {1, 3, 3, 0, 3, 5, 4, 3, 2, 1}, true};
  auto m = roi_rank_mask(s, 2, 0.0, Mode::eval, nullptr);
  EXPECT_EQ(m.allowed_in_row(0), 2u);
  EXPECT_TRUE(m.allowed(0, 1));
  EXPECT_TRUE(m.allowed(0, 2));
  EXPECT_FALSE(m.allowed(0, 4));
  EXPECT_TRUE(m.allowed(1, 0));
  EXPECT_TRUE(m.allowed(1, 1));
  EXPECT_THROW(roi_rank_mask(s, 0, 0.0, Mode::eval, nullptr), ConfigError);
  EXPECT_THROW(roi_rank_mask(s, 6, 0.0, Mode::eval, nullptr), ConfigError);
}

TEST(RankMask, TrainModeSelectsOnPerturbedScores) {
  RngStream rng(24);
  ScoreMatrix s{1, 50, {}, true};
  for (int j = 0; j < 50; ++j) s.values.push_back(50.0 - j);  // descending
  auto eval_mask = roi_rank_mask(s, 10, 0.5, Mode::eval, nullptr);
  auto train_mask = roi_rank_mask(s, 10, 0.5, Mode::train, &rng);
  EXPECT_EQ(train_mask.allowed_in_row(0), 10u);
  bool differs = false;
  for (std::size_t j = 0; j < 50; ++j)
    differs |= eval_mask.allowed(0, j) != train_mask.allowed(0, j);
  EXPECT_TRUE(differs);
}

TEST(RankMask, FullKEqualsUnmasked) {
  RngStream rng(25);
  auto w = random_weights(6, 4, 2, rng);
  Tensor x = oracle::random_tensor({7, 6}, rng);
  Tensor full = self_attention_spatial(x, w, RankStrategy{7, 0.1}, {});
  Tensor plain = self_attention_spatial(x, w, std::nullopt, {});
  EXPECT_LT(oracle::max_abs_diff(full.to_vector(), plain.to_vector()), 1e-12);
}

TEST(RankMask, KOneIsArgmaxAttention) {
  RngStream rng(26);
  auto w = random_weights(6, 4, 2, rng);
  Tensor x = oracle::random_tensor({7, 6}, rng);
  AttentionCapture cap;
  Tensor y = self_attention_spatial(x, w, RankStrategy{1, 0.1}, {Mode::eval, nullptr, &cap, "s"});
  ASSERT_EQ(cap.entries().size(), 2u);
  std::vector<oracle::HeadTrace> traces;
  oracle_mha(x, x, w, all_allowed, &traces);
  auto argmax_allowed = [&](std::size_t h, std::size_t i, std::size_t j) {
    const auto& sc = traces[h].scores;
    std::size_t best = 0;
    for (std::size_t c = 1; c < 7; ++c)
      if (sc[i * 7 + c] > sc[i * 7 + best]) best = c;
    return j == best;
  };
  const auto ref = oracle_mha(x, x, w, argmax_allowed);
  EXPECT_EQ(oracle::max_abs_diff(y.to_vector(), ref), 0.0);
  for (const auto& e : cap.entries())
    for (std::size_t i = 0; i < 7; ++i) {
      int ones = 0;
      for (std::size_t j = 0; j < 7; ++j) ones += e.weights.at(i, j) == 1.0;
      EXPECT_EQ(ones, 1);
    }
}

TEST(CoAttention, ShapeAndSources) {
  RngStream rng(27);
  auto w = random_weights(6, 4, 2, rng);
  Tensor main = oracle::random_tensor({5, 6}, rng);  // keys and values
  Tensor sub = oracle::random_tensor({3, 6}, rng);   // queries
  AttentionCapture cap;
  Tensor y = co_attention(main, sub, w, {Mode::eval, nullptr, &cap, "co"});
  EXPECT_EQ(y.shape(), (Shape{3, 6}));
  EXPECT_EQ(cap.entries()[0].weights.rows, 3u);
  EXPECT_EQ(cap.entries()[0].weights.cols, 5u);
  EXPECT_LT(oracle::max_abs_diff(y.to_vector(), oracle_mha(sub, main, w, all_allowed)),
            1e-10);
}

TEST(Capture, ScoresAreScaledPreSoftmax) {
  RngStream rng(28);
  auto w = random_weights(6, 4, 2, rng);
  Tensor x = oracle::random_tensor({4, 6}, rng);
  AttentionCapture cap;
  multi_head_attention(x, x, w, WindowStrategy{1, 1}, {Mode::eval, nullptr, &cap, "L"});
  std::vector<oracle::HeadTrace> traces;
  oracle_mha(x, x, w, [](std::size_t, std::size_t i, std::size_t j) {
    return j + 1 >= i && j <= i + 1;
  }, &traces);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_LT(oracle::max_abs_diff(cap.entries()[h].scores.values, traces[h].scores), 1e-12);
    EXPECT_LT(oracle::max_abs_diff(cap.entries()[h].weights.values, traces[h].weights), 1e-12);
  }
}

TEST(Export, WritesOneFilePerHeadAndRoundTrips) {
  RngStream rng(29);
  auto w = random_weights(6, 4, 2, rng);
  Tensor x = oracle::random_tensor({4, 6}, rng);
  AttentionCapture cap;
  multi_head_attention(x, x, w, std::monostate{}, {Mode::eval, nullptr, &cap, "enc"});
  const auto dir = std::filesystem::temp_directory_path() / "stf_export_test";
  std::filesystem::remove_all(dir);
  const auto files = export_scores(cap, dir);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[1].filename(), "enc_1.tsv");
  const auto back = read_score_file(files[1]);
  EXPECT_EQ(back.values, cap.entries()[1].weights.values);
  for (std::size_t i = 0; i < back.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < back.cols; ++j) s += back.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  std::filesystem::remove_all(dir);
}

TEST(GradCheck, AttentionWithMasks) {
  RngStream rng(30);
  auto w = random_weights(4, 4, 2, rng, true);
  Tensor x = oracle::random_tensor({5, 4}, rng, -1, 1, true);
  Tensor m = oracle::random_tensor({3, 4}, rng, -1, 1, true);
  std::vector<Tensor> params{x, m, w.w_q, w.w_k, w.w_v, w.w_o};
  auto probe = [](const Tensor& y) {
    RngStream r(1);
    return sum(mul(y, oracle::random_tensor(y.shape(), r)));
  };
  EXPECT_LT(gradient_check([&] { return probe(self_attention_temporal(x, w, WindowStrategy{1, 2}, {})); },
                           params, 1e-5),
            1e-5);
  EXPECT_LT(gradient_check([&] { return probe(self_attention_spatial(x, w, RankStrategy{2, 0.0}, {})); },
                           params, 1e-5),
            1e-5);
  EXPECT_LT(gradient_check([&] { return probe(co_attention(x, m, w, {})); }, params, 1e-5),
            1e-5);
}
