#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "stformer/rng.hpp"
#include "stformer/tensor.hpp"

namespace stf {

/// Query x key matrix of additive penalties, each exactly 0 (attend) or
/// -inf (suppress). Every row keeps at least one 0.
struct AdditiveMask {
  enum class Kind { none, window, rank };

  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  Kind kind = Kind::none;

  bool allowed(std::size_t i, std::size_t j) const {
    return values[i * cols + j] == 0.0;
  }
  std::size_t allowed_in_row(std::size_t i) const;
};

/// Dense row-major score matrix of one head (query rows, key columns).
struct ScoreMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  bool scaled = false;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

/// Projections of one attention layer. w_q, w_k, w_v map d_model -> d_a and
/// w_o maps d_a -> d_model; d_a is split evenly across heads.
struct AttentionWeights {
  Tensor w_q;
  Tensor w_k;
  Tensor w_v;
  Tensor w_o;
  std::size_t heads = 1;

  std::size_t d_model() const { return w_q.dim(0); }
  std::size_t d_attn() const { return w_q.dim(1); }
  std::size_t head_dim() const { return d_attn() / heads; }
  /// Throws DimensionError on inconsistent shapes or heads not dividing d_a.
  void validate() const;
};

/// Local temporal band: query i attends keys in [i - l_back, i + l_fwd].
struct WindowStrategy {
  std::size_t l_back = 0;
  std::size_t l_fwd = 0;
};

/// Per-head, per-query top-k key selection on (dropout-perturbed) scores.
struct RankStrategy {
  std::size_t k = 1;
  double p_drop = 0.0;
};

using MaskStrategy = std::variant<std::monostate, WindowStrategy, RankStrategy>;

/// Post-softmax weights and raw scaled scores recorded during a forward pass.
class AttentionCapture {
 public:
  struct Entry {
    std::string layer;
    std::size_t head = 0;
    ScoreMatrix scores;   // scaled, pre-mask, pre-softmax
    ScoreMatrix weights;  // post-softmax
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

struct AttentionContext {
  Mode mode = Mode::eval;
  RngStream* rng = nullptr;  // required in train mode when masks use dropout
  AttentionCapture* capture = nullptr;
  std::string layer;
};

struct AttentionOutput {
  Tensor output;
  ScoreMatrix scores;
  Tensor weights;
};

/// softmax(Q K^T / sqrt(d_h) + mask) V. `scores` holds Q K^T / sqrt(d_h)
/// without the mask.
AttentionOutput scaled_dot_attention(const Tensor& q, const Tensor& k,
                                     const Tensor& v,
                                     const AdditiveMask* mask = nullptr);

/// Projects queries from `x_q_src` and keys/values from `x_kv_src`, runs
/// each head with the strategy's mask, concatenates heads in order and
/// applies w_o. Output is [Lq x d_model].
Tensor multi_head_attention(const Tensor& x_q_src, const Tensor& x_kv_src,
                            const AttentionWeights& w,
                            const MaskStrategy& strategy,
                            const AttentionContext& ctx);

Tensor self_attention_temporal(const Tensor& x, const AttentionWeights& w,
                               std::optional<WindowStrategy> window,
                               const AttentionContext& ctx);

Tensor self_attention_spatial(const Tensor& x, const AttentionWeights& w,
                              std::optional<RankStrategy> rank,
                              const AttentionContext& ctx);

/// Keys and values come from `main`, queries from `sub`; the output has
/// sub's length.
Tensor co_attention(const Tensor& main, const Tensor& sub,
                    const AttentionWeights& w, const AttentionContext& ctx);

/// Band mask, 0-indexed: i attends j iff
/// max(0, i - l_back) <= j <= min(T - 1, i + l_fwd).
AdditiveMask build_window_mask(std::size_t length, std::size_t l_back,
                               std::size_t l_fwd);

/// Keeps the k highest-scoring keys of every query row. In train mode the
/// selection is made on a dropout-perturbed copy of the scores (dropped
/// entries compete at 0); the attended scores themselves are untouched.
/// Ties go to the lower key index.
AdditiveMask roi_rank_mask(const ScoreMatrix& scores, std::size_t k,
                           double p_drop, Mode mode, RngStream* rng);

/// Writes every captured post-softmax matrix to `{layer}_{head}.tsv` in
/// `dir`, tab-separated with 17 significant digits. Returns written paths.
std::vector<std::filesystem::path> export_scores(
    const AttentionCapture& capture, const std::filesystem::path& dir);

/// Reads a matrix written by export_scores.
ScoreMatrix read_score_file(const std::filesystem::path& path);

}  // namespace stf
