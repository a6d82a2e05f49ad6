#include "stformer/attention.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "stformer/errors.hpp"
#include "stformer/ops.hpp"

namespace stf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

ScoreMatrix to_score_matrix(const Tensor& t, bool scaled) {
  return ScoreMatrix{t.dim(0), t.dim(1), t.to_vector(), scaled};
}

void check_width(const Tensor& x, std::size_t d_model, const char* what) {
  if (x.rank() != 2 || x.dim(1) != d_model) {
    throw DimensionError(std::string(what) + ": expected [L x " +
                         std::to_string(d_model) + "], got " +
                         shape_string(x.shape()));
  }
}

}  // namespace

std::size_t AdditiveMask::allowed_in_row(std::size_t i) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < cols; ++j) n += allowed(i, j) ? 1 : 0;
  return n;
}

void AttentionWeights::validate() const {
  for (const Tensor* t : {&w_q, &w_k, &w_v, &w_o}) {
    if (!t->defined() || t->rank() != 2) {
      throw DimensionError("attention weights must be four 2-D projections");
    }
  }
  if (w_k.shape() != w_q.shape() || w_v.shape() != w_q.shape()) {
    throw DimensionError("attention: w_q " + shape_string(w_q.shape()) +
                         ", w_k " + shape_string(w_k.shape()) + ", w_v " +
                         shape_string(w_v.shape()) + " must match");
  }
  if (w_o.dim(0) != w_q.dim(1) || w_o.dim(1) != w_q.dim(0)) {
    throw DimensionError("attention: w_o " + shape_string(w_o.shape()) +
                         " does not invert " + shape_string(w_q.shape()));
  }
  if (heads == 0 || d_attn() % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) +
                         " heads do not divide d_a = " +
                         std::to_string(d_attn()));
  }
}

AttentionOutput scaled_dot_attention(const Tensor& q, const Tensor& k,
                                     const Tensor& v,
                                     const AdditiveMask* mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 ||
      q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw DimensionError("scaled_dot_attention: Q " + shape_string(q.shape()) +
                         ", K " + shape_string(k.shape()) + ", V " +
                         shape_string(v.shape()));
  }
  if (mask && (mask->rows != q.dim(0) || mask->cols != k.dim(0))) {
    throw DimensionError("scaled_dot_attention: mask " +
                         std::to_string(mask->rows) + "x" +
                         std::to_string(mask->cols) + " for scores " +
                         std::to_string(q.dim(0)) + "x" +
                         std::to_string(k.dim(0)));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor scores = scale(matmul(q, transpose(k)), inv_scale);
  Tensor weights = mask ? softmax_rows(scores, mask->values)
                        : softmax_rows(scores);
  Tensor out = matmul(weights, v);
  return {out, to_score_matrix(scores, true), weights};
}

Tensor multi_head_attention(const Tensor& x_q_src, const Tensor& x_kv_src,
                            const AttentionWeights& w,
                            const MaskStrategy& strategy,
                            const AttentionContext& ctx) {
  w.validate();
  check_width(x_q_src, w.d_model(), "multi_head_attention query source");
  check_width(x_kv_src, w.d_model(), "multi_head_attention key/value source");
  const std::size_t lq = x_q_src.dim(0);
  const std::size_t lk = x_kv_src.dim(0);

  Tensor q = matmul(x_q_src, w.w_q);
  Tensor k = matmul(x_kv_src, w.w_k);
  Tensor v = matmul(x_kv_src, w.w_v);

  std::optional<AdditiveMask> shared_mask;
  if (const auto* win = std::get_if<WindowStrategy>(&strategy)) {
    if (lq != lk) {
      throw DimensionError("window mask needs equal query/key lengths, got " +
                           std::to_string(lq) + " and " + std::to_string(lk));
    }
    shared_mask = build_window_mask(lq, win->l_back, win->l_fwd);
  }
  const auto* rank = std::get_if<RankStrategy>(&strategy);

  const std::size_t dh = w.head_dim();
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(w.heads);
  for (std::size_t h = 0; h < w.heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    AttentionOutput res;
    if (rank) {
      // Mask built from this head's own scaled scores.
      const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
      Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
      ScoreMatrix sm = to_score_matrix(scores, true);
      AdditiveMask mask = roi_rank_mask(sm, rank->k, rank->p_drop, ctx.mode,
                                        ctx.rng);
      Tensor weights = softmax_rows(scores, mask.values);
      res = {matmul(weights, vh), std::move(sm), weights};
    } else {
      res = scaled_dot_attention(qh, kh, vh,
                                 shared_mask ? &*shared_mask : nullptr);
    }
    if (ctx.capture) {
      ctx.capture->record({ctx.layer, h, res.scores,
                           to_score_matrix(res.weights, false)});
    }
    head_outputs.push_back(res.output);
  }
  Tensor concat = w.heads == 1 ? head_outputs.front()
                               : concat_cols(head_outputs);
  return matmul(concat, w.w_o);
}

Tensor self_attention_temporal(const Tensor& x, const AttentionWeights& w,
                               std::optional<WindowStrategy> window,
                               const AttentionContext& ctx) {
  MaskStrategy s;
  if (window) s = *window;
  return multi_head_attention(x, x, w, s, ctx);
}

Tensor self_attention_spatial(const Tensor& x, const AttentionWeights& w,
                              std::optional<RankStrategy> rank,
                              const AttentionContext& ctx) {
  MaskStrategy s;
  if (rank) s = *rank;
  return multi_head_attention(x, x, w, s, ctx);
}

Tensor co_attention(const Tensor& main, const Tensor& sub,
                    const AttentionWeights& w, const AttentionContext& ctx) {
  return multi_head_attention(sub, main, w, std::monostate{}, ctx);
}

AdditiveMask build_window_mask(std::size_t length, std::size_t l_back,
                               std::size_t l_fwd) {
  if (length == 0) throw DimensionError("window mask: length must be >= 1");
  AdditiveMask mask{length, length,
                    std::vector<double>(length * length, kNegInf),
                    AdditiveMask::Kind::window};
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t lo = i >= l_back ? i - l_back : 0;
    const std::size_t hi = std::min(length - 1, i + l_fwd);
    for (std::size_t j = lo; j <= hi; ++j) mask.values[i * length + j] = 0.0;
  }
  return mask;
}

AdditiveMask roi_rank_mask(const ScoreMatrix& scores, std::size_t k,
                           double p_drop, Mode mode, RngStream* rng) {
  if (k < 1 || k > scores.cols) {
    throw ConfigError("rank mask: k = " + std::to_string(k) +
                      " outside [1, " + std::to_string(scores.cols) + "]");
  }
  if (!(p_drop >= 0.0 && p_drop < 1.0)) {
    throw ConfigError("rank mask: dropout rate must be in [0, 1)");
  }
  const bool perturb = mode == Mode::train && p_drop > 0.0;
  if (perturb && rng == nullptr) {
    throw std::invalid_argument("rank mask: train mode needs an rng stream");
  }
  const std::size_t rows = scores.rows, cols = scores.cols;
  AdditiveMask mask{rows, cols, std::vector<double>(rows * cols, kNegInf),
                    AdditiveMask::Kind::rank};
  const double keep_scale = perturb ? 1.0 / (1.0 - p_drop) : 1.0;
  std::vector<double> selection(cols);
  std::vector<std::size_t> order(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double s = scores.at(i, j);
      selection[j] = perturb && rng->uniform() < p_drop ? 0.0 : s * keep_scale;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        if (selection[a] != selection[b])
                          return selection[a] > selection[b];
                        return a < b;
                      });
    for (std::size_t r = 0; r < k; ++r) mask.values[i * cols + order[r]] = 0.0;
  }
  return mask;
}

std::vector<std::filesystem::path> export_scores(
    const AttentionCapture& capture, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& e : capture.entries()) {
    auto path = dir / (e.layer + "_" + std::to_string(e.head) + ".tsv");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write score file " + path.string());
    out << std::setprecision(17);
    const ScoreMatrix& m = e.weights;
    for (std::size_t i = 0; i < m.rows; ++i) {
      for (std::size_t j = 0; j < m.cols; ++j) {
        if (j) out << '\t';
        out << m.at(i, j);
      }
      out << '\n';
    }
    if (!out) throw DataError("failed writing score file " + path.string());
    written.push_back(path);
  }
  return written;
}

ScoreMatrix read_score_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open score file " + path.string());
  ScoreMatrix m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(row, cell, '\t')) {
      try {
        m.values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": bad value '" + cell + "'");
      }
      ++count;
    }
    if (m.rows == 0) m.cols = count;
    if (count != m.cols) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": ragged row");
    }
    ++m.rows;
  }
  return m;
}

}  // namespace stf
