#include "stformer/model.hpp"

#include <cmath>
#include <numbers>

#include "stformer/errors.hpp"
#include "stformer/ops.hpp"

namespace stf {

namespace {

const char* stream_name(bool encoder) { return encoder ? "encoder" : "decoder"; }

std::string block_prefix(const std::string& stream, std::size_t b) {
  return stream + ".block" + std::to_string(b);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace

Tensor temporal_embed(const Tensor& series, const Tensor& w, const Tensor& b) {
  if (series.rank() != 2 || w.rank() != 2 || series.dim(1) != w.dim(0)) {
    throw DimensionError("temporal_embed: series " +
                         shape_string(series.shape()) + " vs weight " +
                         shape_string(w.shape()));
  }
  return linear(series, w, b);
}

Tensor spatial_embed_linear(const Tensor& series, const Tensor& w,
                            const Tensor& b) {
  if (series.rank() != 2 || w.rank() != 2 || series.dim(0) != w.dim(0)) {
    throw DimensionError("spatial_embed_linear: series " +
                         shape_string(series.shape()) + " vs weight " +
                         shape_string(w.shape()));
  }
  return linear(transpose(series), w, b);
}

Tensor spatial_embed_cnn(const Tensor& series, const CnnEmbedSpec& spec,
                         std::span<const Tensor> kernels,
                         std::span<const Tensor> biases) {
  if (series.rank() != 2) {
    throw DimensionError("spatial_embed_cnn: series must be [T x S], got " +
                         shape_string(series.shape()));
  }
  if (kernels.size() != spec.layers.size() ||
      biases.size() != spec.layers.size()) {
    throw DimensionError("spatial_embed_cnn: parameter count does not match "
                         "the layer spec");
  }
  const std::size_t t = series.dim(0), s = series.dim(1);
  Tensor h = reshape(transpose(series), {s, 1, t});
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    h = gelu(conv1d(h, kernels[i], biases[i], 1, Padding::same));
    switch (layer.pool) {
      case CnnPool::avg:
        if (spec.pool_window > h.dim(2)) {
          throw DimensionError("spatial_embed_cnn: sequence of length " +
                               std::to_string(h.dim(2)) +
                               " pooled away at layer " + std::to_string(i));
        }
        h = avg_pool1d(h, spec.pool_window, spec.pool_window);
        break;
      case CnnPool::none:
        break;
      case CnnPool::gap:
        h = global_avg_pool(h, 2);
        break;
    }
  }
  return h;
}

Tensor sinusoidal_pe(std::size_t length, std::size_t d) {
  if (d % 2 != 0) {
    throw DimensionError("sinusoidal_pe: dimension must be even, got " +
                         std::to_string(d));
  }
  std::vector<double> pe(length * d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe[pos * d + 2 * i] = std::sin(angle);
      pe[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({length, d}, std::move(pe));
}

Tensor transformer_block(const Tensor& x, const BlockParams& p,
                         const MaskStrategy& strategy, double p_drop,
                         const ForwardContext& ctx, const std::string& layer,
                         const Tensor* memory) {
  AttentionContext actx{ctx.mode, ctx.rng, ctx.capture, layer};
  Tensor h = layer_norm(x, p.ln1_gamma, p.ln1_beta);
  Tensor attn = memory ? co_attention(*memory, h, p.attn, actx)
                       : multi_head_attention(h, h, p.attn, strategy, actx);
  Tensor x1 = add(x, dropout(attn, p_drop, ctx.mode, ctx.rng));
  Tensor h2 = layer_norm(x1, p.ln2_gamma, p.ln2_beta);
  Tensor ff = linear(gelu(linear(h2, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
  return add(x1, dropout(ff, p_drop, ctx.mode, ctx.rng));
}

double truncated_normal_sigma_for_unit_std(double bound) {
  // For Z ~ N(0, 1) truncated to [-c, c], Var = 1 - 2 c phi(c) / (2 Phi(c) - 1).
  // Find c with Var(c) / c^2 = 1 / bound^2; then sigma = bound / c.
  auto ratio = [](double c) {
    const double phi = std::exp(-0.5 * c * c) * 0.5 * std::numbers::inv_sqrtpi *
                       std::numbers::sqrt2;
    const double mass = std::erf(c / std::numbers::sqrt2);
    return (1.0 - 2.0 * c * phi / mass) / (c * c);
  };
  const double target = 1.0 / (bound * bound);
  double lo = 1e-3, hi = 50.0;  // ratio decreases from 1/3 towards 0
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (ratio(mid) > target) lo = mid; else hi = mid;
  }
  return bound / (0.5 * (lo + hi));
}

std::map<std::string, Shape> Model::parameter_shapes(const ModelConfig& config) {
  const ModelConfig c = config.resolved();
  std::map<std::string, Shape> shapes;
  auto add_embed = [&](Perspective p, const std::string& stream) {
    if (p == Perspective::temporal) {
      shapes[stream + ".embed.w"] = {c.S, c.d_model};
      shapes[stream + ".embed.b"] = {c.d_model};
    } else if (c.spatial_embedding == SpatialEmbedding::linear) {
      shapes[stream + ".embed.w"] = {c.T, c.d_model};
      shapes[stream + ".embed.b"] = {c.d_model};
    } else {
      std::size_t in = 1;
      const auto spec = CnnEmbedSpec::from_config(c);
      for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const std::string n = stream + ".embed.conv" + std::to_string(i);
        shapes[n + ".w"] = {l.out_channels, in, l.kernel_size};
        shapes[n + ".b"] = {l.out_channels};
        in = l.out_channels;
      }
    }
  };
  auto add_block = [&](const std::string& prefix) {
    shapes[prefix + ".ln1.gamma"] = {c.d_model};
    shapes[prefix + ".ln1.beta"] = {c.d_model};
    for (const char* w : {"w_q", "w_k", "w_v"})
      shapes[prefix + ".attn." + w] = {c.d_model, c.d_a};
    shapes[prefix + ".attn.w_o"] = {c.d_a, c.d_model};
    shapes[prefix + ".ln2.gamma"] = {c.d_model};
    shapes[prefix + ".ln2.beta"] = {c.d_model};
    shapes[prefix + ".ffn.w1"] = {c.d_model, c.d_ff};
    shapes[prefix + ".ffn.b1"] = {c.d_ff};
    shapes[prefix + ".ffn.w2"] = {c.d_ff, c.d_model};
    shapes[prefix + ".ffn.b2"] = {c.d_model};
  };
  add_embed(c.encoder_perspective(), "encoder");
  for (std::size_t b = 0; b < c.blocks_encoder; ++b)
    add_block(block_prefix("encoder", b));
  if (c.has_decoder()) {
    add_embed(c.decoder_perspective(), "decoder");
    for (std::size_t b = 0; b < c.blocks_decoder; ++b)
      add_block(block_prefix("decoder", b));
  }
  std::size_t in = c.d_model + c.pheno_dim;
  for (std::size_t i = 0; i < c.classifier_sizes.size(); ++i) {
    const std::string n = "head.fc" + std::to_string(i);
    shapes[n + ".w"] = {in, c.classifier_sizes[i]};
    shapes[n + ".b"] = {c.classifier_sizes[i]};
    in = c.classifier_sizes[i];
  }
  return shapes;
}

ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.check();
  RngStream rng = RngStream::named(seed, "init");
  const double std_t = std::sqrt(1.0 / static_cast<double>(config.d_model));
  const double sigma_t = truncated_normal_sigma_for_unit_std(2.0) * std_t;
  const double clip_t = 2.0 * std_t / sigma_t;  // in units of sigma_t
  const std::size_t n_head = config.classifier_sizes.size();

  ParameterSet params;
  // std::map iteration gives a fixed draw order.
  for (const auto& [name, shape] : Model::parameter_shapes(config)) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> v(n, 0.0);
    const bool is_gain = name.ends_with(".gamma");
    const bool is_bias = name.ends_with(".b") || name.ends_with(".beta") ||
                         name.ends_with(".b1") || name.ends_with(".b2");
    if (is_gain) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (is_bias) {
      // zero
    } else if (name.starts_with("head.fc")) {
      const std::size_t idx = std::stoul(name.substr(7));
      const double fan_in = static_cast<double>(shape[0]);
      const double fan_out = static_cast<double>(shape[1]);
      if (idx + 1 < n_head) {
        const double he = std::sqrt(2.0 / fan_in);
        for (double& x : v) x = rng.normal(0.0, he);
      } else {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& x : v) x = rng.uniform(-limit, limit);
      }
    } else {
      for (double& x : v) x = rng.truncated_normal(0.0, sigma_t, clip_t);
    }
    params.emplace(name, Tensor::from(shape, std::move(v), true));
  }
  return params;
}

Model::Model(ModelConfig config, ParameterSet params)
    : config_(config.resolved()), params_(std::move(params)) {
  config_.check();
  const auto expected = parameter_shapes(config_);
  for (const auto& [name, shape] : expected) {
    auto it = params_.find(name);
    if (it == params_.end()) {
      throw DimensionError("model: missing parameter " + name);
    }
    if (it->second.shape() != shape) {
      throw DimensionError("model: parameter " + name + " has shape " +
                           shape_string(it->second.shape()) + ", expected " +
                           shape_string(shape));
    }
  }
  for (const auto& [name, t] : params_) {
    if (!expected.count(name)) {
      throw DimensionError("model: unexpected parameter " + name);
    }
  }
  cnn_spec_ = CnnEmbedSpec::from_config(config_);
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DimensionError("model: no parameter " + name);
  return it->second;
}

BlockParams Model::block(const std::string& prefix, std::size_t heads) const {
  BlockParams p;
  p.ln1_gamma = param(prefix + ".ln1.gamma");
  p.ln1_beta = param(prefix + ".ln1.beta");
  p.attn = AttentionWeights{param(prefix + ".attn.w_q"),
                            param(prefix + ".attn.w_k"),
                            param(prefix + ".attn.w_v"),
                            param(prefix + ".attn.w_o"), heads};
  p.ln2_gamma = param(prefix + ".ln2.gamma");
  p.ln2_beta = param(prefix + ".ln2.beta");
  p.ffn_w1 = param(prefix + ".ffn.w1");
  p.ffn_b1 = param(prefix + ".ffn.b1");
  p.ffn_w2 = param(prefix + ".ffn.w2");
  p.ffn_b2 = param(prefix + ".ffn.b2");
  return p;
}

Tensor Model::embed(Perspective p, const std::string& stream,
                    const Tensor& segment) const {
  if (segment.rank() != 2 || segment.dim(0) != config_.T ||
      segment.dim(1) != config_.S) {
    throw DimensionError("model: segment " + shape_string(segment.shape()) +
                         " does not match config [" + std::to_string(config_.T) +
                         "x" + std::to_string(config_.S) + "]");
  }
  Tensor e;
  std::size_t length = 0;
  if (p == Perspective::temporal) {
    e = temporal_embed(segment, param(stream + ".embed.w"),
                       param(stream + ".embed.b"));
    length = config_.T;
  } else {
    if (config_.spatial_embedding == SpatialEmbedding::linear) {
      e = spatial_embed_linear(segment, param(stream + ".embed.w"),
                               param(stream + ".embed.b"));
    } else {
      std::vector<Tensor> kernels, biases;
      for (std::size_t i = 0; i < cnn_spec_.layers.size(); ++i) {
        const std::string n = stream + ".embed.conv" + std::to_string(i);
        kernels.push_back(param(n + ".w"));
        biases.push_back(param(n + ".b"));
      }
      e = spatial_embed_cnn(segment, cnn_spec_, kernels, biases);
    }
    length = config_.S;
  }
  return add(e, sinusoidal_pe(length, config_.d_model));
}

Tensor Model::encoder_input(const Tensor& segment) const {
  return embed(config_.encoder_perspective(), "encoder", segment);
}

Tensor Model::decoder_input(const Tensor& segment) const {
  if (!config_.has_decoder()) {
    throw std::logic_error("model: variant " + to_string(config_.variant) +
                           " has no decoder");
  }
  return embed(config_.decoder_perspective(), "decoder", segment);
}

namespace {

MaskStrategy strategy_for(const ModelConfig& c, Perspective p,
                          std::size_t block_index) {
  if (p == Perspective::temporal && c.window) {
    const auto& idx = c.window->applied_block_indices;
    if (std::find(idx.begin(), idx.end(), block_index) != idx.end()) {
      return WindowStrategy{c.window->l_back, c.window->l_fwd};
    }
  }
  if (p == Perspective::spatial && c.rank && c.rank->applied) {
    return RankStrategy{c.rank->k, c.p_drop};
  }
  return std::monostate{};
}

}  // namespace

Tensor Model::run_encoder(const Tensor& x, const ForwardContext& ctx) const {
  const Perspective p = config_.encoder_perspective();
  Tensor h = x;
  for (std::size_t b = 0; b < config_.blocks_encoder; ++b) {
    const std::string prefix = block_prefix(stream_name(true), b);
    h = transformer_block(h, block(prefix, config_.heads_encoder),
                          strategy_for(config_, p, b), config_.p_drop, ctx,
                          "encoder" + std::to_string(b));
  }
  return h;
}

Tensor Model::run_decoder(const Tensor& y, const Tensor& memory,
                          const ForwardContext& ctx) const {
  const Perspective p = config_.decoder_perspective();
  Tensor h = y;
  const std::size_t n = config_.blocks_decoder;
  for (std::size_t b = 0; b < n; ++b) {
    const std::string prefix = block_prefix(stream_name(false), b);
    const BlockParams params = block(prefix, config_.heads_decoder);
    if (b + 1 < n) {
      h = transformer_block(h, params, strategy_for(config_, p, b),
                            config_.p_drop, ctx, "decoder" + std::to_string(b));
    } else {
      h = transformer_block(h, params, std::monostate{}, config_.p_drop, ctx,
                            "co_attention", &memory);
    }
  }
  return h;
}

Tensor Model::classify(const Tensor& features,
                       std::span<const double> pheno) const {
  if (pheno.size() != config_.pheno_dim) {
    throw DimensionError("model: phenotype vector has " +
                         std::to_string(pheno.size()) + " entries, expected " +
                         std::to_string(config_.pheno_dim));
  }
  Tensor pooled = global_avg_pool(features, 0);
  Tensor h = pooled;
  if (!pheno.empty()) {
    std::vector<Tensor> parts{
        pooled, Tensor::from({pheno.size()}, {pheno.begin(), pheno.end()})};
    h = concat_flat(parts);
  }
  h = reshape(h, {1, h.numel()});
  const std::size_t n = config_.classifier_sizes.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = "head.fc" + std::to_string(i);
    h = linear(h, param(name + ".w"), param(name + ".b"));
    if (i + 1 < n) h = gelu(h);
  }
  return reshape(sigmoid(h), {1});
}

Tensor Model::forward(const Tensor& segment, std::span<const double> pheno,
                      const ForwardContext& ctx) const {
  Tensor enc = run_encoder(encoder_input(segment), ctx);
  if (!config_.has_decoder()) return classify(enc, pheno);
  Tensor dec = run_decoder(decoder_input(segment), enc, ctx);
  return classify(dec, pheno);
}

}  // namespace stf
