#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stformer/attention.hpp"
#include "stformer/model_config.hpp"
#include "stformer/rng.hpp"
#include "stformer/tensor.hpp"

namespace stf {

/// Named trainable arrays, ordered by name.
using ParameterSet = std::map<std::string, Tensor>;

struct ForwardContext {
  Mode mode = Mode::eval;
  RngStream* rng = nullptr;  // dropout and rank-mask selection in train mode
  AttentionCapture* capture = nullptr;
};

/// x [T x S] -> [T x d_model]: each time frame mapped by w [S x d_model].
Tensor temporal_embed(const Tensor& series, const Tensor& w, const Tensor& b);
/// x [T x S] -> [S x d_model]: each ROI's length-T course mapped by
/// w [T x d_model].
Tensor spatial_embed_linear(const Tensor& series, const Tensor& w,
                            const Tensor& b);
/// Runs every ROI column of `series` [T x S] as a one-channel sequence
/// through the conv stack with shared weights; returns [S x d_model].
Tensor spatial_embed_cnn(const Tensor& series, const CnnEmbedSpec& spec,
                         std::span<const Tensor> kernels,
                         std::span<const Tensor> biases);

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
Tensor sinusoidal_pe(std::size_t length, std::size_t d);

struct BlockParams {
  Tensor ln1_gamma, ln1_beta;
  AttentionWeights attn;
  Tensor ln2_gamma, ln2_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

/// Pre-LN block: X1 = X + drop(MHA(LN(X))), X2 = X1 + drop(FFN(LN(X1))).
/// With `memory` set, the attention is co-attention with keys and values
/// taken from `memory` and queries from LN(X).
Tensor transformer_block(const Tensor& x, const BlockParams& params,
                         const MaskStrategy& strategy, double p_drop,
                         const ForwardContext& ctx, const std::string& layer,
                         const Tensor* memory = nullptr);

/// Truncated normal for transformer weights: support +-2 sqrt(1/d_model)
/// and standard deviation sqrt(1/d_model). Classifier layers are He normal
/// except the last, which is Glorot uniform. Biases are zero, LayerNorm
/// gains one.
ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Underlying normal sigma that, truncated at +-bound, has unit std.
double truncated_normal_sigma_for_unit_std(double bound);

class Model {
 public:
  /// Validates the config and that `params` holds exactly the expected
  /// names and shapes.
  Model(ModelConfig config, ParameterSet params);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Probability of the positive class, shape [1].
  Tensor forward(const Tensor& segment, std::span<const double> pheno,
                 const ForwardContext& ctx) const;

  /// Embedding plus positional encoding of the encoder stream.
  Tensor encoder_input(const Tensor& segment) const;
  Tensor decoder_input(const Tensor& segment) const;
  Tensor run_encoder(const Tensor& x, const ForwardContext& ctx) const;
  Tensor run_decoder(const Tensor& y, const Tensor& memory,
                     const ForwardContext& ctx) const;
  /// GAP over tokens, concatenation with `pheno`, dense layers and sigmoid.
  Tensor classify(const Tensor& features, std::span<const double> pheno) const;

  /// Expected parameter names and shapes for a config.
  static std::map<std::string, Shape> parameter_shapes(const ModelConfig& c);

 private:
  Tensor embed(Perspective p, const std::string& stream,
               const Tensor& segment) const;
  BlockParams block(const std::string& prefix, std::size_t heads) const;
  const Tensor& param(const std::string& name) const;

  ModelConfig config_;
  ParameterSet params_;
  CnnEmbedSpec cnn_spec_;
};

}  // namespace stf
