#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace stf {

enum class Variant {
  encoder_only_temporal,
  encoder_only_spatial,
  enc_dec_temporal_spatial,
  enc_dec_spatial_temporal,
};

enum class SpatialEmbedding { linear, cnn_original, cnn_enhanced };

/// Which arrangement of the ROI series a stream consumes: one token per time
/// frame, or one token per ROI.
enum class Perspective { temporal, spatial };

struct WindowConfig {
  std::size_t l_back = 20;
  std::size_t l_fwd = 20;
  /// Indices of the temporal stream's self-attention blocks that use the
  /// window mask.
  std::vector<std::size_t> applied_block_indices{0};

  bool operator==(const WindowConfig&) const = default;
};

struct RankConfig {
  std::size_t k = 60;
  bool applied = true;

  bool operator==(const RankConfig&) const = default;
};

struct CnnConfig {
  /// Output channels of each conv layer. Empty resolves to [32, 64, d_model]
  /// (original) or [32, 64, d_model, d_model] (enhanced).
  std::vector<std::size_t> channels;
  std::size_t kernel_size = 5;
  std::size_t pool = 2;

  bool operator==(const CnnConfig&) const = default;
};

struct ModelConfig {
  std::size_t T = 60;  // segment length
  std::size_t S = 190;  // ROI count
  std::size_t d_model = 256;
  std::size_t d_a = 256;
  std::size_t d_ff = 1024;
  std::size_t heads_encoder = 8;
  std::size_t heads_decoder = 4;
  std::size_t blocks_encoder = 2;
  std::size_t blocks_decoder = 2;
  double p_drop = 0.1;
  Variant variant = Variant::enc_dec_temporal_spatial;
  SpatialEmbedding spatial_embedding = SpatialEmbedding::cnn_enhanced;
  CnnConfig cnn;
  std::optional<WindowConfig> window = WindowConfig{};
  std::optional<RankConfig> rank = RankConfig{};
  std::size_t pheno_dim = 5;
  std::vector<std::size_t> classifier_sizes{256, 10, 1};

  bool operator==(const ModelConfig&) const = default;

  bool has_decoder() const;
  Perspective encoder_perspective() const;
  Perspective decoder_perspective() const;
  /// Self-attention blocks of the stream with the given perspective (the
  /// co-attention block is not counted). Zero if no stream has it.
  std::size_t self_attention_blocks(Perspective p) const;

  /// Copy with defaulted fields (CNN channels) made explicit.
  ModelConfig resolved() const;
  /// Every violated constraint, one message each; empty when valid.
  std::vector<std::string> validate() const;
  /// Throws ConfigError listing every violation.
  void check() const;
};

enum class CnnPool { avg, none, gap };

struct CnnLayerSpec {
  std::size_t out_channels = 0;
  std::size_t kernel_size = 5;
  CnnPool pool = CnnPool::avg;
};

/// Conv1D-GeLU-pool layers of the CNN spatial embedding; exactly one GAP, on
/// the last layer.
struct CnnEmbedSpec {
  std::vector<CnnLayerSpec> layers;
  std::size_t pool_window = 2;

  static CnnEmbedSpec from_config(const ModelConfig& config);
  std::size_t output_dim() const { return layers.back().out_channels; }
};

std::string to_string(Variant v);
std::string to_string(SpatialEmbedding e);
Variant parse_variant(const std::string& s);
SpatialEmbedding parse_spatial_embedding(const std::string& s);

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Reads a model config, collecting unknown keys and type errors into
/// `errors` (qualified by `prefix`) instead of throwing.
ModelConfig model_config_from_json(const nlohmann::json& j,
                                   std::vector<std::string>& errors,
                                   const std::string& prefix = "model");

}  // namespace stf
