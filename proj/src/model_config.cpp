#include "stformer/model_config.hpp"

#include <algorithm>

#include "stformer/errors.hpp"
#include "stformer/json_fields.hpp"

namespace stf {

bool ModelConfig::has_decoder() const {
  return variant == Variant::enc_dec_temporal_spatial ||
         variant == Variant::enc_dec_spatial_temporal;
}

Perspective ModelConfig::encoder_perspective() const {
  switch (variant) {
    case Variant::encoder_only_temporal:
    case Variant::enc_dec_temporal_spatial:
      return Perspective::temporal;
    case Variant::encoder_only_spatial:
    case Variant::enc_dec_spatial_temporal:
      return Perspective::spatial;
  }
  return Perspective::temporal;
}

Perspective ModelConfig::decoder_perspective() const {
  return encoder_perspective() == Perspective::temporal ? Perspective::spatial
                                                        : Perspective::temporal;
}

std::size_t ModelConfig::self_attention_blocks(Perspective p) const {
  if (encoder_perspective() == p) return blocks_encoder;
  if (has_decoder() && decoder_perspective() == p) {
    return blocks_decoder > 0 ? blocks_decoder - 1 : 0;
  }
  return 0;
}

ModelConfig ModelConfig::resolved() const {
  ModelConfig out = *this;
  if (out.cnn.channels.empty()) {
    if (spatial_embedding == SpatialEmbedding::cnn_original) {
      out.cnn.channels = {32, 64, d_model};
    } else if (spatial_embedding == SpatialEmbedding::cnn_enhanced) {
      out.cnn.channels = {32, 64, d_model, d_model};
    }
  }
  return out;
}

namespace {

bool uses_spatial_stream(const ModelConfig& c) {
  return c.has_decoder() || c.variant == Variant::encoder_only_spatial;
}

}  // namespace

std::vector<std::string> ModelConfig::validate() const {
  std::vector<std::string> errors;
  auto positive = [&](std::size_t v, const char* name) {
    if (v == 0) errors.push_back(std::string("model.") + name + " must be >= 1");
  };
  positive(T, "T");
  positive(S, "S");
  positive(d_model, "d_model");
  positive(d_a, "d_a");
  positive(d_ff, "d_ff");
  positive(heads_encoder, "heads_encoder");
  positive(blocks_encoder, "blocks_encoder");
  if (has_decoder()) {
    positive(heads_decoder, "heads_decoder");
    positive(blocks_decoder, "blocks_decoder");
  }
  if (d_model % 2 != 0) {
    errors.push_back("model.d_model must be even for sinusoidal encoding");
  }
  if (heads_encoder && d_a % heads_encoder != 0) {
    errors.push_back("model.heads_encoder = " + std::to_string(heads_encoder) +
                     " does not divide d_a = " + std::to_string(d_a));
  }
  if (has_decoder() && heads_decoder && d_a % heads_decoder != 0) {
    errors.push_back("model.heads_decoder = " + std::to_string(heads_decoder) +
                     " does not divide d_a = " + std::to_string(d_a));
  }
  if (!(p_drop >= 0.0 && p_drop < 1.0)) {
    errors.push_back("model.p_drop must be in [0, 1)");
  }
  if (classifier_sizes.empty() || classifier_sizes.back() != 1) {
    errors.push_back("model.classifier_sizes must end with 1");
  }
  if (std::find(classifier_sizes.begin(), classifier_sizes.end(), 0u) !=
      classifier_sizes.end()) {
    errors.push_back("model.classifier_sizes entries must be >= 1");
  }

  if (window) {
    const std::size_t n = self_attention_blocks(Perspective::temporal);
    for (std::size_t idx : window->applied_block_indices) {
      if (n > 0 && idx >= n) {
        errors.push_back("model.window.applied_block_indices: " +
                         std::to_string(idx) + " is not one of the " +
                         std::to_string(n) +
                         " temporal self-attention blocks");
      }
    }
  }
  if (rank && rank->applied && (rank->k < 1 || rank->k > S)) {
    errors.push_back("model.rank.k = " + std::to_string(rank->k) +
                     " must be in [1, S = " + std::to_string(S) + "]");
  }

  if (uses_spatial_stream(*this) &&
      spatial_embedding != SpatialEmbedding::linear) {
    ModelConfig r = resolved();
    const bool enhanced = spatial_embedding == SpatialEmbedding::cnn_enhanced;
    const std::size_t min_layers = enhanced ? 2 : 1;
    if (r.cnn.channels.size() < min_layers) {
      errors.push_back("model.cnn.channels needs at least " +
                       std::to_string(min_layers) + " layers");
    } else {
      if (r.cnn.channels.back() != d_model) {
        errors.push_back("model.cnn.channels must end with d_model = " +
                         std::to_string(d_model));
      }
      if (std::find(r.cnn.channels.begin(), r.cnn.channels.end(), 0u) !=
          r.cnn.channels.end()) {
        errors.push_back("model.cnn.channels entries must be >= 1");
      }
      if (cnn.kernel_size < 1 || cnn.pool < 1) {
        errors.push_back("model.cnn.kernel_size and model.cnn.pool must be >= 1");
      } else if (T > 0) {
        // Same-padded convs keep the length; every avg pool must fit.
        std::size_t len = T;
        for (const auto& layer : CnnEmbedSpec::from_config(r).layers) {
          if (layer.pool != CnnPool::avg) continue;
          if (cnn.pool > len) {
            errors.push_back("model.T = " + std::to_string(T) +
                             " is pooled away by the CNN embedding");
            break;
          }
          len = (len - cnn.pool) / cnn.pool + 1;
        }
      }
    }
  }
  return errors;
}

void ModelConfig::check() const {
  auto errors = validate();
  if (errors.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

CnnEmbedSpec CnnEmbedSpec::from_config(const ModelConfig& config) {
  const ModelConfig r = config.resolved();
  CnnEmbedSpec spec;
  spec.pool_window = r.cnn.pool;
  const auto& ch = r.cnn.channels;
  const std::size_t n = ch.size();
  for (std::size_t i = 0; i < n; ++i) {
    CnnLayerSpec layer{ch[i], r.cnn.kernel_size, CnnPool::avg};
    if (i + 1 == n) {
      layer.pool = CnnPool::gap;
    } else if (r.spatial_embedding == SpatialEmbedding::cnn_enhanced &&
               i + 2 == n) {
      // Enhanced final block: Conv-GeLU-Conv-GeLU-GAP.
      layer.pool = CnnPool::none;
    }
    spec.layers.push_back(layer);
  }
  return spec;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::encoder_only_temporal: return "encoder_only_temporal";
    case Variant::encoder_only_spatial: return "encoder_only_spatial";
    case Variant::enc_dec_temporal_spatial: return "enc_dec_temporal_spatial";
    case Variant::enc_dec_spatial_temporal: return "enc_dec_spatial_temporal";
  }
  return "?";
}

std::string to_string(SpatialEmbedding e) {
  switch (e) {
    case SpatialEmbedding::linear: return "linear";
    case SpatialEmbedding::cnn_original: return "cnn_original";
    case SpatialEmbedding::cnn_enhanced: return "cnn_enhanced";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::encoder_only_temporal, Variant::encoder_only_spatial,
                    Variant::enc_dec_temporal_spatial,
                    Variant::enc_dec_spatial_temporal}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s + "'");
}

SpatialEmbedding parse_spatial_embedding(const std::string& s) {
  for (SpatialEmbedding e : {SpatialEmbedding::linear,
                             SpatialEmbedding::cnn_original,
                             SpatialEmbedding::cnn_enhanced}) {
    if (to_string(e) == s) return e;
  }
  throw ConfigError("unknown spatial_embedding '" + s + "'");
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["T"] = c.T;
  j["S"] = c.S;
  j["d_model"] = c.d_model;
  j["d_a"] = c.d_a;
  j["d_ff"] = c.d_ff;
  j["heads_encoder"] = c.heads_encoder;
  j["heads_decoder"] = c.heads_decoder;
  j["blocks_encoder"] = c.blocks_encoder;
  j["blocks_decoder"] = c.blocks_decoder;
  j["p_drop"] = c.p_drop;
  j["variant"] = to_string(c.variant);
  j["spatial_embedding"] = to_string(c.spatial_embedding);
  j["cnn"] = {{"channels", c.cnn.channels},
              {"kernel_size", c.cnn.kernel_size},
              {"pool", c.cnn.pool}};
  if (c.window) {
    j["window"] = {{"l_back", c.window->l_back},
                   {"l_fwd", c.window->l_fwd},
                   {"applied_block_indices", c.window->applied_block_indices}};
  } else {
    j["window"] = nullptr;
  }
  if (c.rank) {
    j["rank"] = {{"k", c.rank->k}, {"applied", c.rank->applied}};
  } else {
    j["rank"] = nullptr;
  }
  j["pheno_dim"] = c.pheno_dim;
  j["classifier_sizes"] = c.classifier_sizes;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j,
                                   std::vector<std::string>& errors,
                                   const std::string& prefix) {
  ModelConfig c;
  JsonFields f(j, prefix, errors);
  if (!f.ok()) return c;
  f.read("T", c.T);
  f.read("S", c.S);
  f.read("d_model", c.d_model);
  f.read("d_a", c.d_a);
  f.read("d_ff", c.d_ff);
  f.read("heads_encoder", c.heads_encoder);
  f.read("heads_decoder", c.heads_decoder);
  f.read("blocks_encoder", c.blocks_encoder);
  f.read("blocks_decoder", c.blocks_decoder);
  f.read("p_drop", c.p_drop);
  std::string s;
  f.read("variant", s);
  if (!s.empty()) {
    try {
      c.variant = parse_variant(s);
    } catch (const ConfigError& e) {
      f.error("variant", e.what());
    }
  }
  s.clear();
  f.read("spatial_embedding", s);
  if (!s.empty()) {
    try {
      c.spatial_embedding = parse_spatial_embedding(s);
    } catch (const ConfigError& e) {
      f.error("spatial_embedding", e.what());
    }
  }
  if (const auto* v = f.find("cnn")) {
    JsonFields g(*v, f.path("cnn"), errors);
    g.read("channels", c.cnn.channels);
    g.read("kernel_size", c.cnn.kernel_size);
    g.read("pool", c.cnn.pool);
    g.finish();
  }
  if (const auto* v = f.find("window")) {
    if (v->is_null()) {
      c.window.reset();
    } else {
      WindowConfig w;
      JsonFields g(*v, f.path("window"), errors);
      if (const auto* l = g.find("l")) {
        // Shorthand for a symmetric band.
        if (l->is_number_unsigned()) {
          w.l_back = w.l_fwd = l->get<std::size_t>();
        } else {
          g.error("l", "expected a non-negative integer");
        }
      }
      g.read("l_back", w.l_back);
      g.read("l_fwd", w.l_fwd);
      g.read("applied_block_indices", w.applied_block_indices);
      g.finish();
      c.window = w;
    }
  }
  if (const auto* v = f.find("rank")) {
    if (v->is_null()) {
      c.rank.reset();
    } else {
      RankConfig r;
      JsonFields g(*v, f.path("rank"), errors);
      g.read("k", r.k);
      g.read("applied", r.applied);
      g.finish();
      c.rank = r;
    }
  }
  f.read("pheno_dim", c.pheno_dim);
  f.read("classifier_sizes", c.classifier_sizes);
  f.finish();
  return c;
}

}  // namespace stf
