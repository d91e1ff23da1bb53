#pragma once

// CETNet assembly: encoder stack, cross-enhancement decoder stages, and the
// multi-stage forward pass. The encoder captures hierarchical features with
// dilated self-attention blocks; each decoder refines the previous stage's
// frame probabilities while fusing the encoder's per-layer features.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cetnet/blocks.hpp"
#include "cetnet/rng.hpp"
#include "cetnet/tensor.hpp"

namespace cetnet {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

// Which decoder layers take their attention values from the encoder.
//   all          every layer uses the encoder's layer-l feature
//   none         every layer uses its own feed-forward output (self values)
//   ahead        layers 0 .. N/2-1 cross, the rest self
//   behind       layers N/2 .. N-1 cross, the rest self
//   ahead_only   layers 0 .. N/2-1 cross, the rest use the encoder's final
//                layer output as values
//   behind_only  layers N/2 .. N-1 cross, the rest use the encoder's final
//                layer output as values
enum class CrossMode { all, none, ahead, behind, ahead_only, behind_only };

inline const char* to_string(CrossMode m) {
  switch (m) {
    case CrossMode::all: return "all";
    case CrossMode::none: return "none";
    case CrossMode::ahead: return "ahead";
    case CrossMode::behind: return "behind";
    case CrossMode::ahead_only: return "ahead_only";
    case CrossMode::behind_only: return "behind_only";
  }
  throw ConfigError("to_string: unknown cross mode");
}

inline CrossMode cross_mode_from_string(const std::string& s) {
  if (s == "all") return CrossMode::all;
  if (s == "none") return CrossMode::none;
  if (s == "ahead") return CrossMode::ahead;
  if (s == "behind") return CrossMode::behind;
  if (s == "ahead_only") return CrossMode::ahead_only;
  if (s == "behind_only") return CrossMode::behind_only;
  throw ConfigError(detail::msg("unknown cross mode '", s,
                                "' (expected all|none|ahead|behind|ahead_only|behind_only)"));
}

struct ModelConfig {
  std::size_t input_dim = 0;     // D, incoming feature width
  std::size_t model_dim = 64;    // D', internal width after the FC reduction
  std::size_t num_layers = 10;   // N blocks per stage
  std::size_t num_decoders = 10; // refinement stages after the encoder
  std::size_t num_classes = 0;   // c
  std::size_t heads = 1;
  std::size_t r = 1;
  std::size_t window = 0;        // attention window, 0 = unlimited
  CrossMode cross_mode = CrossMode::all;

  // Throws ConfigError listing every violated constraint at once.
  void validate() const {
    std::vector<std::string> problems;
    if (input_dim == 0) problems.push_back("input_dim must be positive");
    if (model_dim == 0) problems.push_back("model_dim must be positive");
    if (num_classes < 2) problems.push_back("num_classes must be at least 2");
    if (r == 0) problems.push_back("r must be positive");
    if (heads == 0) problems.push_back("heads must be positive");
    if (r != 0 && heads != 0 && model_dim % (r * heads) != 0)
      problems.push_back(detail::msg("model_dim=", model_dim,
                                     " must be divisible by r*heads=", r * heads));
    if (!problems.empty()) {
      std::string joined = "invalid model config:";
      for (const auto& p : problems) joined += "\n  - " + p;
      throw ConfigError(joined);
    }
  }
};

// Value source recorded per decoder layer: a non-negative value is the index
// of the encoder layer feature used, kSelfValue means the block's own x'',
// kEncoderFinal means the encoder's last layer output.
constexpr int kSelfValue = -1;
constexpr int kEncoderFinal = -2;

inline int value_source_for(CrossMode mode, std::size_t layer, std::size_t num_layers) {
  const std::size_t split = num_layers / 2;
  const bool front = layer < split;
  switch (mode) {
    case CrossMode::all: return static_cast<int>(layer);
    case CrossMode::none: return kSelfValue;
    case CrossMode::ahead: return front ? static_cast<int>(layer) : kSelfValue;
    case CrossMode::behind: return front ? kSelfValue : static_cast<int>(layer);
    case CrossMode::ahead_only: return front ? static_cast<int>(layer) : kEncoderFinal;
    case CrossMode::behind_only: return front ? kEncoderFinal : static_cast<int>(layer);
  }
  throw ConfigError("value_source_for: unknown cross mode");
}

// ---------------------------------------------------------------------------
// parameter bundles
// ---------------------------------------------------------------------------

struct EncoderParams {
  Tensor in_proj_w;  // D x D'
  Tensor in_proj_b;  // D'
  std::vector<BlockParams> blocks;
  Tensor cls_w;  // D' x c
  Tensor cls_b;  // c
};

struct DecoderParams {
  Tensor in_proj_w;  // c x D'
  Tensor in_proj_b;  // D'
  std::vector<BlockParams> blocks;
  std::vector<Tensor> fuse_w;  // per layer, 2D' x D'
  std::vector<Tensor> fuse_b;  // per layer, D'
  Tensor cls_w;  // D' x c
  Tensor cls_b;  // c
};

// ---------------------------------------------------------------------------
// stage results
// ---------------------------------------------------------------------------

struct EncoderResult {
  Tensor feature;  // T x D', classifier input (last block output)
  Tensor logits;   // T x c
  Tensor probs;    // T x c
  std::vector<Tensor> layer_features;  // N entries, T x D'
};

struct DecoderResult {
  Tensor feature;
  Tensor logits;
  Tensor probs;
  std::vector<int> value_sources;  // per layer, see kSelfValue / kEncoderFinal
};

struct StageOutputs {
  // Stage 0 is the encoder; stages 1..num_decoders are refinements.
  std::vector<Tensor> logits_per_stage;
  std::vector<Tensor> probs_per_stage;
  std::vector<Tensor> features_per_stage;  // classifier inputs, for circle loss
  std::vector<Tensor> cls_weight_per_stage;
  std::vector<Tensor> encoder_layer_features;
  std::vector<std::vector<int>> value_sources_per_decoder;

  std::size_t num_stages() const { return logits_per_stage.size(); }
};

// ---------------------------------------------------------------------------
// the model
// ---------------------------------------------------------------------------

class CetModel {
 public:
  CetModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t dp = cfg_.model_dim;

    encoder_.in_proj_w = init_weight({cfg_.input_dim, dp}, cfg_.input_dim, rng);
    encoder_.in_proj_b = Tensor({dp});
    for (std::size_t l = 0; l < cfg_.num_layers; ++l)
      encoder_.blocks.push_back(init_block(dp, dilation_for(l), cfg_.r, cfg_.heads,
                                           cfg_.window, rng));
    encoder_.cls_w = init_weight({dp, cfg_.num_classes}, dp, rng);
    encoder_.cls_b = Tensor({cfg_.num_classes});

    for (std::size_t d = 0; d < cfg_.num_decoders; ++d) {
      DecoderParams dec;
      dec.in_proj_w = init_weight({cfg_.num_classes, dp}, cfg_.num_classes, rng);
      dec.in_proj_b = Tensor({dp});
      for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        dec.blocks.push_back(init_block(dp, dilation_for(l), cfg_.r, cfg_.heads,
                                        cfg_.window, rng));
        dec.fuse_w.push_back(init_weight({2 * dp, dp}, 2 * dp, rng));
        dec.fuse_b.push_back(Tensor({dp}));
      }
      dec.cls_w = init_weight({dp, cfg_.num_classes}, dp, rng);
      dec.cls_b = Tensor({cfg_.num_classes});
      decoders_.push_back(std::move(dec));
    }

    build_registry();
    for (auto& [name, t] : registry_) t.set_requires_grad();
  }

  const ModelConfig& config() const { return cfg_; }
  const EncoderParams& encoder() const { return encoder_; }
  const std::vector<DecoderParams>& decoders() const { return decoders_; }

  // Stable name -> tensor registry; ordering is fixed by construction and is
  // the contract for checkpoints and the optimizer state.
  std::vector<std::pair<std::string, Tensor>>& parameters() { return registry_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return registry_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : registry_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : registry_) t.zero_grad();
  }

  EncoderResult encoder_forward(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != cfg_.input_dim)
      throw ShapeError(detail::msg("encoder_forward: expected input [T x ", cfg_.input_dim,
                                   "], got ", detail::shape_str(x.shape())));
    EncoderResult res;
    Tensor h = add_bias(matmul(x, encoder_.in_proj_w), encoder_.in_proj_b);
    for (const auto& block : encoder_.blocks) {
      h = self_attention_block(h, block);
      res.layer_features.push_back(h);
    }
    res.feature = h;
    res.logits = add_bias(matmul(h, encoder_.cls_w), encoder_.cls_b);
    res.probs = softmax_rows(res.logits);
    return res;
  }

  DecoderResult decoder_forward(const Tensor& prev_probs,
                                const std::vector<Tensor>& layer_features,
                                const DecoderParams& dec) const {
    if (layer_features.size() != dec.blocks.size())
      throw ConfigError(detail::msg("decoder_forward: ", dec.blocks.size(),
                                    " decoder layers but ", layer_features.size(),
                                    " encoder layer features"));
    if (prev_probs.rank() != 2 || prev_probs.cols() != cfg_.num_classes)
      throw ShapeError(detail::msg("decoder_forward: expected probabilities [T x ",
                                   cfg_.num_classes, "], got ",
                                   detail::shape_str(prev_probs.shape())));
    DecoderResult res;
    Tensor h = add_bias(matmul(prev_probs, dec.in_proj_w), dec.in_proj_b);
    for (std::size_t l = 0; l < dec.blocks.size(); ++l) {
      Tensor fused = add_bias(
          matmul(concat_channels(layer_features[l], h), dec.fuse_w[l]), dec.fuse_b[l]);
      const int src = value_source_for(cfg_.cross_mode, l, dec.blocks.size());
      res.value_sources.push_back(src);
      if (src == kSelfValue) {
        h = self_attention_block(fused, dec.blocks[l]);
      } else {
        const Tensor& v = src == kEncoderFinal ? layer_features.back()
                                               : layer_features[static_cast<std::size_t>(src)];
        h = self_attention_block(fused, &v, dec.blocks[l]);
      }
    }
    res.feature = h;
    res.logits = add_bias(matmul(h, dec.cls_w), dec.cls_b);
    res.probs = softmax_rows(res.logits);
    return res;
  }

  StageOutputs forward(const Tensor& x) const {
    StageOutputs out;
    EncoderResult enc = encoder_forward(x);
    out.encoder_layer_features = enc.layer_features;
    out.logits_per_stage.push_back(enc.logits);
    out.probs_per_stage.push_back(enc.probs);
    out.features_per_stage.push_back(enc.feature);
    out.cls_weight_per_stage.push_back(encoder_.cls_w);

    Tensor probs = enc.probs;
    for (const auto& dec : decoders_) {
      DecoderResult res = decoder_forward(probs, enc.layer_features, dec);
      out.logits_per_stage.push_back(res.logits);
      out.probs_per_stage.push_back(res.probs);
      out.features_per_stage.push_back(res.feature);
      out.cls_weight_per_stage.push_back(dec.cls_w);
      out.value_sources_per_decoder.push_back(res.value_sources);
      probs = res.probs;
    }
    return out;
  }

 private:
  static long dilation_for(std::size_t layer) {
    if (layer >= 62) throw ConfigError("dilation overflows at layer >= 62");
    return static_cast<long>(std::size_t{1} << layer);
  }

  void build_registry() {
    registry_.emplace_back("encoder.in_proj.w", encoder_.in_proj_w);
    registry_.emplace_back("encoder.in_proj.b", encoder_.in_proj_b);
    for (std::size_t l = 0; l < encoder_.blocks.size(); ++l)
      collect_block_params(encoder_.blocks[l],
                           detail::msg("encoder.block.", l), registry_);
    registry_.emplace_back("encoder.cls.w", encoder_.cls_w);
    registry_.emplace_back("encoder.cls.b", encoder_.cls_b);
    for (std::size_t d = 0; d < decoders_.size(); ++d) {
      const std::string dp = detail::msg("decoder.", d);
      registry_.emplace_back(dp + ".in_proj.w", decoders_[d].in_proj_w);
      registry_.emplace_back(dp + ".in_proj.b", decoders_[d].in_proj_b);
      for (std::size_t l = 0; l < decoders_[d].blocks.size(); ++l) {
        collect_block_params(decoders_[d].blocks[l],
                             detail::msg(dp, ".block.", l), registry_);
        registry_.emplace_back(detail::msg(dp, ".fuse.", l, ".w"), decoders_[d].fuse_w[l]);
        registry_.emplace_back(detail::msg(dp, ".fuse.", l, ".b"), decoders_[d].fuse_b[l]);
      }
      registry_.emplace_back(dp + ".cls.w", decoders_[d].cls_w);
      registry_.emplace_back(dp + ".cls.b", decoders_[d].cls_b);
    }
  }

  ModelConfig cfg_;
  EncoderParams encoder_;
  std::vector<DecoderParams> decoders_;
  std::vector<std::pair<std::string, Tensor>> registry_;
};

// Contract-style free functions mirroring the member operations.
inline std::pair<Tensor, std::vector<Tensor>> encoder_forward(const Tensor& x,
                                                              const CetModel& model) {
  EncoderResult res = model.encoder_forward(x);
  return {res.probs, res.layer_features};
}

inline Tensor decoder_forward(const Tensor& prev_probs,
                              const std::vector<Tensor>& layer_features,
                              const DecoderParams& dec, const CetModel& model) {
  return model.decoder_forward(prev_probs, layer_features, dec).probs;
}

inline StageOutputs model_forward(const Tensor& x, const CetModel& model) {
  return model.forward(x);
}

}  // namespace cetnet
