#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ctfr/mat.hpp"
#include "ctfr/nn.hpp"
#include "ctfr/tensor.hpp"

namespace ctfr {

struct ModelConfig {
  std::int64_t model_dim = 48;
  std::int64_t num_heads = 4;
  std::int64_t trm1_layers = 2;
  std::int64_t trm2_layers = 1;
  std::int64_t img_trm_layers = 2;
  std::int64_t xtrm_blocks = 2;  // fusion depth N
  std::vector<ConvLayerSpec> conv1 = {{48, 4, 2}, {48, 4, 2}};
  std::vector<ConvLayerSpec> conv2 = {{48, 2, 2}, {48, 2, 2}};
  std::int64_t roi_feature_dim = 16;
  // Output widths of the scoring head's layers; must end in 1.
  std::vector<std::int64_t> mlp_widths = {96, 48, 1};

  void validate() const;  // throws std::invalid_argument
  // Smallest config that still exercises every path; used by gradient tests.
  static ModelConfig micro();
};

std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);  // ConfigError on bad input

struct AudioInput {
  std::vector<double> signal;  // raw 1-D sample sequence
};

struct ImageInput {
  Mat roi_features;  // [R, roi_feature_dim]
  Mat boxes;         // [R, 4] normalized (x1,y1,x2,y2), x1<x2, y1<y2, all in [0,1]
};

// Throws std::invalid_argument when shapes or box geometry are malformed.
void validate_image(const ImageInput& v, std::int64_t roi_feature_dim);

struct AudioEncoding {
  Tensor hi_res;          // [T1,d] full-resolution contextualized frames (no CLS)
  Tensor cls_and_lo_res;  // [T2+1,d]; row 0 is the CLS row
  Tensor cls_a;           // [d]; equals row 0 of cls_and_lo_res
};

struct ImageEncoding {
  Tensor tokens;  // [R+1,d]; row 0 is the CLS row
  Tensor cls_i;   // [d]; equals row 0 of tokens
};

// Similarity of two items from their summary vectors alone: a raw dot
// product, no normalization.
Tensor coarse_score(const AudioEncoding& a, const ImageEncoding& v);

// The full dual-path model: an audio encoder whose CLS row skips the second
// convolution, an image encoder over projected RoI+position tokens, and a
// stack of fusion blocks feeding the scalar scoring head.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  // Smallest signal length encode_audio accepts (receptive field of the
  // composed convolution stacks).
  std::int64_t min_signal_length() const;

  AudioEncoding encode_audio(const AudioInput& a) const;
  ImageEncoding encode_image(const ImageInput& v) const;

  // Runs the fusion stack on full token sequences; one call = one counted
  // cross-modal pass.
  std::pair<Tensor, Tensor> run_cross_modal(const Tensor& audio_tokens,
                                            const Tensor& image_tokens) const;
  // Joint score: fusion stack, then CLS_A||CLS_I through the head MLP.
  Tensor fine_score(const AudioEncoding& a, const ImageEncoding& v) const;

  // Number of fusion-stack evaluations since construction or the last reset.
  // Single-threaded contract: queries that need per-query counts snapshot
  // around their own calls.
  std::uint64_t xmodal_passes() const { return xmodal_passes_; }
  void reset_xmodal_passes() { xmodal_passes_ = 0; }

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);  // FormatError on bad files

 private:
  ModelConfig cfg_;
  ParamStore ps_;
  Tensor cls_a_emb_, cls_i_emb_;  // [1,d] learned summary-token embeddings
  ConvStack conv1_, conv2_;
  std::vector<TransformerBlock> trm1_, trm2_, img_trm_;
  Tensor roi_proj_w_, pos_proj_w_;  // bias-free projections into token space
  LayerNorm img_input_ln_;
  // Output norms for the pre-norm residual stacks: without them the residual
  // stream (and every dot-product score derived from it) grows without bound
  // during training.
  LayerNorm trm1_out_ln_, trm2_out_ln_, img_out_ln_;
  std::vector<CrossModalBlock> xtrm_;
  LayerNorm fused_a_ln_, fused_v_ln_;
  std::vector<Linear> head_;
  mutable std::uint64_t xmodal_passes_ = 0;
};

}  // namespace ctfr
