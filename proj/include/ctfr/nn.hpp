#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctfr/rng.hpp"
#include "ctfr/tensor.hpp"

namespace ctfr {

// Attention geometry shared by every transformer block.
struct AttentionSpec {
  std::int64_t model_dim = 0;
  std::int64_t num_heads = 0;

  std::int64_t head_dim() const { return model_dim / num_heads; }
  // Throws std::invalid_argument unless model_dim >= 1, num_heads >= 1 and
  // num_heads divides model_dim.
  void validate() const;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay;  // false exempts this parameter from weight decay
};

// Registry of every learnable tensor, keyed by a unique dotted name. Normal
// initialization draws from a stream forked off the seed by parameter name,
// so values do not depend on registration order. The decay flag records the
// weight-decay exemptions (biases, norm parameters, class embeddings).
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(const std::string& name, Shape shape, double stddev = 0.02, bool decay = true);
  Tensor zeros(const std::string& name, Shape shape, bool decay = false);
  Tensor ones(const std::string& name, Shape shape, bool decay = false);

  const std::vector<NamedParam>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  Tensor find(std::string_view name) const;  // throws std::invalid_argument if absent
  bool contains(std::string_view name) const;
  std::int64_t total_elements() const;

 private:
  Tensor put(std::string name, Tensor t, bool decay);

  CounterRng rng_;
  std::vector<NamedParam> items_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, std::int64_t in_dim, std::int64_t out_dim);
  Tensor operator()(const Tensor& x) const { return linear(x, w_, b_); }
  const Tensor& weight() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  Tensor w_, b_;  // [out,in], [out]
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, std::int64_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain_, bias_); }

 private:
  Tensor gain_, bias_;
};

// Scaled-dot-product attention over num_heads slices, heads concatenated and
// linearly projected. Self-attention passes the same tensor for queries and
// keys_values. pad_mask (length Tk) marks key positions excluded from
// attention.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, const std::string& prefix, AttentionSpec spec);
  Tensor operator()(const Tensor& queries, const Tensor& keys_values,
                    const std::vector<bool>* pad_mask = nullptr) const;

 private:
  AttentionSpec spec_{};
  Linear q_, k_, v_, out_;
};

// Pre-norm block: x + SelfAttn(LN(x)), then + FFN(LN(.)) where the
// feedforward is Linear(d,4d) -> GELU -> Linear(4d,d).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParamStore& ps, const std::string& prefix, AttentionSpec spec);
  Tensor operator()(const Tensor& x) const;

 private:
  LayerNorm ln_attn_, ln_ffn_;
  MultiHeadAttention attn_;
  Linear ffn_in_, ffn_out_;
};

struct ConvLayerSpec {
  std::int64_t channels = 0;
  std::int64_t kernel = 0;
  std::int64_t stride = 0;
};

// Stack of unpadded strided 1-D convolutions, each followed by GELU.
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(ParamStore& ps, const std::string& prefix, std::int64_t in_channels,
            std::vector<ConvLayerSpec> layers);
  Tensor operator()(const Tensor& x) const;

  // Composed floor((L-kernel)/stride)+1 per layer; throws std::invalid_argument
  // when len is below the receptive field.
  std::int64_t output_length(std::int64_t len) const;
  // Smallest input length the stack accepts (its receptive field).
  std::int64_t min_input_length() const;
  std::int64_t out_channels() const;
  bool empty() const { return specs_.empty(); }

 private:
  std::vector<ConvLayerSpec> specs_;
  std::vector<Tensor> ws_, bs_;
};

// One fusion block over an (audio tokens, image tokens) pair. Both streams
// are updated from the same block inputs: each cross-attends to the other's
// pre-block tokens, then runs its own self-attention, then its own two-layer
// feedforward — every sublayer pre-normed with a residual connection.
class CrossModalBlock {
 public:
  CrossModalBlock() = default;
  CrossModalBlock(ParamStore& ps, const std::string& prefix, AttentionSpec spec);
  std::pair<Tensor, Tensor> operator()(const Tensor& audio_tokens,
                                       const Tensor& image_tokens) const;

 private:
  LayerNorm ln_cross_a_, ln_cross_v_;
  MultiHeadAttention cross_a_, cross_v_;
  LayerNorm ln_self_a_, ln_self_v_;
  MultiHeadAttention self_a_, self_v_;
  LayerNorm ln_ffn_a_, ln_ffn_v_;
  Linear ffn_a_in_, ffn_a_out_, ffn_v_in_, ffn_v_out_;
};

}  // namespace ctfr
