#include "ctfr/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ctfr {

void AttentionSpec::validate() const {
  if (model_dim < 1) throw std::invalid_argument("AttentionSpec: model_dim must be >= 1");
  if (num_heads < 1) throw std::invalid_argument("AttentionSpec: num_heads must be >= 1");
  if (model_dim % num_heads != 0)
    throw std::invalid_argument("AttentionSpec: num_heads must divide model_dim");
}

Tensor ParamStore::put(std::string name, Tensor t, bool decay) {
  if (by_name_.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter name: " + name);
  by_name_.emplace(name, items_.size());
  items_.push_back({std::move(name), t, decay});
  return t;
}

Tensor ParamStore::normal(const std::string& name, Shape shape, double stddev, bool decay) {
  auto stream = rng_.fork("param:" + name);
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = stream.normal(0.0, stddev);
  return put(name, Tensor::from_data(std::move(shape), std::move(v), /*requires_grad=*/true),
             decay);
}

Tensor ParamStore::zeros(const std::string& name, Shape shape, bool decay) {
  return put(name, Tensor::zeros(std::move(shape), /*requires_grad=*/true), decay);
}

Tensor ParamStore::ones(const std::string& name, Shape shape, bool decay) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return put(name,
             Tensor::from_data(std::move(shape),
                               std::vector<double>(static_cast<std::size_t>(n), 1.0),
                               /*requires_grad=*/true),
             decay);
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> ts;
  ts.reserve(items_.size());
  for (const auto& it : items_) ts.push_back(it.tensor);
  return ts;
}

Tensor ParamStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end())
    throw std::invalid_argument("ParamStore: no parameter named " + std::string(name));
  return items_[it->second].tensor;
}

bool ParamStore::contains(std::string_view name) const {
  return by_name_.count(std::string(name)) != 0;
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& it : items_) n += it.tensor.size();
  return n;
}

Linear::Linear(ParamStore& ps, const std::string& prefix, std::int64_t in_dim,
               std::int64_t out_dim)
    : w_(ps.normal(prefix + ".w", {out_dim, in_dim}, 0.02, /*decay=*/true)),
      b_(ps.zeros(prefix + ".b", {out_dim}, /*decay=*/false)) {}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, std::int64_t dim)
    : gain_(ps.ones(prefix + ".gain", {dim}, /*decay=*/false)),
      bias_(ps.zeros(prefix + ".bias", {dim}, /*decay=*/false)) {}

namespace {
AttentionSpec validated(AttentionSpec s) {
  s.validate();
  return s;
}
}  // namespace

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& prefix,
                                       AttentionSpec spec)
    : spec_(validated(spec)),
      q_(ps, prefix + ".q", spec.model_dim, spec.model_dim),
      k_(ps, prefix + ".k", spec.model_dim, spec.model_dim),
      v_(ps, prefix + ".v", spec.model_dim, spec.model_dim),
      out_(ps, prefix + ".out", spec.model_dim, spec.model_dim) {}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys_values,
                                      const std::vector<bool>* pad_mask) const {
  if (queries.rank() != 2 || keys_values.rank() != 2 || queries.cols() != spec_.model_dim ||
      keys_values.cols() != spec_.model_dim)
    throw std::invalid_argument("attention: token width does not match model_dim");
  if (pad_mask && static_cast<std::int64_t>(pad_mask->size()) != keys_values.rows())
    throw std::invalid_argument("attention: pad_mask length does not match key count");
  Tensor q = q_(queries), k = k_(keys_values), v = v_(keys_values);
  const std::int64_t hd = spec_.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(spec_.num_heads));
  for (std::int64_t h = 0; h < spec_.num_heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
    Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
    Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
    Tensor attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), pad_mask);
    heads.push_back(matmul(attn, vh));
  }
  return out_(concat_cols(heads));
}

TransformerBlock::TransformerBlock(ParamStore& ps, const std::string& prefix, AttentionSpec spec)
    : ln_attn_(ps, prefix + ".ln_attn", spec.model_dim),
      ln_ffn_(ps, prefix + ".ln_ffn", spec.model_dim),
      attn_(ps, prefix + ".attn", spec),
      ffn_in_(ps, prefix + ".ffn_in", spec.model_dim, 4 * spec.model_dim),
      ffn_out_(ps, prefix + ".ffn_out", 4 * spec.model_dim, spec.model_dim) {}

Tensor TransformerBlock::operator()(const Tensor& x) const {
  Tensor n = ln_attn_(x);
  Tensor h = add(x, attn_(n, n));
  return add(h, ffn_out_(gelu(ffn_in_(ln_ffn_(h)))));
}

ConvStack::ConvStack(ParamStore& ps, const std::string& prefix, std::int64_t in_channels,
                     std::vector<ConvLayerSpec> layers)
    : specs_(std::move(layers)) {
  std::int64_t prev = in_channels;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    if (s.channels < 1 || s.kernel < 1 || s.stride < 1)
      throw std::invalid_argument("ConvStack: channels, kernel and stride must be >= 1");
    const std::string layer = prefix + ".layer" + std::to_string(i);
    ws_.push_back(ps.normal(layer + ".w", {s.channels, s.kernel * prev}, 0.02, /*decay=*/true));
    bs_.push_back(ps.zeros(layer + ".b", {s.channels}, /*decay=*/false));
    prev = s.channels;
  }
}

Tensor ConvStack::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < specs_.size(); ++i)
    h = gelu(conv1d(h, ws_[i], bs_[i], specs_[i].kernel, specs_[i].stride));
  return h;
}

std::int64_t ConvStack::output_length(std::int64_t len) const {
  for (const auto& s : specs_) {
    if (len < s.kernel)
      throw std::invalid_argument("ConvStack: input shorter than the receptive field");
    len = (len - s.kernel) / s.stride + 1;
  }
  return len;
}

std::int64_t ConvStack::min_input_length() const {
  std::int64_t need = 1;
  for (auto it = specs_.rbegin(); it != specs_.rend(); ++it)
    need = (need - 1) * it->stride + it->kernel;
  return need;
}

std::int64_t ConvStack::out_channels() const {
  if (specs_.empty()) throw std::invalid_argument("ConvStack: empty stack has no channels");
  return specs_.back().channels;
}

CrossModalBlock::CrossModalBlock(ParamStore& ps, const std::string& prefix, AttentionSpec spec)
    : ln_cross_a_(ps, prefix + ".ln_cross_a", spec.model_dim),
      ln_cross_v_(ps, prefix + ".ln_cross_v", spec.model_dim),
      cross_a_(ps, prefix + ".cross_a", spec),
      cross_v_(ps, prefix + ".cross_v", spec),
      ln_self_a_(ps, prefix + ".ln_self_a", spec.model_dim),
      ln_self_v_(ps, prefix + ".ln_self_v", spec.model_dim),
      self_a_(ps, prefix + ".self_a", spec),
      self_v_(ps, prefix + ".self_v", spec),
      ln_ffn_a_(ps, prefix + ".ln_ffn_a", spec.model_dim),
      ln_ffn_v_(ps, prefix + ".ln_ffn_v", spec.model_dim),
      ffn_a_in_(ps, prefix + ".ffn_a_in", spec.model_dim, 4 * spec.model_dim),
      ffn_a_out_(ps, prefix + ".ffn_a_out", 4 * spec.model_dim, spec.model_dim),
      ffn_v_in_(ps, prefix + ".ffn_v_in", spec.model_dim, 4 * spec.model_dim),
      ffn_v_out_(ps, prefix + ".ffn_v_out", 4 * spec.model_dim, spec.model_dim) {}

std::pair<Tensor, Tensor> CrossModalBlock::operator()(const Tensor& audio_tokens,
                                                      const Tensor& image_tokens) const {
  if (audio_tokens.rank() != 2 || image_tokens.rank() != 2 ||
      audio_tokens.cols() != image_tokens.cols())
    throw std::invalid_argument("CrossModalBlock: token widths differ");
  // Both cross attentions read the pre-block streams.
  Tensor na = ln_cross_a_(audio_tokens);
  Tensor nv = ln_cross_v_(image_tokens);
  Tensor a = add(audio_tokens, cross_a_(na, nv));
  Tensor v = add(image_tokens, cross_v_(nv, na));

  Tensor sa = ln_self_a_(a);
  a = add(a, self_a_(sa, sa));
  Tensor sv = ln_self_v_(v);
  v = add(v, self_v_(sv, sv));

  a = add(a, ffn_a_out_(gelu(ffn_a_in_(ln_ffn_a_(a)))));
  v = add(v, ffn_v_out_(gelu(ffn_v_in_(ln_ffn_v_(v)))));
  return {a, v};
}

}  // namespace ctfr
