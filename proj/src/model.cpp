#include "ctfr/model.hpp"

#include <stdexcept>
#include <utility>

#include "ctfr/errors.hpp"
#include "ctfr/io_util.hpp"
#include "json.hpp"

namespace ctfr {

namespace {

void check_conv_specs(const std::vector<ConvLayerSpec>& layers, const char* which) {
  if (layers.empty())
    throw std::invalid_argument(std::string("ModelConfig: ") + which + " must have >= 1 layer");
  for (const auto& l : layers)
    if (l.channels < 1 || l.kernel < 1 || l.stride < 1)
      throw std::invalid_argument(std::string("ModelConfig: ") + which +
                                  " channels/kernel/stride must be >= 1");
}

}  // namespace

void ModelConfig::validate() const {
  AttentionSpec{model_dim, num_heads}.validate();
  if (trm1_layers < 1 || trm2_layers < 1 || img_trm_layers < 1)
    throw std::invalid_argument("ModelConfig: all transformer stacks need >= 1 layer");
  if (xtrm_blocks < 1) throw std::invalid_argument("ModelConfig: xtrm_blocks must be >= 1");
  check_conv_specs(conv1, "conv1");
  check_conv_specs(conv2, "conv2");
  bool conv2_reduces = false;
  for (const auto& l : conv2) conv2_reduces = conv2_reduces || l.kernel > 1 || l.stride > 1;
  if (!conv2_reduces)
    throw std::invalid_argument(
        "ModelConfig: conv2 must reduce temporal resolution (some kernel or stride > 1)");
  if (roi_feature_dim < 1)
    throw std::invalid_argument("ModelConfig: roi_feature_dim must be >= 1");
  if (mlp_widths.empty() || mlp_widths.back() != 1)
    throw std::invalid_argument("ModelConfig: mlp_widths must end in 1");
  for (auto w : mlp_widths)
    if (w < 1) throw std::invalid_argument("ModelConfig: mlp widths must be >= 1");
}

ModelConfig ModelConfig::micro() {
  ModelConfig cfg;
  cfg.model_dim = 8;
  cfg.num_heads = 2;
  cfg.trm1_layers = 1;
  cfg.trm2_layers = 1;
  cfg.img_trm_layers = 1;
  cfg.xtrm_blocks = 1;
  cfg.conv1 = {{8, 3, 2}, {8, 3, 2}};
  cfg.conv2 = {{8, 2, 2}};
  cfg.roi_feature_dim = 6;
  cfg.mlp_widths = {16, 8, 1};
  return cfg;
}

std::string to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["model_dim"] = cfg.model_dim;
  j["num_heads"] = cfg.num_heads;
  j["trm1_layers"] = cfg.trm1_layers;
  j["trm2_layers"] = cfg.trm2_layers;
  j["img_trm_layers"] = cfg.img_trm_layers;
  j["xtrm_blocks"] = cfg.xtrm_blocks;
  auto conv_to_json = [](const std::vector<ConvLayerSpec>& layers) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : layers)
      arr.push_back({{"channels", l.channels}, {"kernel", l.kernel}, {"stride", l.stride}});
    return arr;
  };
  j["conv1"] = conv_to_json(cfg.conv1);
  j["conv2"] = conv_to_json(cfg.conv2);
  j["roi_feature_dim"] = cfg.roi_feature_dim;
  j["mlp_widths"] = cfg.mlp_widths;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    ModelConfig cfg;
    auto get = [&](const char* key, auto& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("model_dim", cfg.model_dim);
    get("num_heads", cfg.num_heads);
    get("trm1_layers", cfg.trm1_layers);
    get("trm2_layers", cfg.trm2_layers);
    get("img_trm_layers", cfg.img_trm_layers);
    get("xtrm_blocks", cfg.xtrm_blocks);
    auto conv_from_json = [](const nlohmann::json& arr) {
      std::vector<ConvLayerSpec> layers;
      for (const auto& l : arr)
        layers.push_back({l.at("channels").get<std::int64_t>(),
                          l.at("kernel").get<std::int64_t>(),
                          l.at("stride").get<std::int64_t>()});
      return layers;
    };
    if (j.contains("conv1")) cfg.conv1 = conv_from_json(j.at("conv1"));
    if (j.contains("conv2")) cfg.conv2 = conv_from_json(j.at("conv2"));
    get("roi_feature_dim", cfg.roi_feature_dim);
    get("mlp_widths", cfg.mlp_widths);
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

void validate_image(const ImageInput& v, std::int64_t roi_feature_dim) {
  if (v.roi_features.rows < 1)
    throw std::invalid_argument("ImageInput: need at least one region");
  if (v.roi_features.cols != roi_feature_dim)
    throw std::invalid_argument("ImageInput: RoI feature width does not match the config");
  if (v.boxes.rows != v.roi_features.rows || v.boxes.cols != 4)
    throw std::invalid_argument("ImageInput: boxes must be [R,4] aligned with features");
  for (std::int64_t r = 0; r < v.boxes.rows; ++r) {
    double x1 = v.boxes.at(r, 0), y1 = v.boxes.at(r, 1);
    double x2 = v.boxes.at(r, 2), y2 = v.boxes.at(r, 3);
    bool in_range = x1 >= 0 && y1 >= 0 && x2 <= 1 && y2 <= 1;
    if (!in_range || !(x1 < x2) || !(y1 < y2))
      throw std::invalid_argument("ImageInput: box " + std::to_string(r) +
                                  " is not a normalized (x1,y1,x2,y2) rectangle");
  }
}

Tensor coarse_score(const AudioEncoding& a, const ImageEncoding& v) {
  return dot(a.cls_a, v.cls_i);
}

Model::Model(ModelConfig cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), std::move(cfg))),
      ps_(seed),
      cls_a_emb_(ps_.normal("audio.cls", {1, cfg_.model_dim}, 0.02, /*decay=*/false)),
      cls_i_emb_(ps_.normal("image.cls", {1, cfg_.model_dim}, 0.02, /*decay=*/false)),
      conv1_(ps_, "audio.conv1", 1, cfg_.conv1),
      conv2_(ps_, "audio.conv2", cfg_.conv1.back().channels, cfg_.conv2),
      roi_proj_w_(ps_.normal("image.roi_proj.w", {cfg_.model_dim, cfg_.roi_feature_dim})),
      pos_proj_w_(ps_.normal("image.pos_proj.w", {cfg_.model_dim, 5})),
      img_input_ln_(ps_, "image.input_ln", cfg_.model_dim),
      trm1_out_ln_(ps_, "audio.trm1.out_ln", cfg_.model_dim),
      trm2_out_ln_(ps_, "audio.trm2.out_ln", cfg_.model_dim),
      img_out_ln_(ps_, "image.trm.out_ln", cfg_.model_dim),
      fused_a_ln_(ps_, "xmodal.out_ln_a", cfg_.model_dim),
      fused_v_ln_(ps_, "xmodal.out_ln_v", cfg_.model_dim) {
  AttentionSpec spec{cfg_.model_dim, cfg_.num_heads};
  if (cfg_.conv1.back().channels != cfg_.model_dim ||
      cfg_.conv2.back().channels != cfg_.model_dim)
    throw std::invalid_argument("ModelConfig: conv stacks must end at model_dim channels");
  for (std::int64_t i = 0; i < cfg_.trm1_layers; ++i)
    trm1_.emplace_back(ps_, "audio.trm1.block" + std::to_string(i), spec);
  for (std::int64_t i = 0; i < cfg_.trm2_layers; ++i)
    trm2_.emplace_back(ps_, "audio.trm2.block" + std::to_string(i), spec);
  for (std::int64_t i = 0; i < cfg_.img_trm_layers; ++i)
    img_trm_.emplace_back(ps_, "image.trm.block" + std::to_string(i), spec);
  for (std::int64_t i = 0; i < cfg_.xtrm_blocks; ++i)
    xtrm_.emplace_back(ps_, "xmodal.block" + std::to_string(i), spec);
  std::int64_t in = 2 * cfg_.model_dim;
  for (std::size_t i = 0; i < cfg_.mlp_widths.size(); ++i) {
    head_.emplace_back(ps_, "head.layer" + std::to_string(i), in, cfg_.mlp_widths[i]);
    in = cfg_.mlp_widths[i];
  }
}

std::int64_t Model::min_signal_length() const {
  // Compose the receptive field backwards through conv1 so that conv1's
  // output is at least conv2's receptive field.
  std::int64_t need = conv2_.min_input_length();
  for (auto it = cfg_.conv1.rbegin(); it != cfg_.conv1.rend(); ++it)
    need = (need - 1) * it->stride + it->kernel;
  return need;
}

AudioEncoding Model::encode_audio(const AudioInput& a) const {
  const auto len = static_cast<std::int64_t>(a.signal.size());
  if (len < min_signal_length())
    throw std::invalid_argument("encode_audio: signal length " + std::to_string(len) +
                                " is below the receptive field " +
                                std::to_string(min_signal_length()));
  Tensor x = Tensor::from_data({len, 1}, a.signal);
  Tensor frames = conv1_(x);  // [T1,d]
  Tensor tokens = concat_rows({cls_a_emb_, frames});
  for (const auto& block : trm1_) tokens = block(tokens);
  tokens = trm1_out_ln_(tokens);
  const std::int64_t t1 = frames.rows();
  Tensor hi_res = slice_rows(tokens, 1, t1 + 1);
  Tensor cls_ctx = slice_rows(tokens, 0, 1);  // contextualized CLS row skips conv2
  Tensor lo = conv2_(hi_res);
  Tensor tokens2 = concat_rows({cls_ctx, lo});
  for (const auto& block : trm2_) tokens2 = block(tokens2);
  tokens2 = trm2_out_ln_(tokens2);
  return {hi_res, tokens2, row(tokens2, 0)};
}

ImageEncoding Model::encode_image(const ImageInput& v) const {
  validate_image(v, cfg_.roi_feature_dim);
  const std::int64_t r = v.roi_features.rows;
  std::vector<double> pos(static_cast<std::size_t>(r) * 5);
  for (std::int64_t i = 0; i < r; ++i) {
    double x1 = v.boxes.at(i, 0), y1 = v.boxes.at(i, 1);
    double x2 = v.boxes.at(i, 2), y2 = v.boxes.at(i, 3);
    pos[i * 5 + 0] = x1;
    pos[i * 5 + 1] = y1;
    pos[i * 5 + 2] = x2;
    pos[i * 5 + 3] = y2;
    pos[i * 5 + 4] = (x2 - x1) * (y2 - y1);
  }
  Tensor roi = Tensor::from_mat(v.roi_features);
  Tensor pos_t = Tensor::from_data({r, 5}, std::move(pos));
  Tensor mixed = add(matmul_nt(roi, roi_proj_w_), matmul_nt(pos_t, pos_proj_w_));
  Tensor tokens = concat_rows({cls_i_emb_, img_input_ln_(mixed)});
  for (const auto& block : img_trm_) tokens = block(tokens);
  tokens = img_out_ln_(tokens);
  return {tokens, row(tokens, 0)};
}

std::pair<Tensor, Tensor> Model::run_cross_modal(const Tensor& audio_tokens,
                                                 const Tensor& image_tokens) const {
  ++xmodal_passes_;
  Tensor a = audio_tokens, v = image_tokens;
  for (const auto& block : xtrm_) {
    auto [a2, v2] = block(a, v);
    a = a2;
    v = v2;
  }
  return {fused_a_ln_(a), fused_v_ln_(v)};
}

Tensor Model::fine_score(const AudioEncoding& a, const ImageEncoding& v) const {
  if (a.cls_and_lo_res.cols() != cfg_.model_dim || v.tokens.cols() != cfg_.model_dim)
    throw std::invalid_argument("fine_score: encoding width does not match this model");
  auto [fused_a, fused_v] = run_cross_modal(a.cls_and_lo_res, v.tokens);
  Tensor joint = concat_cols({slice_rows(fused_a, 0, 1), slice_rows(fused_v, 0, 1)});
  for (std::size_t i = 0; i < head_.size(); ++i) {
    joint = head_[i](joint);
    if (i + 1 < head_.size()) joint = gelu(joint);
  }
  return reshape(joint, {1});
}

namespace {
constexpr std::string_view kCheckpointMagic = "CTFRCKPT";
constexpr std::uint64_t kCheckpointVersion = 1;
}  // namespace

void Model::save(const std::filesystem::path& path) const {
  auto os = io::open_output(path);
  io::write_magic(os, kCheckpointMagic);
  io::write_u64(os, kCheckpointVersion);
  io::write_string(os, to_json(cfg_));
  io::write_u64(os, ps_.items().size());
  for (const auto& item : ps_.items()) {
    io::write_string(os, item.name);
    const auto& shape = item.tensor.shape();
    io::write_u64(os, shape.size());
    for (auto d : shape) io::write_u64(os, static_cast<std::uint64_t>(d));
    io::write_f64s(os, item.tensor.data());
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
  auto is = io::open_input(path);
  io::expect_magic(is, kCheckpointMagic, "checkpoint");
  if (auto version = io::read_u64(is); version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(io::read_string(is));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: embedded config invalid: ") + e.what());
  }
  Model model(cfg, /*seed=*/0);
  const std::uint64_t count = io::read_u64(is);
  if (count != model.ps_.items().size())
    throw FormatError("checkpoint: parameter count does not match the config");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = io::read_string(is);
    const std::uint64_t rank = io::read_u64(is);
    Shape shape(rank);
    std::int64_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::int64_t>(io::read_u64(is));
      n *= d;
    }
    if (!model.ps_.contains(name))
      throw FormatError("checkpoint: unknown parameter " + name);
    Tensor t = model.ps_.find(name);
    if (t.shape() != shape)
      throw FormatError("checkpoint: shape mismatch for parameter " + name);
    io::read_f64s(is, t.mutable_data().data(), static_cast<std::size_t>(n));
  }
  return model;
}

}  // namespace ctfr
