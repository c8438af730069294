#include "ctfr/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "ctfr/errors.hpp"
#include "ctfr/io_util.hpp"
#include "ctfr/rng.hpp"
#include "json.hpp"

namespace ctfr {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 2)
    throw std::invalid_argument("train config: batch_size must be >= 2 for contrastive signal");
  if (!(peak_lr > 0)) throw std::invalid_argument("train config: peak_lr must be positive");
  if (!(warmup_fraction > 0.0) || !(warmup_fraction < 1.0))
    throw std::invalid_argument("train config: warmup_fraction must be in (0, 1)");
  if (!(beta1 >= 0.0) || beta1 >= 1.0 || !(beta2 >= 0.0) || beta2 >= 1.0)
    throw std::invalid_argument("train config: betas must be in [0, 1)");
  if (!(adam_eps > 0)) throw std::invalid_argument("train config: adam_eps must be positive");
  if (weight_decay < 0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (!(clip_norm > 0)) throw std::invalid_argument("train config: clip_norm must be positive");
  loss.validate();
}

std::string to_json(const TrainConfig& cfg) {
  nlohmann::json j{{"epochs", cfg.epochs},
                   {"batch_size", cfg.batch_size},
                   {"peak_lr", cfg.peak_lr},
                   {"warmup_fraction", cfg.warmup_fraction},
                   {"beta1", cfg.beta1},
                   {"beta2", cfg.beta2},
                   {"adam_eps", cfg.adam_eps},
                   {"weight_decay", cfg.weight_decay},
                   {"clip_norm", cfg.clip_norm},
                   {"lambda_c", cfg.loss.lambda_c},
                   {"lambda_f", cfg.loss.lambda_f},
                   {"delta", cfg.loss.delta},
                   {"seed", cfg.seed}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("train config: not valid JSON");
  if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
  TrainConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.peak_lr = j.value("peak_lr", cfg.peak_lr);
    cfg.warmup_fraction = j.value("warmup_fraction", cfg.warmup_fraction);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
    cfg.loss.lambda_c = j.value("lambda_c", cfg.loss.lambda_c);
    cfg.loss.lambda_f = j.value("lambda_f", cfg.loss.lambda_f);
    cfg.loss.delta = j.value("delta", cfg.loss.delta);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

double lr_at(std::int64_t step, std::int64_t total_steps, double peak_lr,
             double warmup_fraction) {
  if (total_steps < 1) throw std::invalid_argument("lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("lr_at: step must lie in [0, total_steps]");
  const auto warmup_steps = static_cast<std::int64_t>(
      std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step <= warmup_steps)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows) {
  auto f = io::open_output(path);
  f << "step,lr,coarse_loss,fine_loss,total_loss\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.step), r.lr, r.coarse_loss, r.fine_loss,
                  r.total_loss);
    f << buf;
  }
}

double global_grad_norm(const std::vector<std::vector<double>>& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  return std::sqrt(sq);
}

void clip_gradients(std::vector<std::vector<double>>& grads, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  const double norm = global_grad_norm(grads);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (auto& g : grads)
    for (double& x : g) x *= scale;
}

MomentOptimizer::MomentOptimizer(const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), weight_decay_(cfg.weight_decay) {
  cfg.validate();
}

void MomentOptimizer::step(std::span<const NamedParam> params,
                           const std::vector<std::vector<double>>& grads, double lr) {
  if (params.size() != grads.size())
    throw std::invalid_argument("optimizer step: one gradient per parameter required");
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& param = params[p];
    const auto& g = grads[p];
    Tensor handle = param.tensor;  // shared-node handle; edits reach the model
    auto& data = handle.mutable_data();
    if (g.size() != data.size())
      throw std::invalid_argument("optimizer step: gradient shape mismatch for '" + param.name +
                                  "'");
    auto& [m, v] = moments_[param.name];
    if (m.empty()) {
      m.assign(data.size(), 0.0);
      v.assign(data.size(), 0.0);
    }
    const double wd = param.decay ? weight_decay_ : 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("optimizer step: non-finite gradient in parameter '" +
                                 param.name + "' at element " + std::to_string(i));
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      data[i] -= lr * (m[i] / (std::sqrt(v[i]) + eps_) + wd * data[i]);
    }
  }
}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

// Loss values for the history record, computed outside the autodiff graph.
double bidirectional_value(const Mat& scores, ScoreKind kind, const Mask& mask, double delta) {
  ScoreMatrix sm{scores, kind};
  return masked_infonce(sm, mask, delta, Direction::audio_to_image) +
         masked_infonce(sm, mask, delta, Direction::image_to_audio);
}

}  // namespace

TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  auto train_captions = corpus.caption_indices_of(Split::train);
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  if (train_captions.size() < 2 * b)
    throw std::invalid_argument("train: need at least two batches of training captions, have " +
                                std::to_string(train_captions.size()));

  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>(train_captions.size() / b);
  const std::int64_t total_steps = cfg.epochs * steps_per_epoch;

  auto params = model.params().items();
  std::vector<Tensor> param_tensors = model.params().tensors();
  MomentOptimizer optimizer(cfg);
  CounterRng rng(cfg.seed);

  TrainResult result;
  result.steps_per_epoch = steps_per_epoch;
  result.total_steps = total_steps;
  result.history.reserve(static_cast<std::size_t>(total_steps));

  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = train_captions;
    rng.fork("epoch:" + std::to_string(epoch)).shuffle(order);
    for (std::int64_t batch = 0; batch < steps_per_epoch; ++batch) {
      std::vector<std::string> batch_caption_ids;
      std::vector<std::string> batch_image_ids;
      std::vector<AudioEncoding> audio_enc;
      std::vector<ImageEncoding> image_enc;
      std::vector<Tensor> audio_cls, image_cls;
      for (std::size_t i = 0; i < b; ++i) {
        const auto cap = order[static_cast<std::size_t>(batch) * b + i];
        batch_caption_ids.push_back(corpus.caption_ids[cap]);
        batch_image_ids.push_back(corpus.caption_image_ids[cap]);
        const auto img = corpus.image_index(corpus.caption_image_ids[cap]);
        audio_enc.push_back(model.encode_audio(corpus.captions[cap]));
        image_enc.push_back(model.encode_image(corpus.images[img]));
        audio_cls.push_back(audio_enc.back().cls_a);
        image_cls.push_back(image_enc.back().cls_i);
      }

      auto mask = build_mask(batch_image_ids);
      auto coarse = coarse_score_matrix(stack_rows(audio_cls), stack_rows(image_cls));
      auto fine = fine_score_matrix(model, audio_enc, image_enc);
      if (!all_finite(coarse) || !all_finite(fine))
        throw std::runtime_error("train: non-finite scores at step " + std::to_string(step + 1) +
                                 "; batch captions: " + join_ids(batch_caption_ids));

      auto loss = combined_loss(coarse, fine, mask, cfg.loss);
      const double total = loss.item();
      if (!std::isfinite(total))
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step + 1) +
                                 "; batch captions: " + join_ids(batch_caption_ids));

      auto grads = grad(loss, param_tensors);
      clip_gradients(grads, cfg.clip_norm);
      ++step;
      const double lr = lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_fraction);
      optimizer.step(params, grads, lr);

      HistoryRow row;
      row.step = step;
      row.lr = lr;
      row.coarse_loss = bidirectional_value(coarse.to_mat(), ScoreKind::coarse, mask,
                                            cfg.loss.delta);
      row.fine_loss = bidirectional_value(fine.to_mat(), ScoreKind::fine, mask, cfg.loss.delta);
      row.total_loss = total;
      result.history.push_back(row);
    }
  }
  return result;
}

}  // namespace ctfr
