#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctfr/model.hpp"
#include "ctfr/nn.hpp"
#include "ctfr/objective.hpp"
#include "ctfr/synthetic.hpp"

namespace ctfr {

struct TrainConfig {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 8;
  double peak_lr = 1e-4;
  double warmup_fraction = 0.10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // global gradient norm ceiling
  LossWeights loss{0.1, 1.0, 1.0};
  std::uint64_t seed = 0;

  void validate() const;
};

std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);  // ConfigError on bad input

// Piecewise-linear schedule: 0 -> peak over the first ceil(warmup_fraction *
// total) steps, then peak -> 0 over the rest. Steps are 1-based during
// training; lr_at(0) == lr_at(total) == 0.
double lr_at(std::int64_t step, std::int64_t total_steps, double peak_lr,
             double warmup_fraction);

struct HistoryRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double coarse_loss = 0.0;
  double fine_loss = 0.0;
  double total_loss = 0.0;
};

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows);

// sqrt of the sum of squares over every gradient element.
double global_grad_norm(const std::vector<std::vector<double>>& grads);

// Scales all gradients by max_norm / norm when the global norm exceeds
// max_norm; otherwise leaves them bitwise untouched.
void clip_gradients(std::vector<std::vector<double>>& grads, double max_norm);

// Adam-shaped moment tracking without bias correction, plus decoupled weight
// decay applied only to parameters registered as decaying:
//   m <- b1 m + (1-b1) g ;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * (m / (sqrt(v) + eps) + wd * theta)
// Moments are keyed by parameter name, so update order never matters.
class MomentOptimizer {
 public:
  explicit MomentOptimizer(const TrainConfig& cfg);

  // One update over all parameters. `grads[i]` belongs to `params[i]`; a
  // non-finite gradient aborts with the parameter named.
  void step(std::span<const NamedParam> params, const std::vector<std::vector<double>>& grads,
            double lr);

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::map<std::string, std::pair<Vec, Vec>> moments_;  // name -> (m, v)
};

struct TrainResult {
  std::vector<HistoryRow> history;
  std::int64_t total_steps = 0;
  std::int64_t steps_per_epoch = 0;
};

// Optimizes the model on the corpus' train split: seeded shuffles each epoch,
// whole batches only (a short tail is dropped), per-batch coarse and fine
// score matrices with same-image masking, scheduled learning rate, gradient
// clipping, and one optimizer update per step. Aborts with the offending
// batch's caption ids if scores or loss turn non-finite.
TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& cfg);

}  // namespace ctfr
