#include "ctfr/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ctfr {

Batch Batch::from_examples(std::vector<PairedExample> examples) {
  if (examples.empty()) throw std::invalid_argument("Batch: needs at least one example");
  Batch b;
  b.caption_ids.reserve(examples.size());
  b.image_ids.reserve(examples.size());
  for (const auto& e : examples) {
    b.caption_ids.push_back(e.caption_id);
    b.image_ids.push_back(e.image_id);
  }
  b.examples = std::move(examples);
  return b;
}

Mask build_mask(const std::vector<std::string>& image_ids) {
  const auto b = static_cast<std::int64_t>(image_ids.size());
  if (b < 1) throw std::invalid_argument("build_mask: empty batch");
  Mask m;
  m.b = b;
  m.bits.assign(static_cast<std::size_t>(b * b), 0);
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < b; ++j)
      m.bits[static_cast<std::size_t>(i * b + j)] = image_ids[static_cast<std::size_t>(i)] !=
                                                    image_ids[static_cast<std::size_t>(j)];
  return m;
}

void LossWeights::validate() const {
  if (lambda_c < 0 || lambda_f < 0)
    throw std::invalid_argument("LossWeights: lambdas must be >= 0");
  if (lambda_c == 0 && lambda_f == 0)
    throw std::invalid_argument("LossWeights: at least one lambda must be positive");
  if (!std::isfinite(delta) || delta < 0)
    throw std::invalid_argument("LossWeights: delta must be finite and >= 0");
}

Tensor coarse_score_matrix(const Tensor& audio_cls, const Tensor& image_cls) {
  if (audio_cls.rank() != 2 || image_cls.rank() != 2 || audio_cls.cols() != image_cls.cols())
    throw std::invalid_argument("coarse_score_matrix: CLS matrices must share width");
  return matmul_nt(audio_cls, image_cls);
}

ScoreMatrix coarse_score_matrix(const Mat& audio_cls, const Mat& image_cls) {
  NoGradGuard ng;
  Tensor t = coarse_score_matrix(Tensor::from_mat(audio_cls), Tensor::from_mat(image_cls));
  return {t.to_mat(), ScoreKind::coarse};
}

Tensor fine_score_matrix(const Model& model, std::span<const AudioEncoding> audio,
                         std::span<const ImageEncoding> image) {
  if (audio.empty() || audio.size() != image.size())
    throw std::invalid_argument("fine_score_matrix: need equal nonempty encoding lists");
  const auto b = static_cast<std::int64_t>(audio.size());
  std::vector<Tensor> entries;
  entries.reserve(static_cast<std::size_t>(b * b));
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < b; ++j)
      entries.push_back(model.fine_score(audio[static_cast<std::size_t>(i)],
                                         image[static_cast<std::size_t>(j)]));
  return matrix_from_scalars(b, b, entries);
}

ScoreMatrix fine_score_matrix_values(const Model& model, std::span<const AudioEncoding> audio,
                                     std::span<const ImageEncoding> image) {
  NoGradGuard ng;
  Tensor t = fine_score_matrix(model, audio, image);
  return {t.to_mat(), ScoreKind::fine};
}

namespace {

struct InfonceTerm {
  double log_den = 0;  // log-sum-exp of the kept terms, in shifted space
  double log_num = 0;  // S_ii - delta - shift, exact
  double shift = 0;    // the subtracted max
  double num = 0;      // e^{S_ii - delta - shift}
  double den = 0;      // num + masked negatives, in shifted space
};

// Stable per-anchor pieces for one direction. For anchor i the kept terms
// are {S_ii - delta} plus {S_at(i,j) : mask == 1} where at() follows rows
// (audio_to_image) or columns (image_to_audio).
InfonceTerm infonce_term(const double* s, const Mask& mask, double delta, Direction dir,
                         std::int64_t i) {
  const std::int64_t b = mask.b;
  auto score = [&](std::int64_t j) {
    return dir == Direction::audio_to_image ? s[i * b + j] : s[j * b + i];
  };
  auto kept = [&](std::int64_t j) {
    return dir == Direction::audio_to_image ? mask.at(i, j) : mask.at(j, i);
  };
  InfonceTerm t;
  t.shift = score(i) - delta;
  for (std::int64_t j = 0; j < b; ++j)
    if (kept(j)) t.shift = std::max(t.shift, score(j));
  t.log_num = score(i) - delta - t.shift;
  t.num = std::exp(t.log_num);
  t.den = t.num;
  for (std::int64_t j = 0; j < b; ++j)
    if (kept(j)) t.den += std::exp(score(j) - t.shift);
  t.log_den = std::log(t.den);
  return t;
}

}  // namespace

Tensor masked_infonce(const Tensor& scores, const Mask& mask, double delta, Direction dir) {
  if (scores.rank() != 2 || scores.rows() != scores.cols())
    throw std::invalid_argument("masked_infonce: scores must be a square matrix");
  if (scores.rows() != mask.b)
    throw std::invalid_argument("masked_infonce: mask size does not match scores");
  if (!std::isfinite(delta)) throw std::invalid_argument("masked_infonce: delta must be finite");
  if (!all_finite(scores))
    throw std::invalid_argument("masked_infonce: scores contain a non-finite value");
  const std::int64_t b = mask.b;
  const double* s = scores.data().data();
  double total = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    auto t = infonce_term(s, mask, delta, dir, i);
    // -log(num/den) in shifted space: log(den) - (S_ii - delta - shift)
    total += t.log_den - t.log_num;
  }
  const double loss = total / static_cast<double>(b);

  auto* ps = scores.node();
  auto backward = [ps, mask, delta, dir, b](detail::TensorNode& self) {
    if (!ps->requires_grad) return;
    ps->ensure_grad();
    const double g = self.grad[0] / static_cast<double>(b);
    const double* sv = ps->data.data();
    for (std::int64_t i = 0; i < b; ++i) {
      auto t = infonce_term(sv, mask, delta, dir, i);
      const bool rows = dir == Direction::audio_to_image;
      // d/dS_ii = -(1/B) (1 - num/den); diagonal is never in the mask.
      ps->grad[i * b + i] += -g * (1.0 - t.num / t.den);
      for (std::int64_t j = 0; j < b; ++j) {
        const std::uint8_t kept = rows ? mask.at(i, j) : mask.at(j, i);
        if (!kept) continue;
        const double p = std::exp((rows ? sv[i * b + j] : sv[j * b + i]) - t.shift) / t.den;
        ps->grad[rows ? i * b + j : j * b + i] += g * p;
      }
    }
  };
  return detail::make_op({1}, {loss}, {scores}, std::move(backward));
}

double masked_infonce(const ScoreMatrix& scores, const Mask& mask, double delta, Direction dir) {
  NoGradGuard ng;
  return masked_infonce(Tensor::from_mat(scores.values), mask, delta, dir).item();
}

Tensor combined_loss(const Tensor& coarse, const Tensor& fine, const Mask& mask,
                     const LossWeights& weights) {
  weights.validate();
  Tensor total;
  if (weights.lambda_c > 0) {
    Tensor lc = add(masked_infonce(coarse, mask, weights.delta, Direction::audio_to_image),
                    masked_infonce(coarse, mask, weights.delta, Direction::image_to_audio));
    total = scale(lc, weights.lambda_c);
  }
  if (weights.lambda_f > 0) {
    Tensor lf = add(masked_infonce(fine, mask, weights.delta, Direction::audio_to_image),
                    masked_infonce(fine, mask, weights.delta, Direction::image_to_audio));
    lf = scale(lf, weights.lambda_f);
    total = total.defined() ? add(total, lf) : lf;
  }
  return total;
}

}  // namespace ctfr
