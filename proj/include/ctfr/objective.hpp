#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctfr/mat.hpp"
#include "ctfr/model.hpp"
#include "ctfr/tensor.hpp"

namespace ctfr {

struct PairedExample {
  std::string caption_id;
  std::string image_id;
  AudioInput audio;
  ImageInput image;
};

// One training mini-batch; example i pairs caption i with image i, so the
// diagonal of any score matrix over the batch holds the matched pairs.
struct Batch {
  std::vector<PairedExample> examples;
  std::vector<std::string> caption_ids;
  std::vector<std::string> image_ids;

  static Batch from_examples(std::vector<PairedExample> examples);
};

enum class ScoreKind { coarse, fine };

struct ScoreMatrix {
  Mat values;  // [B,B], entry (i,j) = similarity of caption i and image j
  ScoreKind kind = ScoreKind::coarse;
};

// 0/1 matrix over the batch; entry (i,j) == 1 keeps image j as a usable
// negative for caption i, 0 masks it out (the diagonal and any slot whose
// image id equals caption i's own image).
struct Mask {
  std::int64_t b = 0;
  std::vector<std::uint8_t> bits;  // row-major [B,B]

  std::uint8_t at(std::int64_t i, std::int64_t j) const {
    return bits[static_cast<std::size_t>(i * b + j)];
  }
};

Mask build_mask(const std::vector<std::string>& image_ids);

struct LossWeights {
  double lambda_c = 0.1;
  double lambda_f = 1.0;
  double delta = 1.0;  // margin subtracted from the matched-pair score

  void validate() const;  // lambdas >= 0, not both zero, delta finite
};

enum class Direction { audio_to_image, image_to_audio };

// All matched-pair coarse similarities at once: audio_cls · image_cls^T.
Tensor coarse_score_matrix(const Tensor& audio_cls, const Tensor& image_cls);
ScoreMatrix coarse_score_matrix(const Mat& audio_cls, const Mat& image_cls);

// Every caption scored against every image through the fusion stack: B*B
// cross-modal passes, entry (i,j) = fine score of caption i with image j.
Tensor fine_score_matrix(const Model& model, std::span<const AudioEncoding> audio,
                         std::span<const ImageEncoding> image);
ScoreMatrix fine_score_matrix_values(const Model& model, std::span<const AudioEncoding> audio,
                                     std::span<const ImageEncoding> image);

// Contrastive loss over one direction of the score matrix:
//   -(1/B) sum_i log[ e^{S_ii - delta} / (e^{S_ii - delta} + sum_j M_ij e^{S_ij}) ]
// image_to_audio swaps row/column roles (negatives run down column i). The
// log-sum-exp is stabilized by subtracting each term set's max. Throws
// std::invalid_argument on non-finite scores or size mismatches.
Tensor masked_infonce(const Tensor& scores, const Mask& mask, double delta, Direction dir);
double masked_infonce(const ScoreMatrix& scores, const Mask& mask, double delta, Direction dir);

// lambda_c * (Lc both directions) + lambda_f * (Lf both directions).
// Zero-weighted branches are omitted from the graph entirely, so their score
// matrices contribute neither value nor gradient.
Tensor combined_loss(const Tensor& coarse, const Tensor& fine, const Mask& mask,
                     const LossWeights& weights);

}  // namespace ctfr
