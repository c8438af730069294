#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctfr/mat.hpp"
#include "ctfr/model.hpp"

namespace ctfr {

// Paired speech/image corpus generated from shared latent concepts: each
// image is a bag of concepts rendered as noisy projected region features, and
// each of its captions concatenates the concepts' waveform motifs in a random
// order plus noise. The pairing signal lives entirely in the shared concepts,
// so retrieval quality is verifiable without any real data.
struct CorpusConfig {
  std::int64_t num_images = 200;
  std::int64_t captions_per_image = 5;
  std::int64_t num_concepts = 16;
  // Four concepts over a 64-sample signal keeps each motif's length (16) a
  // multiple of the default audio encoder's total stride (4), so a motif
  // produces the same convolution features in every caption slot.
  std::int64_t concepts_per_image = 4;
  std::int64_t signal_len = 64;
  std::int64_t roi_count = 8;
  std::int64_t roi_feature_dim = 16;
  double noise_std = 0.05;
  std::uint64_t seed = 0;
  // Explicit train/dev/test image counts; when absent the split is the
  // deterministic 70/10/20 by image.
  std::optional<std::array<std::int64_t, 3>> split_counts;

  std::int64_t num_captions() const { return num_images * captions_per_image; }
  std::int64_t motif_len() const { return signal_len / concepts_per_image; }
  std::array<std::int64_t, 3> effective_split_counts() const;
  void validate() const;
};

std::string to_json(const CorpusConfig& cfg);
CorpusConfig corpus_config_from_json(const std::string& text);  // ConfigError on bad input

enum class Split { train = 0, dev = 1, test = 2 };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Corpus {
  CorpusConfig config;
  std::vector<std::string> image_ids;
  std::vector<ImageInput> images;       // parallel to image_ids
  std::vector<Split> image_splits;      // parallel to image_ids
  std::vector<std::string> caption_ids;
  std::vector<std::string> caption_image_ids;  // parallel to caption_ids
  std::vector<AudioInput> captions;            // parallel to caption_ids

  // Positions of the images / captions belonging to one split. A caption
  // inherits its image's split, so splits are disjoint by image.
  std::vector<std::size_t> image_indices_of(Split s) const;
  std::vector<std::size_t> caption_indices_of(Split s) const;
  std::size_t image_index(const std::string& image_id) const;  // throws on unknown id
};

// Ground-truth generation internals, exposed for oracle-style verification
// (e.g. nearest-neighbor matching in latent space).
struct CorpusLatents {
  Mat concept_vectors;  // [num_concepts, latent dim]
  Mat motifs;           // [num_concepts, motif_len]
  Mat roi_projection;   // [roi_feature_dim, latent dim]
  std::vector<std::vector<std::int64_t>> image_concepts;        // per image
  std::vector<std::vector<std::int64_t>> caption_concept_order; // per caption
};

// Latent vectors live in this many dimensions before projection to
// roi_feature_dim. Fixed so corpora are comparable across configs.
inline constexpr std::int64_t kLatentDim = 16;

Corpus generate_corpus(const CorpusConfig& cfg);
std::pair<Corpus, CorpusLatents> generate_corpus_with_latents(const CorpusConfig& cfg);

// Directory layout: manifest.json plus one raw little-endian float64 blob per
// array (images.f64, captions.f64, boxes.f64). Round-trips bit-exactly.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace ctfr
