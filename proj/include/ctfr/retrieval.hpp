#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctfr/mat.hpp"
#include "ctfr/model.hpp"

namespace ctfr {

enum class Modality { audio, image };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

// Cached dual-encoder summaries of the retrieval targets. Row i of
// `cls_matrix` is the summary vector of `target_ids[i]`; a coarse query is a
// single matrix-vector product against it. Immutable after build.
struct CoarseIndex {
  Modality modality = Modality::image;
  std::vector<std::string> target_ids;
  Mat cls_matrix;  // [N, d]

  std::int64_t size() const { return static_cast<std::int64_t>(target_ids.size()); }
  std::int64_t dim() const { return cls_matrix.cols; }
};

// Full encodings of the targets, kept for cross-modal rescoring. Exactly one
// of `audio` / `images` is populated, matching `modality`.
struct TargetStore {
  Modality modality = Modality::image;
  std::vector<std::string> ids;
  std::vector<AudioEncoding> audio;
  std::vector<ImageEncoding> images;

  std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
  void validate() const;
};

struct RetrievalResult {
  std::vector<std::pair<std::string, double>> ranked;  // best first
  double coarse_ms = 0.0;
  double fine_ms = 0.0;
  std::uint64_t xmodal_passes = 0;
  std::string mode;  // "coarse" | "fine" | "ctf"
};

// Builds the cached index from summary vectors (one row per target).
// Duplicate or missing ids and ragged rows are invalid.
CoarseIndex build_index(Modality modality, std::vector<std::string> ids, Mat cls_rows);
CoarseIndex build_index(const TargetStore& store);

// Scores every index row against the query summary vector and returns the
// top k (all N when k exceeds N). No cross-modal work: xmodal_passes == 0.
RetrievalResult coarse_retrieve(const Vec& query_cls, const CoarseIndex& index, std::int64_t k);

// Exhaustive cross-modal rescoring of every target: xmodal_passes == N.
RetrievalResult fine_retrieve(Model& model, const AudioEncoding& query, const TargetStore& store,
                              std::int64_t k);
RetrievalResult fine_retrieve(Model& model, const ImageEncoding& query, const TargetStore& store,
                              std::int64_t k);

// Two-stage retrieval: coarse shortlist of k_c candidates, cross-modal
// rescoring of the shortlist only. Requires k <= k_c; xmodal_passes ==
// min(k_c, N). With k_c >= N the ranking equals fine_retrieve exactly.
RetrievalResult ctf_retrieve(Model& model, const AudioEncoding& query, const CoarseIndex& index,
                             const TargetStore& store, std::int64_t k_c, std::int64_t k);
RetrievalResult ctf_retrieve(Model& model, const ImageEncoding& query, const CoarseIndex& index,
                             const TargetStore& store, std::int64_t k_c, std::int64_t k);

// Latency/pass-count comparison of the three modes over pre-encoded queries
// (encoding cost deliberately excluded: target and query features are cached
// ahead of time). Times are wall-clock milliseconds over repeats * queries
// runs per mode.
struct ModeBench {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  std::uint64_t xmodal_passes_per_query = 0;
};

struct BenchReport {
  ModeBench coarse, fine, ctf;
  std::int64_t num_targets = 0;
  std::int64_t num_queries = 0;
  std::int64_t k = 0;
  std::int64_t k_c = 0;
  std::int64_t repeats = 0;
};

BenchReport bench(Model& model, std::span<const AudioEncoding> queries, const CoarseIndex& index,
                  const TargetStore& store, std::int64_t k_c, std::int64_t k,
                  std::int64_t repeats);

// --- On-disk formats -------------------------------------------------------

// Index file: magic, version, modality, N, d, ids, row-major float64 rows.
// Round-trips bit-exactly.
void write_index(const std::filesystem::path& path, const CoarseIndex& index);
CoarseIndex read_index(const std::filesystem::path& path);

// Encoding sets as produced by batch-encoding a corpus split. Audio entries
// store the summary+low-res token matrix, image entries the fused token
// matrix; either is all that rescoring needs. Round-trips bit-exactly.
struct EncodedAudioSet {
  std::vector<std::string> ids;
  std::vector<AudioEncoding> encodings;
};

struct EncodedImageSet {
  std::vector<std::string> ids;
  std::vector<ImageEncoding> encodings;
};

void write_audio_encodings(const std::filesystem::path& path, const EncodedAudioSet& set);
EncodedAudioSet read_audio_encodings(const std::filesystem::path& path);
void write_image_encodings(const std::filesystem::path& path, const EncodedImageSet& set);
EncodedImageSet read_image_encodings(const std::filesystem::path& path);

TargetStore store_from(const EncodedAudioSet& set);
TargetStore store_from(const EncodedImageSet& set);

}  // namespace ctfr
