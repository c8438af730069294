#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ctfr/model.hpp"

namespace ctfr {

// Ground truth for one retrieval direction: each query id maps to the set of
// target ids that count as correct. Multiple golds arise naturally when one
// image has several captions; a query scores a hit at k when ANY gold id
// appears in its top k.
using GoldMap = std::map<std::string, std::set<std::string>>;

// Ranked target ids per query id, best first.
using Rankings = std::map<std::string, std::vector<std::string>>;

// Fraction of gold queries whose top-k ranking contains at least one gold id,
// for each requested k. Every gold query must be present in `rankings`, and
// every gold set must be nonempty.
std::vector<double> recall_at_k(const Rankings& rankings, const GoldMap& gold,
                                std::span<const std::int64_t> ks);

struct DirectionMetrics {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
};

// Arithmetic mean per cutoff, mirroring how bidirectional results are
// reported as a single number.
DirectionMetrics average_directions(const DirectionMetrics& a, const DirectionMetrics& b);

struct MetricReport {
  DirectionMetrics audio_to_image;
  DirectionMetrics image_to_audio;
  DirectionMetrics averaged;
  std::int64_t num_queries = 0;  // total across both directions
  std::string mode;              // "coarse" | "fine" | "ctf"
  std::int64_t k_c = 0;          // shortlist size used (0 when mode is not ctf)
};

// Fixed-key JSON document for machine diffing.
std::string to_json(const MetricReport& report);

// Everything needed to score one encoded evaluation split: captions (queries
// in one direction, targets in the other) with their owning image ids, and
// the image side. Encodings are paired positionally with the id vectors.
struct EvalInputs {
  std::vector<std::string> caption_ids;
  std::vector<std::string> caption_image_ids;  // parallel to caption_ids
  std::vector<AudioEncoding> caption_encodings;
  std::vector<std::string> image_ids;
  std::vector<ImageEncoding> image_encodings;

  void validate() const;
};

// Runs both retrieval directions over the split with the requested mode and
// computes R@1/5/10. `k_c` is only consulted for ctf mode, where the ranking
// depth is min(10, k_c, N); other modes rank to depth min(10, N).
MetricReport evaluate_retrieval(Model& model, const EvalInputs& inputs, const std::string& mode,
                                std::int64_t k_c);

}  // namespace ctfr
